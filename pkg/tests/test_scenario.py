import numpy as np
import pytest

from vpcoil.errors import ConfigurationError, ScenarioParseError
from vpcoil.scenario import default_scenario_path, dump_scenario, load_scenario, parse_scenario

SMALL = """\
[coils]
file = builtin:default_coils.txt

[initial]
amplitude = 20.0
center_v = 0.3 0.0 0.0
radius_x = 0.5
radius_v = 0.5
resolution = 2

[target]
mode = reference
reference_control = 0.2 -0.3 0.1 0.4 -0.2 0.3

[control]
T = 1.0
intervals = 2
lambda = 1.0
lower = -0.15
upper = 0.15

[discretization]
steps = 8
"""


def line_of(text, prefix):
    return next(i for i, ln in enumerate(text.splitlines(), 1) if ln.startswith(prefix))


def edit(text, old, new):
    assert old in text
    return text.replace(old, new)


def test_parse_small():
    sc = parse_scenario(SMALL)
    assert sc.resolution == 2 and sc.intervals == 2 and sc.steps == 8
    assert sc.reference_control == (0.2, -0.3, 0.1, 0.4, -0.2, 0.3)
    assert sc.eps is None and sc.solver == "pgd"
    assert sc.coil_path().exists()
    np.testing.assert_array_equal(sc.grid().values, np.zeros((3, 2)))


def test_missing_required_key():
    with pytest.raises(ScenarioParseError, match="missing required key 'T' in \\[control\\]") as exc:
        parse_scenario(edit(SMALL, "T = 1.0\n", ""))
    assert exc.value.lineno == line_of(SMALL, "[control]")


def test_bounds_must_bracket_zero():
    with pytest.raises(ScenarioParseError, match="a_i <= 0 <= b_i") as exc:
        parse_scenario(edit(SMALL, "lower = -0.15", "lower = 0.05"))
    assert exc.value.lineno == line_of(SMALL, "lower")


def test_unknown_key_and_section():
    with pytest.raises(ScenarioParseError, match="unknown key 'colour' in \\[coils\\]") as exc:
        parse_scenario(edit(SMALL, "[coils]\n", "[coils]\ncolour = red\n"))
    assert exc.value.lineno == 2
    with pytest.raises(ScenarioParseError, match="unknown section \\[extras\\]"):
        parse_scenario(SMALL + "\n[extras]\nx = 1\n")


def test_bad_values():
    with pytest.raises(ScenarioParseError, match="bad value for 'resolution'"):
        parse_scenario(edit(SMALL, "resolution = 2", "resolution = two"))
    with pytest.raises(ScenarioParseError, match="multiple of the control intervals"):
        parse_scenario(edit(SMALL, "steps = 8", "steps = 7"))
    with pytest.raises(ScenarioParseError, match="target mode"):
        parse_scenario(edit(SMALL, "mode = reference", "mode = guess"))
    with pytest.raises(ScenarioParseError, match="cannot load coil file"):
        parse_scenario(edit(SMALL, "builtin:default_coils.txt", "no_such_file.txt"))
    with pytest.raises(ScenarioParseError, match="outside the bounds"):
        parse_scenario(edit(SMALL, "upper = 0.15\n", "upper = 0.15\ninitial = 0.3\n"))


def test_round_trip(tmp_path):
    for sc in (parse_scenario(SMALL), load_scenario(default_scenario_path())):
        text = dump_scenario(sc)
        path = tmp_path / "s.ini"
        path.write_text(text)
        again = load_scenario(path)
        assert again == sc
        assert dump_scenario(again) == text


def test_load_errors_name_the_file(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text(edit(SMALL, "T = 1.0", "T = -1.0"))
    with pytest.raises(ScenarioParseError) as exc:
        load_scenario(path)
    assert str(exc.value).startswith(f"{path}:")
    with pytest.raises(ConfigurationError):
        load_scenario(tmp_path / "missing.ini")


def test_relative_coil_file(tmp_path):
    src = default_scenario_path().parent / "default_coils.txt"
    (tmp_path / "coils.txt").write_text(src.read_text())
    path = tmp_path / "s.ini"
    path.write_text(edit(SMALL, "builtin:default_coils.txt", "coils.txt"))
    sc = load_scenario(path)
    assert sc.coil_path() == tmp_path / "coils.txt"
    assert sc.fields().n == 3
