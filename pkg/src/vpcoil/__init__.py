"""Optimal coil-current control of a Vlasov-Poisson plasma."""
