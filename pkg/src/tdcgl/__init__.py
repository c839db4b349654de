"""Simulate the 2+1D complex Ginzburg-Landau equation and infer its terms from modulus data."""
