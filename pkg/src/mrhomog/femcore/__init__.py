"""Finite element core: quadrature, spaces, forms, constraints, solvers."""
