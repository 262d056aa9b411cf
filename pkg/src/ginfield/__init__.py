"""Ginibre eigenvalue simulation and the centered log-modulus field.

Sampling backends for the complex Ginibre ensemble, finite-N kernel
evaluation, the recentered log-characteristic-polynomial field with its
extreme-value and multiplicative-chaos observables, and exact moment
formulas used to cross-check the Monte Carlo routes.
"""

__version__ = "0.1.0"
