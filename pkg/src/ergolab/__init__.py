"""Numerical laboratory for degenerate diffusions with unbounded coefficients.

Simulates hypoelliptic SDEs (Heisenberg, Grushin, Ornstein-Uhlenbeck and a
bounded variant), verifies Lyapunov drift conditions for their generators,
estimates invariant measures empirically, and computes the ergodic constant
by three independent Monte Carlo estimators cross-checked against analytic
calibration oracles.
"""

__version__ = "0.1.0"

from .backends import BACKEND

__all__ = ["BACKEND", "__version__"]
