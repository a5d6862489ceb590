"""Patrol deterrence analysis: GPS rasterization, nested logistic deterrence
models, a ground-truth simulator and a penalized-spline GAM."""

__version__ = "0.1.0"
