"""Piecewise-smooth min/max surrogates and their partial derivatives.

Inside the blend band ``|a - b| < kappa`` both surrogates use
``h = 1/2 + (a - b) / (2 kappa)``::

    smin = a (1 - h) + h b - kappa h (1 - h)     d/da = 1 - h, d/db = h
    smax = b (1 - h) + h a + kappa h (1 - h)     d/da = h,     d/db = 1 - h

The partials above are the exact derivatives of the blend polynomials (the
terms coming through ``h`` cancel), so the surrogates are C1 for kappa > 0.
With ``kappa == 0`` they reduce to exact min/max and the gradient is the
one-hot selector, ties going to the first argument.
"""

import numpy as np

from . import kernels


def _check_gain(kappa):
    kappa = float(kappa)
    if not kappa >= 0.0:
        raise ValueError(f"smoothing gain must be >= 0, got {kappa!r}")
    return kappa


def smin(a, b, kappa=0.0):
    """Smoothed minimum of ``a`` and ``b``; scalars or broadcastable arrays."""
    val = kernels.smooth_eval(a, b, _check_gain(kappa), True)[0]
    return val.item() if val.ndim == 0 else val


def smax(a, b, kappa=0.0):
    """Smoothed maximum of ``a`` and ``b``."""
    val = kernels.smooth_eval(a, b, _check_gain(kappa), False)[0]
    return val.item() if val.ndim == 0 else val


def smin_grad(a, b, kappa=0.0):
    """Return ``(d smin / da, d smin / db)``."""
    _, ga, gb = kernels.smooth_eval(a, b, _check_gain(kappa), True)
    if ga.ndim == 0:
        return ga.item(), gb.item()
    return ga, gb


def smax_grad(a, b, kappa=0.0):
    """Return ``(d smax / da, d smax / db)``."""
    _, ga, gb = kernels.smooth_eval(a, b, _check_gain(kappa), False)
    if ga.ndim == 0:
        return ga.item(), gb.item()
    return ga, gb


def chi(op, a, b, kappa=0.0):
    """Value and partials of the combiner used by ``op`` ('min' or 'max')."""
    if op not in ("min", "max"):
        raise ValueError(f"unknown combiner {op!r}")
    return kernels.smooth_eval(np.asarray(a, dtype=float),
                               np.asarray(b, dtype=float),
                               _check_gain(kappa), op == "min")
