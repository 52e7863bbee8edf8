"""Brute-force reference implementations used by the test-suite.

Nothing here imports from the rest of the package: formulas are plain
tuples, windows are resolved locally and the CW equations are integrated
directly. Slow on purpose.

Tuple formulas::

    ("p", i)                       margin row i of the input array
    ("not", f)
    ("and", f, g)   ("or", f, g)   ("implies", f, g)   ("iff", f, g)   ("xor", f, g)
    ("until", f, g)
    ("ev", (a, b), f, interest)    ("alw", (a, b), f, interest)

``interest`` is "before" or "after"; ``(a, b)`` are horizon fractions.
"""

import itertools
import math

import numpy as np

SIDEREAL_MEAN_MOTION = 2.0 * math.pi / 86164.0905


def running_extremum(values, kind):
    """Plain scan: out[k] = min/max(values[0..k])."""
    out = []
    best = None
    for v in values:
        if best is None:
            best = v
        elif kind == "min":
            best = v if v < best else best
        elif kind == "max":
            best = v if v > best else best
        else:
            raise ValueError(kind)
        out.append(best)
    return out


def window_indices(a, b, n):
    lo = int(math.floor(a * (n - 1) + 0.5))
    hi = int(math.floor(b * (n - 1) + 0.5))
    return lo, hi


def _steps(window, k, n, interest, at_root):
    ka, kb = window_indices(window[0], window[1], n)
    if at_root:
        return range(ka, kb + 1)
    c = min(max(k, ka), kb)
    if interest == "after":
        return range(c, kb + 1)
    return range(ka, c + 1)


def _truth(f, margins, k, at_root=False):
    n = margins.shape[1]
    op = f[0]
    if op == "p":
        return bool(margins[f[1], k] > 0)
    if op == "not":
        return not _truth(f[1], margins, k)
    if op in ("and", "or", "implies", "iff", "xor"):
        a = _truth(f[1], margins, k)
        b = _truth(f[2], margins, k)
        return {"and": a and b, "or": a or b, "implies": (not a) or b,
                "iff": a == b, "xor": a != b}[op]
    if op == "until":
        # psi at some j in range, phi at every step up to and including j
        steps = range(0, n) if at_root else range(0, k + 1)
        return any(_truth(f[2], margins, j)
                   and all(_truth(f[1], margins, i) for i in range(0, j + 1))
                   for j in steps)
    if op in ("ev", "alw"):
        _, window, child, interest = f
        vals = [_truth(child, margins, j)
                for j in _steps(window, k, n, interest, at_root)]
        return any(vals) if op == "ev" else all(vals)
    raise ValueError(f"unknown operator {op!r}")


def quantifier_eval(formula, margins):
    """Boolean verdict of a tuple formula by direct enumeration.

    ``margins`` has one row per predicate and one column per step. The
    outermost operator quantifies over its whole window.
    """
    margins = np.asarray(margins, dtype=float)
    return _truth(formula, margins, margins.shape[1] - 1, at_root=True)


def truth_table(formula, n_preds):
    """Verdicts for a propositional formula over every sign pattern (N = 1)."""
    rows = {}
    for signs in itertools.product((-1.0, 1.0), repeat=n_preds):
        m = np.array(signs).reshape(n_preds, 1)
        rows[signs] = _truth(formula, m, 0)
    return rows


def finite_difference(f, x, h=1e-6):
    """Central-difference gradient (or Jacobian for vector-valued ``f``)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e), dtype=float)
                     - np.asarray(f(x - e), dtype=float)) / (2.0 * h))
    jac = np.stack(cols, axis=-1)
    return jac


def _cw_rhs(x, acc, n):
    return np.array([
        x[3], x[4], x[5],
        3.0 * n * n * x[0] + 2.0 * n * x[4] + acc[0],
        -2.0 * n * x[3] + acc[1],
        -n * n * x[2] + acc[2],
    ])


def rk4_cw(x0, controls, dt, substeps=10, n=SIDEREAL_MEAN_MOTION, mass=1.0):
    """Integrate the CW equations under piecewise-constant thrust.

    ``controls`` has one row per interval (thrust, divided by ``mass``).
    Returns the states at every grid point, shape (len(controls) + 1, 6).
    """
    x = np.asarray(x0, dtype=float).copy()
    u = np.asarray(controls, dtype=float).reshape(-1, 3) / mass
    out = [x.copy()]
    h = dt / substeps
    for acc in u:
        for _ in range(substeps):
            k1 = _cw_rhs(x, acc, n)
            k2 = _cw_rhs(x + 0.5 * h * k1, acc, n)
            k3 = _cw_rhs(x + 0.5 * h * k2, acc, n)
            k4 = _cw_rhs(x + h * k3, acc, n)
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(x.copy())
    return np.array(out)


def brute_force_lp(c, A_ub, b_ub, A_eq=None, b_eq=None, tol=1e-9):
    """Minimize ``c'x`` over a bounded polytope by enumerating vertices.

    Feasible only for tiny problems; returns ``(value, x)`` or ``None``.
    """
    c = np.asarray(c, float)
    n = c.size
    A_ub = np.asarray(A_ub, float).reshape(-1, n)
    b_ub = np.asarray(b_ub, float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float)
    best = None
    need = n - A_eq.shape[0]
    for active in itertools.combinations(range(A_ub.shape[0]), need):
        M = np.vstack([A_eq, A_ub[list(active)]])
        rhs = np.concatenate([b_eq, b_ub[list(active)]])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, rhs)
        if np.all(A_ub @ x <= b_ub + tol) and np.allclose(A_eq @ x, b_eq, atol=tol):
            val = float(c @ x)
            if best is None or val < best[0]:
                best = (val, x)
    return best
