"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The public names (``smooth_eval``, ``flow_recursion``, ``project_soc_group``,
``rk4_relative``) are bound to one flavour at import time according to
``stlcvx._accel.USE_NUMBA``. Both flavours stay importable under the
``*_numba`` / ``*_numpy`` names so they can be cross-checked and benchmarked.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# smooth min / max


def smooth_eval_numpy(a, b, kappa, is_min):
    """Vectorised smin/smax with partials; returns ``(value, d/da, d/db)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    if kappa == 0.0:
        pick_a = (a <= b) if is_min else (a >= b)
        val = np.where(pick_a, a, b)
        ga = pick_a.astype(float)
        return val, ga, 1.0 - ga
    h = 0.5 + (a - b) / (2.0 * kappa)
    if is_min:
        d = a - b
        val = a * (1.0 - h) + h * b - kappa * h * (1.0 - h)
        ga = 1.0 - h
        gb = h.copy()
        upper = d >= kappa
        lower = (~upper) & (d <= -kappa)
        val = np.where(upper, b, np.where(lower, a, val))
    else:
        d = b - a
        val = b * (1.0 - h) + h * a + kappa * h * (1.0 - h)
        ga = h.copy()
        gb = 1.0 - h
        upper = d >= kappa
        lower = (~upper) & (d <= -kappa)
        val = np.where(upper, b, np.where(lower, a, val))
    ga = np.where(upper, 0.0, np.where(lower, 1.0, ga))
    gb = np.where(upper, 1.0, np.where(lower, 0.0, gb))
    return val, ga, gb


@njit
def _smooth_scalar(a, b, kappa, is_min):
    if kappa == 0.0:
        if is_min:
            if a <= b:
                return a, 1.0, 0.0
            return b, 0.0, 1.0
        if a >= b:
            return a, 1.0, 0.0
        return b, 0.0, 1.0
    h = 0.5 + (a - b) / (2.0 * kappa)
    if is_min:
        d = a - b
        if d >= kappa:
            return b, 0.0, 1.0
        if d <= -kappa:
            return a, 1.0, 0.0
        return a * (1.0 - h) + h * b - kappa * h * (1.0 - h), 1.0 - h, h
    d = b - a
    if d >= kappa:
        return b, 0.0, 1.0
    if d <= -kappa:
        return a, 1.0, 0.0
    return b * (1.0 - h) + h * a + kappa * h * (1.0 - h), h, 1.0 - h


@njit
def _smooth_eval_loop(a, b, kappa, is_min):
    n = a.shape[0]
    val = np.empty(n)
    ga = np.empty(n)
    gb = np.empty(n)
    for i in range(n):
        val[i], ga[i], gb[i] = _smooth_scalar(a[i], b[i], kappa, is_min)
    return val, ga, gb


def smooth_eval_numba(a, b, kappa, is_min):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    shape = a.shape
    val, ga, gb = _smooth_eval_loop(
        np.ascontiguousarray(a).ravel(), np.ascontiguousarray(b).ravel(),
        float(kappa), bool(is_min))
    return val.reshape(shape), ga.reshape(shape), gb.reshape(shape)


# ---------------------------------------------------------------------------
# running-extremum recursion of a temporal node


@njit
def _flow_recursion_loop(inp, ka, kb, is_min, backward, kappa):
    n = inp.shape[0]
    alpha = np.empty(n)
    if not backward:
        for k in range(0, ka + 1):
            alpha[k] = inp[ka]
        for k in range(ka, kb):
            alpha[k + 1] = _smooth_scalar(alpha[k], inp[k + 1], kappa, is_min)[0]
        for k in range(kb + 1, n):
            alpha[k] = alpha[kb]
    else:
        for k in range(kb, n):
            alpha[k] = inp[kb]
        for k in range(kb - 1, ka - 1, -1):
            alpha[k] = _smooth_scalar(alpha[k + 1], inp[k], kappa, is_min)[0]
        for k in range(0, ka):
            alpha[k] = alpha[ka]
    return alpha


def flow_recursion_numba(inp, ka, kb, is_min, backward, kappa):
    return _flow_recursion_loop(np.ascontiguousarray(inp, dtype=float),
                                int(ka), int(kb), bool(is_min),
                                bool(backward), float(kappa))


def flow_recursion_numpy(inp, ka, kb, is_min, backward, kappa):
    """STL-variable sequence of a temporal node over window ``[ka, kb]``.

    Forward nodes seed at ``ka`` and fold left to right; backward nodes seed
    at ``kb`` and fold right to left. Values outside the window are held.
    """
    inp = np.asarray(inp, dtype=float)
    n = inp.shape[0]
    alpha = np.empty(n)
    seg = inp[ka:kb + 1]
    if backward:
        seg = seg[::-1]
    if kappa == 0.0:
        acc = (np.minimum if is_min else np.maximum).accumulate(seg)
    else:
        acc = np.empty_like(seg)
        acc[0] = seg[0]
        for i in range(1, seg.shape[0]):
            acc[i] = smooth_eval_numpy(acc[i - 1], seg[i], kappa, is_min)[0]
    if backward:
        acc = acc[::-1]
        alpha[ka:kb + 1] = acc
        alpha[kb + 1:] = inp[kb]
        alpha[:ka] = acc[0]
    else:
        alpha[ka:kb + 1] = acc
        alpha[:ka] = inp[ka]
        alpha[kb + 1:] = acc[-1]
    return alpha


# ---------------------------------------------------------------------------
# second-order cone projection, one group of equal-dimension cones


@njit
def _project_soc_loop(v, idx):
    m, d = idx.shape
    for i in range(m):
        t = v[idx[i, 0]]
        nrm2 = 0.0
        for j in range(1, d):
            nrm2 += v[idx[i, j]] ** 2
        nrm = np.sqrt(nrm2)
        if nrm <= t:
            continue
        if nrm <= -t:
            for j in range(d):
                v[idx[i, j]] = 0.0
            continue
        scale = 0.5 * (t + nrm)
        v[idx[i, 0]] = scale
        for j in range(1, d):
            v[idx[i, j]] *= scale / nrm


def project_soc_group_numba(v, idx):
    """Project ``v[idx[i]]`` onto the cone ``{(t, x): ||x|| <= t}`` in place."""
    _project_soc_loop(v, idx)


def project_soc_group_numpy(v, idx):
    blk = v[idx]
    t = blk[:, 0]
    x = blk[:, 1:]
    nrm = np.sqrt(np.einsum("ij,ij->i", x, x))
    out = blk.copy()
    zero = nrm <= -t
    mid = (nrm > np.abs(t))
    out[zero] = 0.0
    scale = 0.5 * (t[mid] + nrm[mid])
    out[mid, 0] = scale
    out[mid, 1:] = x[mid] * (scale / nrm[mid])[:, None]
    v[idx] = out


# ---------------------------------------------------------------------------
# nonlinear relative motion about a circular orbit


@njit
def _relative_deriv(x, acc, n, mu, r0):
    rx = r0 + x[0]
    ry = x[1]
    rz = x[2]
    rc = np.sqrt(rx * rx + ry * ry + rz * rz)
    k = mu / (rc * rc * rc)
    out = np.empty(6)
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = 2.0 * n * x[4] + n * n * rx - k * rx + acc[0]
    out[4] = -2.0 * n * x[3] + n * n * ry - k * ry + acc[1]
    out[5] = -k * rz + acc[2]
    return out


@njit
def _rk4_relative_loop(x0, acc, dt, substeps, n, mu, r0):
    steps = acc.shape[0]
    out = np.empty((steps + 1, 6))
    out[0] = x0
    h = dt / substeps
    x = x0.copy()
    for k in range(steps):
        a = acc[k]
        for _ in range(substeps):
            k1 = _relative_deriv(x, a, n, mu, r0)
            k2 = _relative_deriv(x + 0.5 * h * k1, a, n, mu, r0)
            k3 = _relative_deriv(x + 0.5 * h * k2, a, n, mu, r0)
            k4 = _relative_deriv(x + h * k3, a, n, mu, r0)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return out


def rk4_relative_numba(x0, acc, dt, substeps, n, mu, r0):
    return _rk4_relative_loop(np.asarray(x0, dtype=float),
                              np.ascontiguousarray(acc, dtype=float),
                              float(dt), int(substeps), float(n), float(mu),
                              float(r0))


def _relative_deriv_numpy(x, acc, n, mu, r0):
    rvec = x[:3] + np.array([r0, 0.0, 0.0])
    rc = np.sqrt(rvec @ rvec)
    k = mu / (rc * rc * rc)
    frame = np.array([2.0 * n * x[4] + n * n * rvec[0],
                      -2.0 * n * x[3] + n * n * rvec[1],
                      0.0])
    return np.concatenate([x[3:], frame - k * rvec + acc])


def rk4_relative_numpy(x0, acc, dt, substeps, n, mu, r0):
    """Integrate chaser motion in the rotating target frame with RK4.

    ``acc`` holds one zero-order-hold acceleration per step (m/s^2).
    """
    acc = np.asarray(acc, dtype=float)
    out = np.empty((acc.shape[0] + 1, 6))
    x = np.asarray(x0, dtype=float).copy()
    out[0] = x
    h = dt / substeps
    for k, a in enumerate(acc):
        for _ in range(substeps):
            k1 = _relative_deriv_numpy(x, a, n, mu, r0)
            k2 = _relative_deriv_numpy(x + 0.5 * h * k1, a, n, mu, r0)
            k3 = _relative_deriv_numpy(x + 0.5 * h * k2, a, n, mu, r0)
            k4 = _relative_deriv_numpy(x + h * k3, a, n, mu, r0)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return out


if USE_NUMBA:
    smooth_eval = smooth_eval_numba
    flow_recursion = flow_recursion_numba
    project_soc_group = project_soc_group_numba
    rk4_relative = rk4_relative_numba
else:
    smooth_eval = smooth_eval_numpy
    flow_recursion = flow_recursion_numpy
    project_soc_group = project_soc_group_numpy
    rk4_relative = rk4_relative_numpy
