"""Shared builders for the test-suite: margin-driven trajectories, random
core formulas, and the translation into the oracle's tuple syntax."""

import numpy as np

from stlcvx.formula import (Always, And, Eventually, Interest, Interval, Not,
                            Or, Predicate, PredicateSpec, Until, Implies, Iff,
                            Xor)
from stlcvx.semantics import Trajectory

# one affine predicate per signal column, margin = raw signal value
_COLUMNS = [("r", 0), ("r", 1), ("r", 2), ("v", 0), ("v", 1), ("v", 2),
            ("F", 0), ("F", 1), ("F", 2)]
PREDS = [Predicate(PredicateSpec("affine", s, 0.0, index=i)) for s, i in _COLUMNS]
NORM_PREDS = [Predicate(PredicateSpec("norm-geq", "r", 150.0)),
              Predicate(PredicateSpec("norm-leq", "v", 160.0)),
              Predicate(PredicateSpec("norm-leq", "F", 1.5))]


def margin_traj(margins, dt=1.0):
    """Trajectory whose signal column ``i`` equals ``margins[i]``."""
    margins = np.atleast_2d(np.asarray(margins, dtype=float))
    p, n = margins.shape
    sig = np.zeros((n, 9))
    sig[:, :p] = margins.T
    return Trajectory(np.arange(n) * dt, sig[:, :6], sig[:, 6:])


def random_window(rng):
    a, b = np.sort(rng.uniform(0.0, 1.0, 2))
    if rng.random() < 0.3:
        a, b = 0.0, 1.0
    return Interval(float(a), float(b))


def random_interest(rng):
    return Interest.AFTER if rng.random() < 0.5 else Interest.BEFORE


def random_sub(rng, depth, n_preds, leaves=None):
    leaves = PREDS[:n_preds] if leaves is None else leaves
    if depth <= 0 or rng.random() < 0.25:
        leaf = leaves[int(rng.integers(len(leaves)))]
        return Not(leaf) if rng.random() < 0.3 else leaf
    op = int(rng.integers(4))

    def sub():
        return random_sub(rng, depth - 1, n_preds, leaves)

    if op == 0:
        return And(sub(), sub())
    if op == 1:
        return Or(sub(), sub())
    cls = Eventually if op == 2 else Always
    return cls(sub(), random_window(rng), random_interest(rng))


def random_core(rng, max_depth=4, n_preds=3, leaves=None):
    """Core formula with a temporal root; total depth <= ``max_depth``."""
    cls = Eventually if rng.random() < 0.5 else Always
    return cls(random_sub(rng, max_depth - 1, n_preds, leaves), random_window(rng),
               random_interest(rng))


def to_tuple(f):
    """Translate a formula into :mod:`stlcvx.oracles` tuple syntax."""
    if isinstance(f, Predicate):
        return ("p", PREDS.index(f))
    if isinstance(f, Not):
        return ("not", to_tuple(f.child))
    pairs = {And: "and", Or: "or", Implies: "implies", Iff: "iff", Xor: "xor",
             Until: "until"}
    if type(f) in pairs:
        return (pairs[type(f)], to_tuple(f.left), to_tuple(f.right))
    tag = "ev" if isinstance(f, Eventually) else "alw"
    return (tag, (f.interval.a, f.interval.b), to_tuple(f.child), f.interest.value)


def random_margins(rng, n_preds, n_steps, scale=3.0):
    return rng.normal(0.0, scale, (n_preds, n_steps))


def random_traj(rng, n_steps, scale=100.0):
    """Generic trajectory with non-degenerate norms (no zero vectors)."""
    states = rng.normal(0.0, scale, (n_steps, 6))
    controls = rng.normal(0.0, 1.0, (n_steps, 3))
    return Trajectory(np.arange(n_steps) * 10.0, states, controls)


# ---------------------------------------------------------------------------
# random conic problems and their oracles


def random_lp(rng):
    """Bounded LP as a ConicProblem (inequalities as 1-d cones) plus the
    vertex-enumeration optimum."""
    import scipy.sparse as sp

    from stlcvx import qp
    from stlcvx.oracles import brute_force_lp

    n = int(rng.integers(2, 6))
    meq = int(rng.integers(0, 2))
    x0 = rng.uniform(-1, 1, n)
    m = int(rng.integers(n + 1, n + 6))
    G = rng.normal(size=(m, n))
    h = G @ x0 + rng.uniform(0.1, 1.0, m)
    A = rng.normal(size=(meq, n))
    b = A @ x0
    c = rng.normal(size=n)
    lb, ub = np.full(n, -5.0), np.full(n, 5.0)
    ref = brute_force_lp(c, np.vstack([G, np.eye(n), -np.eye(n)]),
                         np.concatenate([h, ub, -lb]),
                         A if meq else None, b if meq else None)
    cones = [qp.SecondOrderCone(sp.csr_matrix(-G[i:i + 1]), np.array([h[i]]))
             for i in range(m)]
    prob = qp.ConicProblem(c, sp.csr_matrix(A) if meq else None,
                           b if meq else None, lb, ub, cones)
    return prob, ref[0]


def random_socp(rng, n_max=20):
    """Feasible, bounded SOCP (n <= ``n_max``); free variables carry a
    positive quadratic weight so the optimum exists."""
    import scipy.sparse as sp

    from stlcvx import qp

    n = int(rng.integers(3, n_max + 1))
    meq = int(rng.integers(0, n // 2 + 1))
    x0 = rng.uniform(-1, 1, n)
    A = rng.normal(size=(meq, n))
    b = A @ x0
    free = rng.random(n) < 0.3
    lb, ub = np.full(n, -3.0), np.full(n, 3.0)
    lb[free], ub[free] = -np.inf, np.inf
    cones = []
    for _ in range(int(rng.integers(1, 4))):
        d = int(rng.integers(2, 5))
        G = rng.normal(size=(d, n))
        G[0] = 0.0
        h = -G @ x0
        h[0] = np.linalg.norm(G[1:] @ x0) + rng.uniform(0.5, 3.0)
        cones.append(qp.SecondOrderCone(sp.csr_matrix(G), h))
    P = rng.uniform(0, 1, n) if rng.random() < 0.5 else np.zeros(n)
    P[free] = rng.uniform(0.5, 1.0, free.sum())
    prob = qp.ConicProblem(rng.normal(size=n), sp.csr_matrix(A) if meq else None,
                           b if meq else None, lb, ub, cones, P)
    return prob


def cvxpy_value(prob):
    """Optimal value from cvxpy/Clarabel, or None when it is not solved."""
    import cvxpy as cp

    z = cp.Variable(prob.n)
    obj = prob.c @ z
    if prob.P_diag is not None:
        obj = obj + 0.5 * cp.sum(cp.multiply(prob.P_diag, cp.square(z)))
    cons = []
    if prob.A_eq.shape[0]:
        cons.append(prob.A_eq.toarray() @ z == prob.b_eq)
    lo, hi = np.isfinite(prob.lb), np.isfinite(prob.ub)
    if lo.any():
        cons.append(z[lo] >= prob.lb[lo])
    if hi.any():
        cons.append(z[hi] <= prob.ub[hi])
    for cone in prob.cones:
        G = cone.G.toarray()
        if cone.dim == 1:
            cons.append(G[0] @ z + cone.h[0] >= 0)
        else:
            cons.append(cp.SOC(G[0] @ z + cone.h[0], G[1:] @ z + cone.h[1:]))
    problem = cp.Problem(cp.Minimize(obj), cons)
    problem.solve(solver="CLARABEL")
    return problem.value if problem.status == "optimal" else None


def kkt_residuals(prob, sol):
    """Independent (stationarity, primal, complementarity) residuals.

    Convention: ``P z + c + M' y = 0`` over the stacked rows
    ``[equalities, bounds, cones]``; cone duals satisfy ``-y in Q``.
    """
    from stlcvx import qp

    form = qp.stack(prob)
    P = prob.P_diag if prob.P_diag is not None else 0.0
    z, y = sol.z, sol.y
    stat = np.abs(P * z + prob.c + form.M.T @ y).max()
    pri = [np.abs(prob.A_eq @ z - prob.b_eq).max(initial=0.0),
           np.max(prob.lb - z), np.max(z - prob.ub)]
    comp = []
    yb = y[form.m_eq:form.m_lin]
    bounded = np.flatnonzero(np.isfinite(prob.lb) | np.isfinite(prob.ub))
    zb = z[bounded]
    for yi, zi, lo, hi in zip(yb, zb, prob.lb[bounded], prob.ub[bounded]):
        if yi == 0.0:
            continue
        slack = hi - zi if yi > 0 else zi - lo
        comp.append(abs(yi) * slack)
    for cone, start in zip(prob.cones, form.cone_starts):
        s = cone.G @ z + cone.h
        pri.append(np.linalg.norm(s[1:]) - s[0])
        yc = -y[start:start + cone.dim]
        pri.append(np.linalg.norm(yc[1:]) - yc[0])   # dual cone membership
        comp.append(abs(s @ yc))
    return float(stat), float(max(0.0, max(pri))), float(max(comp, default=0.0))
