"""First-order conic solver for the convex SCvx subproblems.

Problem form::

    minimize    1/2 z' diag(p) z + c' z
    subject to  A_eq z = b_eq
                lb <= z <= ub
                G_i z + h_i in Q   for each second-order cone i

where ``Q = {(t, w): ||w|| <= t}``. All constraints are stacked as
``M z = v, v in C`` and solved with an ADMM splitting (quasi-definite KKT
solve, projection onto C, dual ascent), over-relaxation and adaptive step
size. The data are Ruiz-equilibrated first; cone rows share one scale factor
per cone so the cone is preserved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"
UNBOUNDED = "unbounded"


class SubproblemFailure(RuntimeError):
    pass


@dataclass
class SecondOrderCone:
    """``G z + h`` lies in the cone; the first component is the bound."""

    G: sp.spmatrix
    h: np.ndarray

    @property
    def dim(self):
        return self.G.shape[0]


@dataclass
class ConicProblem:
    c: np.ndarray
    A_eq: sp.spmatrix | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    cones: list = field(default_factory=list)
    P_diag: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.n
        if self.A_eq is None:
            self.A_eq = sp.csr_matrix((0, n))
            self.b_eq = np.zeros(0)
        self.A_eq = sp.csr_matrix(self.A_eq)
        self.b_eq = np.asarray(self.b_eq, dtype=float)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float)
        if self.P_diag is not None:
            self.P_diag = np.asarray(self.P_diag, dtype=float)
            if self.P_diag.shape != (n,) or np.any(self.P_diag < 0):
                raise ValueError("P_diag must be a nonnegative vector of length n")
        if self.A_eq.shape[1] != n or self.b_eq.shape != (self.A_eq.shape[0],):
            raise ValueError("equality block has inconsistent dimensions")
        if self.lb.shape != (n,) or self.ub.shape != (n,) or np.any(self.lb > self.ub):
            raise ValueError("bounds must be length-n vectors with lb <= ub")
        for cone in self.cones:
            if cone.G.shape[1] != n or cone.dim < 1 or len(cone.h) != cone.dim:
                raise ValueError("cone references an invalid column slice")

    @property
    def n(self):
        return self.c.shape[0]

    def objective(self, z):
        val = float(self.c @ z)
        if self.P_diag is not None:
            val += 0.5 * float(z @ (self.P_diag * z))
        return val


@dataclass
class ConicSolution:
    z: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    objective: float
    y: np.ndarray | None = None   # duals of the stacked rows [eq, bounds, cones]
    rho: float = 0.0

    @property
    def optimal(self):
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
# stacked standard form


@dataclass
class StackedForm:
    """``M z = v`` with ``v`` restricted row-block-wise.

    Rows ``[0, m_eq)`` are equalities, ``[m_eq, m_lin)`` boxes on the bounded
    variables, ``[m_lin, m)`` cone rows with shifts ``h``.
    """

    P: np.ndarray            # diagonal, length n
    c: np.ndarray
    M: sp.csc_matrix
    lo: np.ndarray           # length m_lin
    hi: np.ndarray
    m_eq: int
    m_lin: int
    h: np.ndarray            # length m - m_lin
    cone_starts: np.ndarray  # absolute row indices
    cone_dims: np.ndarray

    @property
    def n(self):
        return self.c.shape[0]

    @property
    def m(self):
        return self.M.shape[0]

    def cone_groups(self):
        groups = {}
        for start, dim in zip(self.cone_starts, self.cone_dims):
            groups.setdefault(int(dim), []).append(
                np.arange(start, start + dim))
        return {d: np.array(rows, dtype=np.int64) for d, rows in groups.items()}


def stack(p):
    n = p.n
    bounded = np.flatnonzero(np.isfinite(p.lb) | np.isfinite(p.ub))
    sel = sp.csr_matrix((np.ones(bounded.size), (np.arange(bounded.size), bounded)),
                        shape=(bounded.size, n))
    blocks = [p.A_eq, sel] + [sp.csr_matrix(cone.G) for cone in p.cones]
    M = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, n))
    m_eq = p.A_eq.shape[0]
    m_lin = m_eq + bounded.size
    lo = np.concatenate([p.b_eq, p.lb[bounded]])
    hi = np.concatenate([p.b_eq, p.ub[bounded]])
    dims = np.array([cone.dim for cone in p.cones], dtype=np.int64)
    starts = m_lin + np.concatenate([[0], np.cumsum(dims)[:-1]]).astype(np.int64) \
        if dims.size else np.zeros(0, dtype=np.int64)
    h = np.concatenate([np.asarray(cone.h, float) for cone in p.cones]) \
        if p.cones else np.zeros(0)
    P = np.zeros(n) if p.P_diag is None else p.P_diag.copy()
    return StackedForm(P, p.c.copy(), M, lo, hi, m_eq, m_lin, h, starts, dims)


# ---------------------------------------------------------------------------
# equilibration


@dataclass
class Scaling:
    D: np.ndarray       # variable scaling, z = D z_scaled
    E: np.ndarray       # row scaling, v_scaled = E v
    cost: float         # objective multiplier

    def scale_x(self, z):
        return z / self.D

    def unscale_x(self, z_scaled):
        return self.D * z_scaled

    def scale_y(self, y):
        return y * self.cost / self.E

    def unscale_y(self, y_scaled):
        return self.E * y_scaled / self.cost


def _inf_norm_cols(A):
    A = sp.csc_matrix(A)
    out = np.zeros(A.shape[1])
    if A.nnz:
        absA = abs(A)
        out = np.asarray(absA.max(axis=0).todense()).ravel()
    return out


def _inf_norm_rows(A):
    return _inf_norm_cols(sp.csc_matrix(A).T)


def _safe_norm(v, lo, hi):
    # empty rows/columns get unit scaling
    return np.where(v < lo, 1.0, np.minimum(v, hi))


def equilibrate(form, iterations=25, lo=1e-4, hi=1e4):
    """Ruiz equilibration of the KKT matrix ``[P M'; M 0]``.

    Returns ``(scaled_form, scaling)``; the scaled data are
    ``D P D * cost``, ``D c * cost``, ``E M D``, bounds ``E lo``/``E hi`` and
    cone shifts ``E h``.
    """
    n, m = form.n, form.m
    D = np.ones(n)
    E = np.ones(m)
    P = form.P.copy()
    M = sp.csc_matrix(form.M, copy=True)
    cone_rows = slice(form.m_lin, m)
    for _ in range(iterations):
        col = np.maximum(np.abs(P), _inf_norm_cols(M))
        row = _inf_norm_rows(M)
        dx = 1.0 / np.sqrt(_safe_norm(col, lo, hi))
        dy = 1.0 / np.sqrt(_safe_norm(row, lo, hi))
        if form.cone_dims.size:
            # one factor per cone keeps the cone invariant
            logs = np.add.reduceat(np.log(dy[cone_rows]), form.cone_starts - form.m_lin)
            dy[cone_rows] = np.repeat(np.exp(logs / form.cone_dims), form.cone_dims)
        if np.max(np.abs(1 - dx), initial=0) < 1e-3 and \
                np.max(np.abs(1 - dy), initial=0) < 1e-3:
            break
        D *= dx
        E *= dy
        P = dx * P * dx
        M = sp.diags(dy) @ M @ sp.diags(dx)
    c = D * form.c
    mean_p = np.mean(np.abs(P)) if n else 0.0
    cost = 1.0 / np.clip(max(mean_p, np.max(np.abs(c), initial=0.0)), lo, hi)
    scaled = StackedForm(P * cost, c * cost, sp.csc_matrix(M),
                         form.lo * E[:form.m_lin], form.hi * E[:form.m_lin],
                         form.m_eq, form.m_lin, form.h * E[form.m_lin:],
                         form.cone_starts, form.cone_dims)
    return scaled, Scaling(D, E, cost)


# ---------------------------------------------------------------------------
# ADMM


class _Projector:
    def __init__(self, form):
        self.m_lin = form.m_lin
        self.lo = form.lo
        self.hi = form.hi
        self.h_full = np.zeros(form.m)
        self.h_full[form.m_lin:] = form.h
        self.groups = form.cone_groups()

    def __call__(self, w):
        out = w.copy()
        out[:self.m_lin] = np.clip(w[:self.m_lin], self.lo, self.hi)
        if self.groups:
            tail = out + self.h_full
            for idx in self.groups.values():
                kernels.project_soc_group(tail, idx)
            out[self.m_lin:] = tail[self.m_lin:] - self.h_full[self.m_lin:]
        return out


def _polar_project(y, form, groups):
    """Project the cone parts of ``y`` onto the polar cone ``-Q``."""
    out = y.copy()
    if groups:
        neg = -out
        for idx in groups.values():
            kernels.project_soc_group(neg, idx)
        out[form.m_lin:] = -neg[form.m_lin:]
    return out


def _support(form, dy, tol):
    """Support function of the constraint set in direction ``dy``."""
    eq = slice(0, form.m_eq)
    total = float(form.lo[eq] @ dy[eq])
    box = slice(form.m_eq, form.m_lin)
    pos = np.maximum(dy[box], 0.0)
    neg = np.minimum(dy[box], 0.0)
    hi, lo = form.hi[box], form.lo[box]
    if np.any((pos > tol) & ~np.isfinite(hi)) or np.any((neg < -tol) & ~np.isfinite(lo)):
        return np.inf
    total += float(np.where(np.isfinite(hi), hi, 0.0) @ pos)
    total += float(np.where(np.isfinite(lo), lo, 0.0) @ neg)
    total -= float(form.h @ dy[form.m_lin:])
    return total


def _recession_direction(form, dx, groups, tol):
    """True if ``dx`` certifies dual infeasibility (an unbounded ray)."""
    if np.max(np.abs(form.P * dx), initial=0.0) > tol:
        return False
    if float(form.c @ dx) > -tol:
        return False
    Md = form.M @ dx
    if np.max(np.abs(Md[:form.m_eq]), initial=0.0) > tol:
        return False
    box = slice(form.m_eq, form.m_lin)
    if np.any(np.isfinite(form.hi[box]) & (Md[box] > tol)):
        return False
    if np.any(np.isfinite(form.lo[box]) & (Md[box] < -tol)):
        return False
    proj = Md.copy()
    for idx in groups.values():
        kernels.project_soc_group(proj, idx)
    return np.max(np.abs(proj[form.m_lin:] - Md[form.m_lin:]), initial=0.0) <= tol


class _Anderson:
    """Type-II Anderson acceleration of a fixed-point map ``u -> T(u)``."""

    def __init__(self, memory):
        self.memory = memory
        self.reset()

    def reset(self):
        self.dF = []
        self.dG = []
        self.last = None

    def update(self, u, tu, g):
        if self.memory <= 0:
            return tu
        if self.last is not None:
            self.dF.append(tu - self.last[0])
            self.dG.append(g - self.last[1])
            if len(self.dG) > self.memory:
                self.dF.pop(0)
                self.dG.pop(0)
        self.last = (tu, g)
        if not self.dG:
            return tu
        G = np.column_stack(self.dG)
        gram = G.T @ G
        reg = 1e-10 * np.trace(gram) + 1e-300
        try:
            gamma = np.linalg.solve(gram + reg * np.eye(gram.shape[0]), G.T @ g)
        except np.linalg.LinAlgError:
            self.reset()
            return tu
        out = tu - np.column_stack(self.dF) @ gamma
        if not np.all(np.isfinite(out)):
            self.reset()
            return tu
        return out


class Solver:
    """Reusable ADMM solver for one problem instance (supports warm starts)."""

    def __init__(self, problem, sigma=1e-6, rho=0.1, alpha=1.6,
                 scale_iterations=25, memory=10):
        self.problem = problem
        self.memory = memory
        self.form = stack(problem)
        self.scaled, self.scaling = equilibrate(self.form, scale_iterations)
        self.sigma = sigma
        self.alpha = alpha
        self.rho = rho
        self._eq_mask = np.zeros(self.form.m, dtype=bool)
        self._eq_mask[:self.form.m_eq] = True
        eq_box = self.form.lo == self.form.hi
        self._eq_mask[:self.form.m_lin] |= eq_box
        self._project = _Projector(self.scaled)
        self._factor(rho)

    def _rho_vec(self, rho):
        vec = np.full(self.form.m, rho)
        vec[self._eq_mask] = 1e3 * rho
        return vec

    def _factor(self, rho):
        s = self.scaled
        self.rho = rho
        self.rho_vec = self._rho_vec(rho)
        K = sp.bmat([[sp.diags(s.P + self.sigma), s.M.T],
                     [s.M, sp.diags(-1.0 / self.rho_vec)]], format="csc")
        self._lu = spla.splu(K, permc_spec="COLAMD")

    def _step(self, x, v, y):
        """One relaxed ADMM iteration in scaled space."""
        s = self.scaled
        n = s.n
        rhs = np.concatenate([self.sigma * x - s.c, v - y / self.rho_vec])
        sol = self._lu.solve(rhs)
        v_t = v + (sol[n:] - y) / self.rho_vec
        x_new = self.alpha * sol[:n] + (1 - self.alpha) * x
        v_relax = self.alpha * v_t + (1 - self.alpha) * v
        v_new = self._project(v_relax + y / self.rho_vec)
        y_new = y + self.rho_vec * (v_relax - v_new)
        return x_new, v_new, y_new

    def solve(self, tol_primal=1e-6, tol_dual=1e-6, max_iter=20000,
              warm_start=None, check_every=10, adapt_every=50,
              eps_infeasible=1e-5, memory=None, stall_window=500):
        s = self.scaled
        sc = self.scaling
        form = self.form
        n, m = s.n, s.m
        memory = self.memory if memory is None else memory
        if warm_start is not None and warm_start[0] is not None:
            x = sc.scale_x(np.asarray(warm_start[0], float))
            y = sc.scale_y(np.asarray(warm_start[1], float)) \
                if warm_start[1] is not None else np.zeros(m)
            v = self._project(s.M @ x)
        else:
            x, v, y = np.zeros(n), np.zeros(m), np.zeros(m)
        c_norm = np.max(np.abs(form.c), initial=0.0)
        status = MAX_ITER
        prim = dual = np.inf
        accel = _Anderson(memory)
        u = np.concatenate([x, v, y])
        fallback = None
        res_prev = np.inf
        res_best, best_it = np.inf, 0
        plain_until = 0
        next_adapt = adapt_every
        it = 0
        for it in range(1, max_iter + 1):
            x, v, y = self._step(u[:n], u[n:n + m], u[n + m:])
            tu = np.concatenate([x, v, y])
            g = tu - u
            res = float(np.linalg.norm(g))
            if fallback is not None and res > res_prev:
                # accelerated point made things worse: retake the plain step
                u = fallback
                fallback = None
                accel.reset()
                continue
            res_prev = res
            if res < 0.99 * res_best:
                res_best, best_it = res, it
            elif it - best_it > stall_window and plain_until < it:
                # stalled residual: take plain steps for one window, since only
                # the plain ADMM orbit converges to an infeasibility certificate
                plain_until = it + stall_window
                best_it = plain_until
                accel.reset()
            if it < plain_until:
                u_next = tu
            else:
                u_next = accel.update(u, tu, g)
            fallback = tu if u_next is not tu else None
            u = u_next
            if it % check_every and it != max_iter:
                continue
            xu = sc.unscale_x(x)
            yu = sc.unscale_y(y)
            vu = v / sc.E
            Mx = form.M @ xu
            Px = form.P * xu
            Mty = form.M.T @ yu
            prim = np.max(np.abs(Mx - vu), initial=0.0)
            dual = np.max(np.abs(Px + form.c + Mty), initial=0.0)
            scale_p = max(np.max(np.abs(Mx), initial=0.0), np.max(np.abs(vu), initial=0.0))
            scale_d = max(np.max(np.abs(Px), initial=0.0),
                          np.max(np.abs(Mty), initial=0.0), c_norm)
            if prim <= tol_primal * (1 + scale_p) and dual <= tol_dual * (1 + scale_d):
                status = OPTIMAL
                break
            # certificates use the displacement of the plain ADMM map, in the
            # equilibrated space; accelerated iterates are not on its orbit
            dy = _polar_project(g[n + m:], s, self._project.groups)
            dy_norm = np.max(np.abs(dy), initial=0.0)
            if dy_norm > 1e-12:
                atdy = np.max(np.abs(s.M.T @ dy), initial=0.0)
                if atdy <= eps_infeasible * dy_norm and \
                        _support(s, dy, eps_infeasible * dy_norm) < -eps_infeasible * dy_norm:
                    status = INFEASIBLE
                    break
            dx = g[:n]
            dx_norm = np.max(np.abs(dx), initial=0.0)
            if dx_norm > 1e-12 and _recession_direction(
                    s, dx, self._project.groups, eps_infeasible * dx_norm):
                status = UNBOUNDED
                break
            if it >= next_adapt:
                if self._adapt(x, v, y):
                    # space rho changes out geometrically so they stop
                    adapt_every *= 2
                    accel.reset()
                    fallback = None
                    u = tu
                next_adapt = it + adapt_every
        z = sc.unscale_x(x)
        return ConicSolution(z, status, float(prim), float(dual), it,
                             self.problem.objective(z), sc.unscale_y(y), self.rho)

    def _adapt(self, x, v, y):
        s = self.scaled
        Mx = s.M @ x
        Px = s.P * x
        Mty = s.M.T @ y
        tiny = 1e-12
        p = np.max(np.abs(Mx - v), initial=0.0) / max(np.max(np.abs(Mx), initial=0.0),
                                                      np.max(np.abs(v), initial=0.0), tiny)
        d = np.max(np.abs(Px + s.c + Mty), initial=0.0) / max(
            np.max(np.abs(Px), initial=0.0), np.max(np.abs(Mty), initial=0.0),
            np.max(np.abs(s.c), initial=0.0), tiny)
        if p <= 0 or d <= 0:
            return False
        new = float(np.clip(self.rho * np.sqrt(p / d), 1e-6, 1e6))
        if new > 5 * self.rho or new < self.rho / 5:
            # duals stay valid, only the step size changes
            self._factor(new)
            return True
        return False


def solve(problem, tol_primal=1e-6, tol_dual=1e-6, max_iter=20000,
          warm_start=None, **kwargs):
    """Solve a :class:`ConicProblem`; never raises on infeasibility.

    ``warm_start`` is an optional ``(z, y)`` pair from a previous solution
    of a problem with the same shape.
    """
    solver = Solver(problem, **kwargs)
    return solver.solve(tol_primal, tol_dual, max_iter, warm_start)
