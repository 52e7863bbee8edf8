"""Successive convexification with STL model checking.

Each outer iteration linearizes the STL graph about the current reference
trajectory, solves one conic subproblem

    min   sum_k s_k dt / m  +  w_omega * alpha_root[N-1]
    s.t.  CW dynamics, x_0 and x_{N-1} fixed,
          linearized STL rows, alpha_root[N-1] >= 0,
          ||F_k|| <= s_k <= F_max,
          ||r_k - rbar_k|| <= TR_k,
          ||F_k - Fbar_k|| <= F_max * TR_k / TR_0   (optional),

repropagates the thrust through the plant and checks the result with the
exact robust semantics. The trust region grows after infeasible
subproblems and shrinks otherwise; the STL weight is pushed more negative
until the first satisfaction and then relaxes or tightens with the verdict.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp

from . import ipm, qp
from .formula import SIGNAL_WIDTH, as_formula, desugar, validate_top
from .graph import compile as compile_graph
from .linearizer import assemble
from .plant import PlantParams, cw_discretize, delta_v, free_drift, repropagate
from .semantics import eval_exact

log = logging.getLogger(__name__)

ACCEPTED = "accepted"
REJECTED_INFEASIBLE = "infeasible"
REJECTED_INACCURATE = "inaccurate"

TR_FLOOR = 1.0
TR_CEIL = 1e5


class NonConvergence(RuntimeError):
    """Raised at the iteration cap; carries the best trajectory and trace."""

    def __init__(self, message, trajectory, trace):
        super().__init__(message)
        self.trajectory = trajectory
        self.trace = trace


SubproblemFailure = qp.SubproblemFailure


@dataclass
class ScvxConfig:
    trust_radius_init: float = 500.0
    dilate_factor: float = 2.0
    shrink_factor: float = 0.8
    eps_converge: float = 5.0
    w_omega_init: float = -1e-3
    w_omega_grow: float = 3.0
    w_omega_relax: float = 0.5
    w_omega_limit: float = 100.0
    kappa: float = 0.0
    thrust_trust_scale: float = 0.5   # <= 0 drops the thrust trust region
    trust_policy: str = "feasibility"
    max_outer_iter: int = 60
    tol: float = 1e-6
    qp_max_iter: int = 20000
    nonlinear_reprop: bool = False
    solver: str = "ipm"

    def __post_init__(self):
        if not self.dilate_factor > 1:
            raise ValueError("dilate_factor must be > 1")
        if not 0 < self.shrink_factor < 1:
            raise ValueError("shrink_factor must be in (0, 1)")
        if not 0 < self.w_omega_relax < 1:
            raise ValueError("w_omega_relax must be in (0, 1)")
        if not self.w_omega_grow > 1:
            raise ValueError("w_omega_grow must be > 1")
        if not self.eps_converge > 0:
            raise ValueError("eps_converge must be positive")
        if not self.w_omega_limit >= -self.w_omega_init:
            raise ValueError("w_omega_limit must be at least |w_omega_init|")
        if not self.w_omega_init < 0:
            raise ValueError("w_omega_init must be negative")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.trust_policy not in ("feasibility", "verdict"):
            raise ValueError("trust_policy must be 'feasibility' or 'verdict'")
        if self.solver not in ("ipm", "admm"):
            raise ValueError("solver must be 'ipm' or 'admm'")
        if self.trust_radius_init <= 0 or self.max_outer_iter < 1:
            raise ValueError("trust radius and iteration cap must be positive")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scvx options: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Problem:
    formula: object            # DSL text, Formula, or None for plain rendezvous
    plant: PlantParams
    x0: np.ndarray
    xf: np.ndarray
    config: ScvxConfig = field(default_factory=ScvxConfig)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.xf = np.asarray(self.xf, dtype=float)
        if self.x0.shape != (6,) or self.xf.shape != (6,):
            raise ValueError("boundary states must have 6 components")
        if self.formula is not None:
            self.formula = desugar(as_formula(self.formula))
            validate_top(self.formula)


TRACE_COLUMNS = ("iteration", "status", "branch", "j_stl", "energy", "delta_v",
                 "root_margin", "satisfied", "eps_c", "gap", "tr_min", "tr_max",
                 "w_omega", "qp_iterations", "seconds")


@dataclass
class ScvxTrace:
    """Append-only per-iteration record; every column has the same length."""

    rows: list = field(default_factory=list)
    termination: str = ""

    def append(self, **row):
        self.rows.append({c: row.get(c) for c in TRACE_COLUMNS})

    def column(self, name):
        return [r[name] for r in self.rows]

    def __len__(self):
        return len(self.rows)

    def accepted(self):
        return [r for r in self.rows if r["branch"] == ACCEPTED]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, TRACE_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow(r)


def update_weights(w_omega, satisfied, ever_satisfied, config):
    """STL cost weight rule; the weight stays strictly negative.

    Grows (more negative) until the first satisfying iterate, then relaxes
    toward zero while satisfied and tightens again on violation. The
    magnitude is capped at ``config.w_omega_limit``.
    """
    if not ever_satisfied:
        w = w_omega * config.w_omega_grow
    elif satisfied:
        w = w_omega * config.w_omega_relax
    else:
        w = w_omega / config.w_omega_relax
    return max(w, -config.w_omega_limit)


def update_trust_region(radii, satisfied, feasible, config, ever_satisfied=None):
    """Per-step radius update, clamped to ``[TR_FLOOR, TR_CEIL]``.

    ``trust_policy == "feasibility"``: dilate after an infeasible subproblem,
    shrink after any feasible one. ``"verdict"``: dilate while infeasible or
    while no iterate has satisfied the formula yet, shrink afterwards.
    ``ever_satisfied`` defaults to ``satisfied``.
    """
    if config.trust_policy == "feasibility":
        grow = not feasible
    else:
        ever = satisfied if ever_satisfied is None else (ever_satisfied or satisfied)
        grow = (not feasible) or (not ever)
    factor = config.dilate_factor if grow else config.shrink_factor
    return np.clip(np.asarray(radii, dtype=float) * factor, TR_FLOOR, TR_CEIL)


# ---------------------------------------------------------------------------
# subproblem


@dataclass
class _Layout:
    n_steps: int
    n_stl: int

    @property
    def n_sig(self):
        return self.n_steps * SIGNAL_WIDTH

    @property
    def s0(self):
        return self.n_sig + self.n_stl

    @property
    def n(self):
        return self.s0 + self.n_steps

    def sig(self, k, j):
        return k * SIGNAL_WIDTH + j


def _dynamics_rows(problem, model, lay):
    """Equalities ``x_{k+1} = A x_k + B u_k`` plus both boundary states."""
    N = lay.n_steps
    rows, cols, vals = [], [], []
    r = 0
    for k in range(N - 1):
        for i in range(6):
            rows.append(r); cols.append(lay.sig(k + 1, i)); vals.append(-1.0)
            for j in range(6):
                if model.A_d[i, j] != 0.0:
                    rows.append(r); cols.append(lay.sig(k, j)); vals.append(model.A_d[i, j])
            for j in range(3):
                if model.B_d[i, j] != 0.0:
                    rows.append(r); cols.append(lay.sig(k, 6 + j)); vals.append(model.B_d[i, j])
            r += 1
    b = [0.0] * r
    for step, target in ((0, problem.x0), (N - 1, problem.xf)):
        for i in range(6):
            rows.append(r); cols.append(lay.sig(step, i)); vals.append(1.0)
            b.append(float(target[i]))
            r += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, lay.n))
    return A, np.array(b)


def _cone_rows(lay, ref_traj, radii, thrust_radii=None):
    """Thrust epigraph cones, position and (optionally) thrust trust regions."""
    N = lay.n_steps
    ref_positions = ref_traj.positions
    cones = []
    for k in range(N):
        G = sp.csr_matrix(([1.0, 1.0, 1.0, 1.0],
                           ([0, 1, 2, 3], [lay.s0 + k] + [lay.sig(k, 6 + j) for j in range(3)])),
                          shape=(4, lay.n))
        cones.append(qp.SecondOrderCone(G, np.zeros(4)))
    for k in range(N):
        G = sp.csr_matrix(([1.0, 1.0, 1.0], ([1, 2, 3], [lay.sig(k, j) for j in range(3)])),
                          shape=(4, lay.n))
        h = np.concatenate([[radii[k]], -ref_positions[k]])
        cones.append(qp.SecondOrderCone(G, h))
    if thrust_radii is not None:
        for k in range(N):
            G = sp.csr_matrix(([1.0, 1.0, 1.0],
                               ([1, 2, 3], [lay.sig(k, 6 + j) for j in range(3)])),
                              shape=(4, lay.n))
            h = np.concatenate([[thrust_radii[k]], -ref_traj.controls[k]])
            cones.append(qp.SecondOrderCone(G, h))
    return cones


def build_subproblem(problem, graph, ref_traj, radii, w_omega, model, dyn=None):
    """Assemble the convex subproblem about ``ref_traj``.

    Returns ``(ConicProblem, layout, block_system)``; ``block_system`` is
    None when the problem carries no formula.
    """
    plant = problem.plant
    N = plant.n_steps
    n_stl = graph.n_vars if graph is not None else 0
    lay = _Layout(N, n_stl)
    A_dyn, b_dyn = dyn if dyn is not None else _dynamics_rows(problem, model, lay)
    blocks = [A_dyn]
    rhs = [b_dyn]
    c = np.zeros(lay.n)
    c[lay.s0:] = plant.dt / plant.mass
    lb = np.full(lay.n, -np.inf)
    ub = np.full(lay.n, np.inf)
    lb[lay.s0:] = 0.0
    ub[lay.s0:] = plant.max_thrust
    system = None
    if graph is not None:
        system = assemble(graph, ref_traj, problem.config.kappa)
        A_stl = sp.hstack([system.A, sp.csr_matrix((system.A.shape[0], N))], format="csr")
        blocks.append(A_stl)
        rhs.append(system.b)
        c[system.terminal_col] = w_omega
        lb[system.terminal_col] = 0.0
    A_eq = sp.vstack(blocks, format="csr")
    cfg = problem.config
    thrust_radii = None
    if cfg.thrust_trust_scale > 0:
        thrust_radii = (cfg.thrust_trust_scale * plant.max_thrust
                        * np.asarray(radii) / cfg.trust_radius_init)
    cones = _cone_rows(lay, ref_traj, radii, thrust_radii)
    return (qp.ConicProblem(c, A_eq, np.concatenate(rhs), lb, ub, cones),
            lay, system)


def _unpack(z, lay):
    sig = z[:lay.n_sig].reshape(lay.n_steps, SIGNAL_WIDTH)
    return sig[:, :6], sig[:, 6:], z[lay.s0:]


# ---------------------------------------------------------------------------
# driver


def _solve_subproblem(prob, cfg, warm):
    if cfg.solver == "ipm":
        return ipm.solve(prob, tol=min(cfg.tol, 1e-6))
    return qp.solve(prob, cfg.tol, cfg.tol, cfg.qp_max_iter, warm_start=warm)


def model_check(problem, traj):
    if problem.formula is None:
        return np.inf, True
    margin, _ = eval_exact(problem.formula, traj)
    return margin, margin > 0.0


def run(problem, output_dir=None, callback=None):
    """Run the SCvx loop; returns ``(trajectory, trace)``.

    Raises :class:`NonConvergence` when the iteration cap is hit. When
    ``output_dir`` is given, every repropagated candidate is written there
    as ``iter_XXX.csv``.
    """
    from .semantics import write_csv  # local: keeps import graph flat

    cfg = problem.config
    plant = problem.plant
    model = cw_discretize(plant)
    graph = compile_graph(problem.formula, plant.n_steps) \
        if problem.formula is not None else None
    n_stl = graph.n_vars if graph is not None else 0
    dyn = _dynamics_rows(problem, model, _Layout(plant.n_steps, n_stl))

    ref = free_drift(plant, problem.x0, nonlinear=cfg.nonlinear_reprop)
    ref_margin, _ = model_check(problem, ref)
    radii = np.full(plant.n_steps, float(cfg.trust_radius_init))
    w_omega = float(cfg.w_omega_init)
    ever_satisfied = False
    trace = ScvxTrace()
    warm = None
    best = None   # (delta_v, trajectory) over satisfied accepted iterates
    last_accepted_sat = False

    for it in range(1, cfg.max_outer_iter + 1):
        t0 = time.perf_counter()
        prob, lay, system = build_subproblem(problem, graph, ref, radii, w_omega,
                                             model, dyn)
        sol = _solve_subproblem(prob, cfg, warm)
        if not np.all(np.isfinite(sol.z)):
            raise SubproblemFailure(f"iteration {it}: non-finite subproblem iterate")
        row = dict(iteration=it, status=sol.status, w_omega=w_omega,
                   qp_iterations=sol.iterations, tr_min=float(radii.min()),
                   tr_max=float(radii.max()))

        if sol.status != qp.OPTIMAL:
            ever_before = ever_satisfied
            w_omega = update_weights(w_omega, False, ever_before, cfg)
            radii = update_trust_region(radii, False, False, cfg, ever_satisfied)
            warm = None
            trace.append(**row, branch=REJECTED_INFEASIBLE,
                         seconds=time.perf_counter() - t0)
            log.info("iter %d: subproblem %s, TR -> %.1f", it, sol.status, radii.max())
            if callback:
                callback(trace.rows[-1])
            continue

        states, controls, s = _unpack(sol.z, lay)
        warm = (sol.z, sol.y)
        cand = repropagate(plant, problem.x0, controls,
                           nonlinear=cfg.nonlinear_reprop, model=model)
        margin, sat = model_check(problem, cand)
        gap = float(np.max(np.linalg.norm(states[:, :3] - cand.positions, axis=1)))
        eps_c = float(np.max(np.linalg.norm(states[:, :3] - ref.positions, axis=1)))
        energy = float(np.sum(s) * plant.dt / plant.mass)
        omega_sub = float(sol.z[system.terminal_col]) if system is not None else 0.0
        row.update(j_stl=energy + w_omega * omega_sub, energy=energy,
                   delta_v=delta_v(cand, plant.mass), root_margin=margin,
                   satisfied=bool(sat), eps_c=eps_c, gap=gap)
        if output_dir is not None:
            write_csv(cand, f"{output_dir}/iter_{it:03d}.csv")

        if gap > 10.0 * cfg.eps_converge:
            branch = REJECTED_INACCURATE
            w_omega = update_weights(w_omega, sat, ever_satisfied, cfg)
            radii = update_trust_region(radii, sat, True, cfg, ever_satisfied)
        else:
            branch = ACCEPTED
            ref, ref_margin = cand, margin
            last_accepted_sat = sat
            w_omega = update_weights(w_omega, sat, ever_satisfied, cfg)
            radii = update_trust_region(radii, sat, True, cfg, ever_satisfied)
            ever_satisfied = ever_satisfied or sat
            if sat:
                dv = row["delta_v"]
                if best is None or dv <= best[0]:
                    best = (dv, cand)
        trace.append(**row, branch=branch, seconds=time.perf_counter() - t0)
        log.info("iter %d: %s dv=%.4f margin=%.3f eps_c=%.2f TR=%.1f w=%.3g",
                 it, branch, row["delta_v"], margin, eps_c, radii.max(), w_omega)
        if callback:
            callback(trace.rows[-1])
        if branch == ACCEPTED and sat and eps_c <= cfg.eps_converge:
            trace.termination = "converged"
            return ref, trace

    trace.termination = "max_iter"
    best_traj = best[1] if best is not None else ref
    raise NonConvergence(
        f"no convergence in {cfg.max_outer_iter} iterations "
        f"(last margin {ref_margin:.4g}, satisfied={last_accepted_sat})",
        best_traj, trace)


def config_dict(cfg):
    return asdict(cfg)
