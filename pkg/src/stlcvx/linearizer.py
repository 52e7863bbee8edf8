"""Linearized STL-variable dynamics assembled into ``A z = b``.

Column layout of ``z``: the trajectory block (``n_steps`` x 9 signal values,
step-major: ``x y z vx vy vz Fx Fy Fz``) followed by one ``n_steps`` block of
STL variables per graph node, in node order. Each node contributes
``n_steps`` rows. The root's last variable carries the sign constraint
``alpha_root[N-1] >= 0``.

Row forms for a forward temporal node with window ``[ka, kb]`` and input
``in`` (a predicate linearization or another node's variables)::

    k <= ka           alpha_k - in_ka                                 = const
    ka <= k < kb      -alpha_{k+1} + dchi/dalpha alpha_k + dchi/din in_{k+1} = -R_k
    k > kb            alpha_{k-1} - alpha_k                           = 0

Backward nodes use the time-reflected rows. Bridges emit
``-gamma_k + dchi/dL L_k + dchi/dR R_k = -R_k`` at every step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .formula import SIGNAL_WIDTH
from .graph import BACKWARD
from .semantics import Trajectory, predicate_margins


def _signals(traj):
    if isinstance(traj, Trajectory):
        return traj.signals
    return np.asarray(traj, dtype=float)


def predicate_jacobian(spec, traj, k):
    """Gradient of the predicate margin w.r.t. the 9 signals of step ``k``."""
    return _predicate_jacobians(spec, _signals(traj)[k:k + 1])[0]


def _predicate_jacobians(spec, signals):
    n = signals.shape[0]
    jac = np.zeros((n, SIGNAL_WIDTH))
    cols = spec.columns
    if spec.kind == "affine":
        jac[:, cols.start] = float(spec.sense)
        return jac
    sig = signals[:, cols]
    nrm = np.sqrt(np.einsum("ij,ij->i", sig, sig))
    safe = np.where(nrm > 0.0, nrm, 1.0)
    unit = np.where((nrm > 0.0)[:, None], sig / safe[:, None], 0.0)
    jac[:, cols] = unit if spec.kind == "norm-geq" else -unit
    return jac


@dataclass
class ReferencePoint:
    """Reference trajectory signals and the STL variables propagated on them."""

    signals: np.ndarray         # (N, 9)
    alpha: np.ndarray           # (n_nodes, N)
    leaf_values: np.ndarray     # (n_leaves, N)
    leaf_jacobians: np.ndarray  # (n_leaves, N, 9)
    kappa: float = 0.0

    @property
    def z(self):
        """Reference point stacked in the block-system column layout."""
        return np.concatenate([self.signals.ravel(), self.alpha.ravel()])


def _leaf_data(graph, signals):
    n = signals.shape[0]
    vals = np.empty((len(graph.predicates), n))
    jacs = np.empty((len(graph.predicates), n, SIGNAL_WIDTH))
    for i, leaf in enumerate(graph.predicates):
        vals[i] = leaf.sign * predicate_margins(leaf.spec, signals)
        jacs[i] = leaf.sign * _predicate_jacobians(leaf.spec, signals)
    return vals, jacs


def propagate_reference(graph, traj, kappa=0.0):
    """Run every node's nonlinear recursion (smin/smax) on a trajectory.

    Returns the (n_nodes, N) array of STL variables.
    """
    return reference_point(graph, traj, kappa).alpha


def reference_point(graph, traj, kappa=0.0):
    signals = _signals(traj)
    if signals.shape[0] != graph.n_steps:
        raise ValueError(f"trajectory has {signals.shape[0]} steps, graph "
                         f"expects {graph.n_steps}")
    leaf_vals, leaf_jacs = _leaf_data(graph, signals)
    if np.any(np.isnan(leaf_vals)):
        raise ValueError("NaN in predicate margins")
    alpha = np.empty((len(graph.nodes), graph.n_steps))

    def value(ref):
        return alpha[ref.index] if ref.kind == "node" else leaf_vals[ref.index]

    for node in graph.nodes:
        is_min = node.combiner == "min"
        if node.is_flow:
            ka, kb = node.window
            alpha[node.id] = kernels.flow_recursion(
                value(node.parents[0]), ka, kb, is_min,
                node.direction == BACKWARD, float(kappa))
        else:
            left, right = node.parents
            alpha[node.id] = kernels.smooth_eval(value(left), value(right),
                                                 float(kappa), is_min)[0]
    return ReferencePoint(signals, alpha, leaf_vals, leaf_jacs, float(kappa))


@dataclass
class Rows:
    """Coefficients of one node's ``n_steps`` rows (row indices are local)."""

    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)
    rhs: np.ndarray | None = None

    def add(self, row, cols, vals):
        cols = np.atleast_1d(cols)
        self.rows.append(np.full(cols.shape[0], row))
        self.cols.append(cols)
        self.vals.append(np.broadcast_to(np.asarray(vals, dtype=float),
                                         cols.shape))


class _Inputs:
    """Linear pieces ``coef . z`` of an input at step ``k`` plus reference data."""

    def __init__(self, graph, ref):
        self.graph = graph
        self.ref = ref
        self.nx = graph.n_steps * SIGNAL_WIDTH

    def alpha_col(self, node_id, k):
        return self.nx + node_id * self.graph.n_steps + k

    def terms(self, parent, k):
        """(cols, coefs, reference value, coefs . zbar)."""
        if parent.kind == "node":
            v = self.ref.alpha[parent.index, k]
            return np.array([self.alpha_col(parent.index, k)]), np.ones(1), v, v
        jac = self.ref.leaf_jacobians[parent.index, k]
        cols = k * SIGNAL_WIDTH + np.arange(SIGNAL_WIDTH)
        nz = jac != 0.0
        lin = float(jac @ self.ref.signals[k])
        return cols[nz], jac[nz], self.ref.leaf_values[parent.index, k], lin


def linearize_flow(graph, node, ref):
    """Rows of a temporal node about the reference point ``ref``."""
    inputs = _Inputs(graph, ref)
    n = graph.n_steps
    ka, kb = node.window
    parent = node.parents[0]
    own = node.id
    out = Rows(rhs=np.zeros(n))
    backward = node.direction == BACKWARD
    seed = kb if backward else ka
    is_min = node.combiner == "min"

    cols, coefs, in_bar, lin = inputs.terms(parent, seed)
    const = in_bar - lin
    held = range(kb, n) if backward else range(0, ka + 1)
    for k in held:
        out.add(k, inputs.alpha_col(own, k), 1.0)
        if cols.size:
            out.add(k, cols, -coefs)
        out.rhs[k] = const

    steps = range(kb - 1, ka - 1, -1) if backward else range(ka, kb)
    for k in steps:
        prev, nxt = (k + 1, k) if backward else (k, k + 1)
        a_bar = ref.alpha[own, prev]
        cols, coefs, in_bar, lin = inputs.terms(parent, nxt)
        chi, g_a, g_in = (float(v) for v in
                          kernels.smooth_eval(a_bar, in_bar, ref.kappa, is_min))
        remainder = chi - g_a * a_bar - g_in * lin
        out.add(nxt, inputs.alpha_col(own, nxt), -1.0)
        if g_a != 0.0:
            out.add(nxt, inputs.alpha_col(own, prev), g_a)
        if g_in != 0.0 and cols.size:
            out.add(nxt, cols, g_in * coefs)
        out.rhs[nxt] = -remainder

    tail = range(0, ka) if backward else range(kb + 1, n)
    for k in tail:
        anchor = k + 1 if backward else k - 1
        out.add(k, inputs.alpha_col(own, anchor), 1.0)
        out.add(k, inputs.alpha_col(own, k), -1.0)
    return out


def linearize_bridge(graph, node, ref):
    """Rows of an and/or node about ``ref``; one row per step."""
    inputs = _Inputs(graph, ref)
    n = graph.n_steps
    out = Rows(rhs=np.zeros(n))
    left, right = node.parents
    is_min = node.combiner == "min"
    for k in range(n):
        lc, lv, l_bar, l_lin = inputs.terms(left, k)
        rc, rv, r_bar, r_lin = inputs.terms(right, k)
        chi, g_l, g_r = (float(v) for v in
                         kernels.smooth_eval(l_bar, r_bar, ref.kappa, is_min))
        out.add(k, inputs.alpha_col(node.id, k), -1.0)
        if g_l != 0.0 and lc.size:
            out.add(k, lc, g_l * lv)
        if g_r != 0.0 and rc.size:
            out.add(k, rc, g_r * rv)
        out.rhs[k] = -(chi - g_l * l_lin - g_r * r_lin)
    return out


@dataclass
class LinearBlockSystem:
    A: sp.csr_matrix
    b: np.ndarray
    terminal_col: int
    layout: dict
    n_steps: int
    graph: object = None
    reference: ReferencePoint | None = None

    @property
    def n_x(self):
        return self.n_steps * SIGNAL_WIDTH

    def residual(self, z):
        return self.A @ z - self.b

    def block(self, row_node, col_block):
        """Dense sub-block: rows of ``row_node``, columns 'x' or a node id."""
        n = self.n_steps
        rows = slice(row_node * n, (row_node + 1) * n)
        if col_block == "x":
            cols = slice(0, self.n_x)
        else:
            cols = slice(self.n_x + col_block * n, self.n_x + (col_block + 1) * n)
        return self.A[rows, cols]

    def nonzero_blocks(self, tol=0.0):
        """Set of (row node id, column block) with any |entry| > ``tol``."""
        out = set()
        coo = self.A.tocoo()
        n = self.n_steps
        keep = np.abs(coo.data) > tol
        for r, c in zip(coo.row[keep], coo.col[keep]):
            blk = "x" if c < self.n_x else int((c - self.n_x) // n)
            out.add((int(r // n), blk))
        return out

    def layout_dict(self):
        return {"n_steps": self.n_steps, "signal_width": SIGNAL_WIDTH,
                "shape": list(self.A.shape), "terminal_col": self.terminal_col,
                "terminal_sense": ">=0",
                "blocks": {k: list(v) for k, v in self.layout.items()}}

    def write_coo(self, path):
        """Write ``row col value`` lines (0-based) plus a ``.b`` rhs section."""
        coo = self.A.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# shape {self.A.shape[0]} {self.A.shape[1]} nnz {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {float(v)!r}\n")
            fh.write("# rhs\n")
            for i, v in enumerate(self.b):
                fh.write(f"b {i} {float(v)!r}\n")

    def write_layout(self, path):
        with open(path, "w") as fh:
            json.dump(self.layout_dict(), fh, indent=2)


def read_coo(path):
    """Inverse of :meth:`LinearBlockSystem.write_coo`; returns ``(A, b)``."""
    rows, cols, vals, rhs = [], [], [], {}
    shape = None
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#":
                if parts[1] == "shape":
                    shape = (int(parts[2]), int(parts[3]))
                continue
            if parts[0] == "b":
                rhs[int(parts[1])] = float(parts[2])
                continue
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            vals.append(float(parts[2]))
    A = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    b = np.array([rhs[i] for i in range(shape[0])])
    return A, b


def assemble(graph, traj, kappa=0.0, ref=None):
    """Linearize every node about ``traj`` and stack the rows into ``A z = b``."""
    if ref is None:
        ref = reference_point(graph, traj, kappa)
    n = graph.n_steps
    nx = n * SIGNAL_WIDTH
    rows, cols, vals = [], [], []
    b = np.zeros(len(graph.nodes) * n)
    for node in graph.nodes:
        part = (linearize_flow if node.is_flow else linearize_bridge)(graph, node, ref)
        off = node.id * n
        rows.extend(r + off for r in part.rows)
        cols.extend(part.cols)
        vals.extend(part.vals)
        b[off:off + n] = part.rhs
    shape = (len(graph.nodes) * n, nx + len(graph.nodes) * n)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows),
                                              np.concatenate(cols))), shape=shape)
    layout = {"x": (0, nx)}
    for node in graph.nodes:
        layout[node.label] = (nx + node.id * n, nx + (node.id + 1) * n)
    root_start = layout[graph.nodes[graph.root].label][0]
    return LinearBlockSystem(A, b, root_start + n - 1, layout, n, graph, ref)
