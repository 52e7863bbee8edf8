"""Exact (unsmoothed) robust semantics on discrete trajectories.

Every operator produces a per-step margin trace:

* predicates: the margin of the predicate at each step;
* ``and``/``or``: pointwise min/max;
* temporal nodes with interest *before*: at step ``k`` the min/max of the
  child over ``[ka, clip(k)]``; with interest *after*: over ``[clip(k), kb]``,
  where ``clip`` clamps ``k`` into the window.

The root operator always folds forward, so its terminal value is the min/max
of its child over the whole window. This module is the model checker used by
the SCvx driver and does not share code with the linearizer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .formula import (TEMPORAL, Always, And, FormulaError,
                      Interest, Not, Or, Predicate, as_formula, desugar,
                      is_core, validate_top)

CSV_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz", "Fx", "Fy", "Fz")


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """States (m, m/s) and thrust (N) sampled on a uniform time grid."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        u = np.asarray(self.controls, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "controls", u)
        n = t.shape[0] if t.ndim == 1 else -1
        if n < 2:
            raise TrajectoryError("a trajectory needs at least 2 samples")
        if x.shape != (n, 6) or u.shape != (n, 3):
            raise TrajectoryError(
                f"expected states ({n}, 6) and controls ({n}, 3), got "
                f"{x.shape} and {u.shape}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))
                and np.all(np.isfinite(u))):
            raise TrajectoryError("trajectory contains non-finite values")
        dt = np.diff(t)
        if dt[0] <= 0 or not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-9 * abs(t[-1])):
            raise TrajectoryError("time grid must be uniform and increasing")

    @property
    def n_steps(self):
        return self.times.shape[0]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def signals(self):
        """Per-step stacked vector ``[x y z vx vy vz Fx Fy Fz]``, shape (N, 9)."""
        return np.hstack([self.states, self.controls])

    @property
    def positions(self):
        return self.states[:, :3]


@dataclass
class MarginTrace:
    """Per-node margin sequences keyed by the node's path from the root.

    A path is a tuple of child positions (0 = left/only child, 1 = right).
    """

    values: dict = field(default_factory=dict)
    nodes: dict = field(default_factory=dict)

    def __getitem__(self, path):
        return self.values[path]

    @property
    def root(self):
        return self.values[()]


def predicate_margins(spec, signals):
    """Margin of ``spec`` at every step of an (N, 9) signal array."""
    sig = np.asarray(signals, dtype=float)[:, spec.columns]
    if spec.kind == "affine":
        return spec.sense * (sig[:, 0] - spec.threshold)
    nrm = np.sqrt(np.einsum("ij,ij->i", sig, sig))
    if spec.kind == "norm-geq":
        return nrm - spec.threshold
    return spec.threshold - nrm


def predicate_margin(spec, traj, k):
    """Margin of ``spec`` at step ``k`` (0-based) of ``traj``."""
    if not 0 <= k < traj.n_steps:
        raise IndexError(f"step {k} outside 0..{traj.n_steps - 1}")
    return float(predicate_margins(spec, traj.signals[k:k + 1])[0])


def _signals_of(traj_or_signals):
    if isinstance(traj_or_signals, Trajectory):
        return traj_or_signals.signals
    return np.asarray(traj_or_signals, dtype=float)


def _window_fold(child, ka, kb, take_min, after):
    n = child.shape[0]
    out = np.empty(n)
    ufunc = np.minimum if take_min else np.maximum
    seg = child[ka:kb + 1]
    if after:
        acc = ufunc.accumulate(seg[::-1])[::-1]
        out[ka:kb + 1] = acc
        out[:ka] = acc[0]
        out[kb + 1:] = child[kb]
    else:
        acc = ufunc.accumulate(seg)
        out[ka:kb + 1] = acc
        out[:ka] = child[ka]
        out[kb + 1:] = acc[-1]
    return out


def margin_trace(f, traj_or_signals, leaf_margins=None):
    """Margin traces of every node of a core formula.

    ``leaf_margins`` optionally maps a :class:`PredicateSpec` to a
    precomputed length-N margin array, bypassing the signal evaluation.
    """
    f = as_formula(f)
    if not is_core(f):
        f = desugar(f)
    signals = None if leaf_margins is not None else _signals_of(traj_or_signals)
    n = (len(next(iter(leaf_margins.values()))) if leaf_margins
         else signals.shape[0])
    trace = MarginTrace()

    def leaf(spec):
        if leaf_margins is not None:
            return np.asarray(leaf_margins[spec], dtype=float)
        return predicate_margins(spec, signals)

    def walk(node, path):
        if isinstance(node, Predicate):
            vals = leaf(node.spec)
        elif isinstance(node, Not):
            vals = -walk(node.child, path + (0,))
        elif isinstance(node, (And, Or)):
            left = walk(node.left, path + (0,))
            right = walk(node.right, path + (1,))
            vals = np.minimum(left, right) if isinstance(node, And) else \
                np.maximum(left, right)
        elif isinstance(node, TEMPORAL):
            child = walk(node.child, path + (0,))
            ka, kb = node.interval.resolve(n)
            after = node.interest is Interest.AFTER and path != ()
            vals = _window_fold(child, ka, kb, isinstance(node, Always), after)
        else:  # pragma: no cover - is_core guarantees the node set
            raise TypeError(node)
        if np.any(np.isnan(vals)):
            raise FormulaError("NaN margin encountered")
        trace.values[path] = vals
        trace.nodes[path] = node
        return vals

    walk(f, ())
    return trace


def eval_exact(f, traj):
    """Root margin and per-node traces of a formula on a trajectory.

    The root must be a temporal operator; its margin is the terminal value of
    the forward fold, i.e. the min/max of its child over the resolved window.
    """
    f = desugar(as_formula(f))
    validate_top(f)
    trace = margin_trace(f, traj)
    return float(trace.root[-1]), trace


def eval_boolean(f, traj):
    """Satisfaction verdict: the root margin is strictly positive."""
    return eval_exact(f, traj)[0] > 0.0


# ---------------------------------------------------------------------------
# CSV I/O


def read_csv(path):
    """Read a trajectory CSV with header ``t,x,y,z,vx,vy,vz,Fx,Fy,Fz``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise TrajectoryError(f"{path}: empty trajectory file")
    header = [c.strip() for c in rows[0]]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise TrajectoryError(f"{path}: missing columns {missing}")
    cols = [header.index(c) for c in CSV_COLUMNS]
    try:
        data = np.array([[float(r[i]) for i in cols] for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise TrajectoryError(f"{path}: malformed row ({exc})") from None
    if data.shape[0] < 2:
        raise TrajectoryError(f"{path}: need at least 2 samples")
    return Trajectory(data[:, 0], data[:, 1:7], data[:, 7:10])


def write_csv(traj, path):
    data = np.column_stack([traj.times, traj.states, traj.controls])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
