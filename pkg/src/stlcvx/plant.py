"""Relative-orbit plant: Clohessy-Wiltshire model about a circular orbit.

Frame: x radial (outward), y along-track, z cross-track. State is
``[x y z vx vy vz]`` in m and m/s; controls are thrust in N, held constant
over each step (zero-order hold).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .semantics import Trajectory, TrajectoryError

MU_EARTH = 3.986004418e14            # m^3/s^2
SIDEREAL_DAY = 86164.0905            # s
GEO_MEAN_MOTION = 2.0 * math.pi / SIDEREAL_DAY


@dataclass(frozen=True)
class PlantParams:
    mass: float = 1000.0
    mean_motion: float = GEO_MEAN_MOTION
    horizon: float = 5000.0
    n_steps: int = 101
    max_thrust: float = 1.0

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        for name in ("mass", "mean_motion", "horizon", "max_thrust"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def dt(self):
        return self.horizon / (self.n_steps - 1)

    @property
    def times(self):
        return np.linspace(0.0, self.horizon, self.n_steps)

    @property
    def orbit_radius(self):
        return (MU_EARTH / self.mean_motion ** 2) ** (1.0 / 3.0)


@dataclass(frozen=True)
class DiscreteModel:
    A_d: np.ndarray   # (6, 6)
    B_d: np.ndarray   # (6, 3), maps thrust in N


def cw_stm(n, dt):
    """State transition matrix of the CW equations over ``dt``."""
    nt = n * dt
    c, s = math.cos(nt), math.sin(nt)
    return np.array([
        [4 - 3 * c, 0, 0, s / n, 2 * (1 - c) / n, 0],
        [6 * (s - nt), 1, 0, 2 * (c - 1) / n, (4 * s - 3 * nt) / n, 0],
        [0, 0, c, 0, 0, s / n],
        [3 * n * s, 0, 0, c, 2 * s, 0],
        [6 * n * (c - 1), 0, 0, -2 * s, 4 * c - 3, 0],
        [0, 0, -n * s, 0, 0, c],
    ])


def cw_input_matrix(n, dt):
    """Integral of the STM velocity columns over ``[0, dt]`` (per m/s^2)."""
    nt = n * dt
    c, s = math.cos(nt), math.sin(nt)
    n2 = n * n
    return np.array([
        [(1 - c) / n2, 2 * (nt - s) / n2, 0],
        [-2 * (nt - s) / n2, 4 * (1 - c) / n2 - 1.5 * dt * dt, 0],
        [0, 0, (1 - c) / n2],
        [s / n, 2 * (1 - c) / n, 0],
        [-2 * (1 - c) / n, 4 * s / n - 3 * dt, 0],
        [0, 0, s / n],
    ])


def cw_discretize(params, dt=None):
    """Exact ZOH discretization; ``B_d`` already divides by the mass."""
    if params.mean_motion <= 0:
        raise ValueError("mean motion must be positive")
    dt = params.dt if dt is None else dt
    return DiscreteModel(cw_stm(params.mean_motion, dt),
                         cw_input_matrix(params.mean_motion, dt) / params.mass)


def repropagate(params, x0, controls, nonlinear=False, substeps=10, model=None):
    """Propagate ``x0`` under per-step thrust ``controls``.

    ``controls`` has ``n_steps`` rows (the last one does not act on the
    dynamics) or ``n_steps - 1`` rows, in which case a zero row is appended.
    Linear mode iterates the discrete CW model; nonlinear mode integrates
    two-body relative motion with RK4 and ``substeps`` steps per interval.
    """
    u = np.asarray(controls, dtype=float)
    n = params.n_steps
    if u.shape == (n - 1, 3):
        u = np.vstack([u, np.zeros((1, 3))])
    if u.shape != (n, 3):
        raise ValueError(f"controls must have shape ({n}, 3), got {u.shape}")
    x0 = np.asarray(x0, dtype=float)
    if nonlinear:
        states = kernels.rk4_relative(x0, u[:-1] / params.mass, params.dt,
                                      substeps, params.mean_motion, MU_EARTH,
                                      params.orbit_radius)
    else:
        model = model or cw_discretize(params)
        states = np.empty((n, 6))
        states[0] = x0
        for k in range(n - 1):
            states[k + 1] = model.A_d @ states[k] + model.B_d @ u[k]
    if not np.all(np.isfinite(states)):
        raise TrajectoryError("propagation diverged")
    return Trajectory(params.times, states, u)


def free_drift(params, x0, nonlinear=False):
    return repropagate(params, x0, np.zeros((params.n_steps, 3)), nonlinear)


def delta_v(traj, mass):
    """Rectangular sum of thrust acceleration magnitude, m/s."""
    thrust = np.linalg.norm(traj.controls, axis=1)
    return float(np.sum(thrust) / mass * traj.dt)
