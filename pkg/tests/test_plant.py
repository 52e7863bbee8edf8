import numpy as np
import pytest

from stlcvx.oracles import rk4_cw
from stlcvx.plant import (GEO_MEAN_MOTION, PlantParams, cw_discretize,
                          delta_v, free_drift, repropagate)
from stlcvx.semantics import Trajectory

X0 = np.array([-2000.0, 500.0, 200.0, 0.0, 0.0, 0.0])


def test_small_step_limit():
    m = cw_discretize(PlantParams(), dt=1e-9)
    assert np.allclose(m.A_d, np.eye(6), atol=1e-8)
    assert np.allclose(m.B_d, 0.0, atol=1e-12)


def test_free_drift_matches_rk4_over_one_period():
    period = 2 * np.pi / GEO_MEAN_MOTION
    p = PlantParams(horizon=period, n_steps=501)
    lin = free_drift(p, X0).states
    ref = rk4_cw(X0, np.zeros((500, 3)), p.dt, substeps=20)
    assert np.abs(lin - ref).max() <= 1e-6 * np.abs(ref).max()


def test_thrust_matches_rk4():
    p = PlantParams(n_steps=21)
    u = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    lin = repropagate(p, X0, u).states
    ref = rk4_cw(X0, u, p.dt, substeps=20, mass=p.mass)
    assert np.abs(lin - ref).max() <= 1e-6 * np.abs(ref).max()


def test_zoh_semigroup():
    p = PlantParams()
    one, two = cw_discretize(p, 50.0), cw_discretize(p, 100.0)
    assert np.allclose(two.A_d, one.A_d @ one.A_d, rtol=1e-12, atol=1e-12)
    assert np.allclose(two.B_d, one.A_d @ one.B_d + one.B_d, rtol=1e-10, atol=1e-14)


def test_zero_thrust_is_matrix_powers():
    p = PlantParams(n_steps=6)
    A = cw_discretize(p).A_d
    traj = free_drift(p, X0)
    for k in range(6):
        assert np.allclose(traj.states[k], np.linalg.matrix_power(A, k) @ X0)
    assert np.allclose(traj.positions[0], X0[:3])
    assert np.linalg.norm(X0[:3]) == pytest.approx(2071.2315, abs=1e-3)


def test_control_rows():
    p = PlantParams(n_steps=5)
    short = repropagate(p, X0, np.ones((4, 3)))
    full = repropagate(p, X0, np.vstack([np.ones((4, 3)), np.zeros((1, 3))]))
    assert np.array_equal(short.states, full.states)
    with pytest.raises(ValueError):
        repropagate(p, X0, np.ones((3, 3)))


def test_nonlinear_close_to_linear_near_target():
    p = PlantParams(n_steps=21, horizon=1000.0)
    u = np.full((21, 3), 0.2)
    lin = repropagate(p, X0, u).states
    nl = repropagate(p, X0, u, nonlinear=True).states
    assert np.abs(lin - nl).max() < 1.0


def test_delta_v():
    t = np.arange(11) * 100.0
    zero = Trajectory(t, np.zeros((11, 6)), np.zeros((11, 3)))
    assert delta_v(zero, 1000.0) == 0.0
    const = Trajectory(t, np.zeros((11, 6)), np.tile([1.0, 0, 0], (11, 1)))
    # ten 100 s intervals plus the unused terminal sample
    assert delta_v(Trajectory(t, const.states, np.vstack([const.controls[:10],
                                                          np.zeros((1, 3))])),
                   1000.0) == pytest.approx(1.0)
    prof = np.random.default_rng(1).normal(size=(11, 3))
    rect = sum(np.sqrt(sum(c * c for c in row)) for row in prof) * 100.0 / 1000.0
    assert delta_v(Trajectory(t, zero.states, prof), 1000.0) == pytest.approx(rect)


@pytest.mark.parametrize("kw", [dict(n_steps=1), dict(mass=0.0),
                                dict(mean_motion=-1.0), dict(max_thrust=0.0)])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        PlantParams(**kw)
