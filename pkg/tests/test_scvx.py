import csv

import numpy as np
import pytest

from stlcvx import ipm, qp, scvx
from stlcvx.graph import compile
from stlcvx.plant import PlantParams, cw_discretize, free_drift, repropagate
from stlcvx.semantics import eval_boolean, read_csv

X0 = [-2000.0, 500.0, 200.0, 0.0, 0.0, 0.0]
DOCK = [0.0] * 6
KEEP_OUT = "eventually (norm(r) >= 2500)"


def _verdict(**kw):
    return scvx.ScvxConfig(trust_policy="verdict", **kw)


def test_weight_examples():
    assert scvx.update_weights(-1.0, False, False, scvx.ScvxConfig(w_omega_grow=2.0)) == -2.0
    assert scvx.update_weights(-2.0, True, True, scvx.ScvxConfig(w_omega_relax=0.5)) == -1.0
    # violated after a satisfied iterate tightens again
    assert scvx.update_weights(-1.0, False, True, scvx.ScvxConfig(w_omega_relax=0.5)) == -2.0
    cfg = scvx.ScvxConfig(w_omega_limit=10.0)
    assert scvx.update_weights(-9.0, False, False, cfg) == -10.0


def test_trust_region_examples():
    up = scvx.update_trust_region([100.0], False, True, _verdict(dilate_factor=2.0))
    assert up[0] == 200.0
    down = scvx.update_trust_region([200.0], True, True, _verdict(shrink_factor=0.5), True)
    assert down[0] == 100.0
    floor = scvx.update_trust_region([scvx.TR_FLOOR], True, True, _verdict(), True)
    assert floor[0] == scvx.TR_FLOOR
    ceil = scvx.update_trust_region([scvx.TR_CEIL], False, False, _verdict())
    assert ceil[0] == scvx.TR_CEIL


def test_feasibility_policy():
    cfg = scvx.ScvxConfig()
    assert scvx.update_trust_region([100.0], False, False, cfg)[0] == 200.0
    assert scvx.update_trust_region([100.0], False, True, cfg)[0] == 80.0


@pytest.mark.parametrize("kw", [dict(dilate_factor=1.0), dict(shrink_factor=1.0),
                                dict(w_omega_relax=0.0), dict(w_omega_grow=0.5),
                                dict(eps_converge=0.0), dict(w_omega_init=1.0),
                                dict(kappa=-1.0), dict(trust_policy="x"),
                                dict(solver="simplex"), dict(max_outer_iter=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        scvx.ScvxConfig(**kw)


def test_config_from_dict():
    assert scvx.ScvxConfig.from_dict({"kappa": 2.0}).kappa == 2.0
    with pytest.raises(ValueError, match="unknown"):
        scvx.ScvxConfig.from_dict({"kapa": 2.0})


def test_problem_validation():
    with pytest.raises(ValueError):
        scvx.Problem(None, PlantParams(), X0[:3], DOCK)
    with pytest.raises(ValueError):
        scvx.Problem("(r[0] >= 0) and (r[1] >= 0)", PlantParams(), X0, DOCK)


def test_plain_rendezvous():
    plant = PlantParams(n_steps=21)
    traj, trace = scvx.run(scvx.Problem(None, plant, X0, DOCK))
    assert trace.termination == "converged"
    assert np.allclose(traj.states[-1], DOCK, atol=1e-5)
    assert np.linalg.norm(traj.controls, axis=1).max() <= plant.max_thrust + 1e-6
    dv = [r["delta_v"] for r in trace.accepted()]
    assert all(b <= a * 1.01 for a, b in zip(dv, dv[1:]))


@pytest.fixture(scope="module")
def keep_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("iters")
    rows = []
    problem = scvx.Problem(KEEP_OUT, PlantParams(n_steps=21), X0, DOCK,
                           scvx.ScvxConfig(kappa=5000.0))
    traj, trace = scvx.run(problem, output_dir=str(out), callback=rows.append)
    return problem, traj, trace, out, rows


def test_keep_out_small_grid(keep_out):
    problem, traj, trace, _, _ = keep_out
    assert trace.termination == "converged"
    margin, sat = scvx.model_check(problem, traj)
    assert sat == eval_boolean(problem.formula, traj) and sat
    assert np.linalg.norm(traj.positions, axis=1).max() >= 2500.0
    # returned trajectory is a repropagation of its own controls
    again = repropagate(problem.plant, problem.x0, traj.controls)
    assert np.allclose(again.states, traj.states)


def test_trace_bookkeeping(keep_out, tmp_path):
    _, _, trace, out, rows = keep_out
    assert rows == trace.rows
    assert all(set(r) == set(scvx.TRACE_COLUMNS) for r in trace.rows)
    assert trace.rows[-1]["branch"] == scvx.ACCEPTED and trace.rows[-1]["satisfied"]
    written = sorted(p.name for p in out.iterdir())
    feasible = [r["iteration"] for r in trace.rows if r["status"] == qp.OPTIMAL]
    assert written == [f"iter_{i:03d}.csv" for i in feasible]
    read_csv(out / written[-1])
    trace.write_csv(tmp_path / "trace.csv")
    with open(tmp_path / "trace.csv") as fh:
        assert len(list(csv.DictReader(fh))) == len(trace)


def test_accepted_subproblem_consistency():
    problem = scvx.Problem(KEEP_OUT, PlantParams(n_steps=21), X0, DOCK,
                           scvx.ScvxConfig(kappa=5000.0))
    model = cw_discretize(problem.plant)
    graph = compile(problem.formula, 21)
    ref = free_drift(problem.plant, problem.x0)
    prob, lay, system = scvx.build_subproblem(problem, graph, ref, np.full(21, 4000.0),
                                              -1.0, model)
    sol = ipm.solve(prob)
    assert sol.optimal
    z = sol.z
    assert np.abs(prob.A_eq @ z - prob.b_eq).max() <= 1e-5
    for cone in prob.cones:
        s = cone.G @ z + cone.h
        assert np.linalg.norm(s[1:]) <= s[0] + 1e-5
    assert z[system.terminal_col] >= -1e-6


def test_nonconvergence_carries_trace():
    problem = scvx.Problem(KEEP_OUT, PlantParams(n_steps=21), X0, DOCK,
                           scvx.ScvxConfig(kappa=5000.0, max_outer_iter=2))
    with pytest.raises(scvx.NonConvergence) as exc:
        scvx.run(problem)
    assert len(exc.value.trace) == 2 and exc.value.trace.termination == "max_iter"
    assert exc.value.trajectory.n_steps == 21


def test_admm_certifies_small_radius_infeasible():
    # a 500 m radius cannot reach the dock from 2 km in the first iterate
    problem = scvx.Problem(None, PlantParams(n_steps=11), X0, DOCK,
                           scvx.ScvxConfig(solver="admm", max_outer_iter=1))
    with pytest.raises(scvx.NonConvergence) as exc:
        scvx.run(problem)
    row = exc.value.trace.rows[0]
    assert row["status"] == qp.INFEASIBLE and row["qp_iterations"] < 5000
