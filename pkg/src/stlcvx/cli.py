"""Command-line front end: ``stlcvx check | compile | solve``.

Exit codes: 0 success (check: formula satisfied), 1 check ran but the
formula is violated, 2 bad input (parse, schema or invariant error),
3 SCvx did not converge (best-so-far artifacts are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import scvx
from .formula import FormulaError, as_formula, desugar, to_text, validate_top
from .graph import compile as compile_graph
from .graph import sparsity_grid
from .linearizer import assemble, propagate_reference
from .plant import PlantParams, delta_v
from .semantics import TrajectoryError, eval_exact, read_csv, write_csv

EXIT_OK = 0
EXIT_VIOLATED = 1
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3

OUTPUT_ENV = "STLCVX_OUTPUT_DIR"
BUILTIN = ("example1", "example2")

_VEC6 = {"type": "array", "items": {"type": "number"}, "minItems": 6, "maxItems": 6}

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["formula", "boundary"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "formula": {"type": ["string", "null"]},
        "plant": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mass_kg": {"type": "number"},
                "mean_motion_rad_s": {"type": "number"},
                "horizon_s": {"type": "number"},
                "n_steps": {"type": "integer"},
                "max_thrust_n": {"type": "number"},
            },
        },
        "boundary": {
            "type": "object",
            "required": ["x0", "xf"],
            "additionalProperties": False,
            "properties": {"x0": _VEC6, "xf": _VEC6},
        },
        "scvx": {"type": "object"},
        "output_dir": {"type": "string"},
    },
}

_PLANT_KEYS = {"mass_kg": "mass", "mean_motion_rad_s": "mean_motion",
               "horizon_s": "horizon", "n_steps": "n_steps",
               "max_thrust_n": "max_thrust"}


class InputError(ValueError):
    """Anything that maps to exit code 2."""


def load_spec(source):
    """Read a problem spec from a path or a built-in name."""
    if source in BUILTIN:
        text = resources.files("stlcvx.problems").joinpath(f"{source}.json").read_text()
        name = source
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise InputError(f"cannot read {source}: {exc}") from None
        name = path.stem
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}: invalid JSON ({exc})") from None
    spec.setdefault("name", name)
    return spec


def build_problem(spec, overrides=None):
    """Validate a spec dict and turn it into an :class:`scvx.Problem`."""
    try:
        jsonschema.validate(spec, PROBLEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise InputError(f"schema error: {exc.message}") from None
    plant_kw = {_PLANT_KEYS[k]: v for k, v in spec.get("plant", {}).items()}
    cfg_kw = dict(spec.get("scvx", {}))
    cfg_kw.update(overrides or {})
    try:
        plant = PlantParams(**plant_kw)
        config = scvx.ScvxConfig.from_dict(cfg_kw)
        return scvx.Problem(spec["formula"], plant, spec["boundary"]["x0"],
                            spec["boundary"]["xf"], config)
    except (ValueError, TypeError) as exc:   # FormulaError is a ValueError
        raise InputError(str(exc)) from None


def _output_dir(args, spec):
    if args.output_dir:
        return Path(args.output_dir)
    if spec.get("output_dir"):
        return Path(spec["output_dir"])
    root = os.environ.get(OUTPUT_ENV) or "stlcvx_out"
    return Path(root) / spec["name"]


# ---------------------------------------------------------------------------
# subcommands


def cmd_check(args):
    try:
        formula = desugar(as_formula(args.formula))
        validate_top(formula)
        traj = read_csv(args.trajectory)
        margin, trace = eval_exact(formula, traj)
    except (FormulaError, TrajectoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sat = margin > 0.0
    print(f"formula      {to_text(formula)}")
    print(f"root margin  {margin:.6f}")
    print(f"verdict      {'satisfied' if sat else 'violated'}")
    print("node terminal margins:")
    for path in sorted(trace.values, key=lambda p: (len(p), p)):
        node = trace.nodes[path]
        label = "/".join(map(str, path)) or "root"
        print(f"  {label:<12} {type(node).__name__:<11} {trace.values[path][-1]: .6f}")
    if args.kappa > 0:
        graph = compile_graph(formula, traj.n_steps)
        alpha = propagate_reference(graph, traj, args.kappa)
        print(f"smoothed root (kappa={args.kappa:g})  {alpha[graph.root, -1]:.6f}")
    return EXIT_OK if sat else EXIT_VIOLATED


def cmd_compile(args):
    try:
        formula = desugar(as_formula(args.formula))
        graph = compile_graph(formula, args.steps)
    except FormulaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"{'id':>3} {'label':<8} {'op':<11} {'kind':<7} {'direction':<9} window")
    for node in graph.nodes:
        print(f"{node.id:>3} {node.label:<8} {node.op:<11} "
              f"{'flow' if node.is_flow else 'bridge':<7} "
              f"{node.direction or '-':<9} {list(node.window) if node.window else '-'}")
    print()
    print(sparsity_grid(graph))
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "graph.json").write_text(graph.to_json(indent=2))
        if args.trajectory:
            try:
                traj = read_csv(args.trajectory)
                system = assemble(graph, traj, args.kappa)
            except (TrajectoryError, ValueError, OSError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_INPUT
            system.write_coo(out / "system.coo")
            system.write_layout(out / "layout.json")
        print(f"\nwrote {out}")
    return EXIT_OK


def cmd_solve(args):
    overrides = {}
    if args.kappa is not None:
        overrides["kappa"] = args.kappa
    if args.tol is not None:
        overrides["tol"] = args.tol
    if args.max_iter is not None:
        overrides["max_outer_iter"] = args.max_iter
    if args.nonlinear_reprop:
        overrides["nonlinear_reprop"] = True
    try:
        spec = load_spec(args.spec)
        problem = build_problem(spec, overrides)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None:
        np.random.seed(args.seed)

    out = _output_dir(args, spec)
    iter_dir = out / "iterations"
    iter_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    converged = True
    message = "converged"
    try:
        traj, trace = scvx.run(problem, output_dir=str(iter_dir))
    except scvx.NonConvergence as exc:
        traj, trace, converged, message = exc.trajectory, exc.trace, False, str(exc)
    except scvx.SubproblemFailure as exc:
        print(f"error: subproblem failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    wall = time.perf_counter() - t0

    margin, _ = scvx.model_check(problem, traj)
    trace.write_csv(out / "trace.csv")
    write_csv(traj, out / "trajectory.csv")
    summary = {
        "name": spec["name"],
        "formula": spec["formula"],
        "converged": converged,
        "satisfied": bool(margin > 0.0),
        "termination": trace.termination,
        "message": message,
        "iterations": len(trace),
        "delta_v_m_s": delta_v(traj, problem.plant.mass),
        "final_margin": None if not np.isfinite(margin) else float(margin),
        "max_distance_m": float(np.max(np.linalg.norm(traj.positions, axis=1))),
        "wall_time_s": wall,
        "seed": args.seed,
        "config": scvx.config_dict(problem.config),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps({k: summary[k] for k in
                      ("converged", "satisfied", "iterations", "delta_v_m_s",
                       "final_margin", "wall_time_s")}, indent=2))
    print(f"artifacts in {out}")
    if converged and summary["satisfied"]:
        return EXIT_OK
    return EXIT_NONCONVERGED


def build_parser():
    p = argparse.ArgumentParser(prog="stlcvx", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every SCvx iteration")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="model-check a formula on a trajectory CSV")
    c.add_argument("formula")
    c.add_argument("trajectory")
    c.add_argument("--kappa", type=float, default=0.0,
                   help="also report the smoothed root margin")
    c.set_defaults(func=cmd_check)

    g = sub.add_parser("compile", help="print the operator graph and block pattern")
    g.add_argument("formula")
    g.add_argument("--steps", type=int, default=5)
    g.add_argument("--output-dir")
    g.add_argument("--trajectory", help="reference CSV; writes the linearized system")
    g.add_argument("--kappa", type=float, default=0.0)
    g.set_defaults(func=cmd_compile)

    s = sub.add_parser("solve", help="run SCvx on a problem spec")
    s.add_argument("spec", help=f"JSON path or one of {', '.join(BUILTIN)}")
    s.add_argument("--output-dir")
    s.add_argument("--kappa", type=float)
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--nonlinear-reprop", action="store_true")
    s.set_defaults(func=cmd_solve)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
