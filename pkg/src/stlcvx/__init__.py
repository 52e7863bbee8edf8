"""STL constraints as linear block systems, and an SCvx rendezvous solver."""

from ._accel import USE_NUMBA
from .formula import FormulaError, TopNodeNotFlow, desugar, parse, to_text
from .graph import compile as compile_graph
from .linearizer import LinearBlockSystem, assemble, propagate_reference
from .plant import PlantParams, cw_discretize, delta_v, free_drift, repropagate
from .scvx import NonConvergence, Problem, ScvxConfig, run
from .semantics import Trajectory, eval_boolean, eval_exact, read_csv, write_csv
from .smoothing import smax, smax_grad, smin, smin_grad

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA", "FormulaError", "TopNodeNotFlow", "desugar", "parse", "to_text",
    "compile_graph", "LinearBlockSystem", "assemble", "propagate_reference",
    "PlantParams", "cw_discretize", "delta_v", "free_drift", "repropagate",
    "NonConvergence", "Problem", "ScvxConfig", "run",
    "Trajectory", "eval_boolean", "eval_exact", "read_csv", "write_csv",
    "smax", "smax_grad", "smin", "smin_grad",
]
