"""Set up module access for the base package."""

__version__ = "0.1.0"

from . import constants
from . import errors
from . import symexpr
from . import vcalc
from . import linearize
from . import integrators
from . import symgen
from . import catalog
from . import cli

from .symexpr import Expr, Point, parse_expr, diff_expr, simplify
from .vcalc import IntegrableSystem, VectorField
from .cli import load_system, run_pipeline

__all__ = [
    "constants",
    "errors",
    "symexpr",
    "vcalc",
    "linearize",
    "integrators",
    "symgen",
    "catalog",
    "cli",
    "Expr",
    "Point",
    "parse_expr",
    "diff_expr",
    "simplify",
    "IntegrableSystem",
    "VectorField",
    "load_system",
    "run_pipeline",
]
