"""Batch front end: load a system document, run the pipeline, write a JSON report.

Usage::

    integrasym all --input scaling2d --output report.json
    integrasym check --input my_system.json --tol oset=1e-6 -v
    integrasym systems
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys as _sys
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import catalog
from .errors import (
    DegenerateError,
    DimensionMismatch,
    FileNotFound,
    IntegrasymError,
    IoError,
    NumericFailure,
    SchemaError,
)
from .constants import Tolerances
from .linearize import (
    LinearizingChart,
    SampleResult,
    SamplePlan,
    build_chart,
    chart_determinant_scan,
    draw_admissible,
    linearization_check,
)
from .symexpr import FUNCTIONS, ZERO, evaluate_batch, parse_expr, simplify
from .symgen import (
    FlowSpec,
    KernelElement,
    SymmetryCertificate,
    apply_rescaling,
    kernel_from_expressions,
    kernel_linear,
    orbit_permutation_check,
    symmetry_certificate,
)
from .utils import summarize
from .vcalc import (
    IntegrableSystem,
    VectorField,
    conservation_check,
    divergence_identity_check,
    independence_scan,
    realization_check,
)

logger = logging.getLogger(__name__)

COMMANDS = ("check", "linearize", "symmetrize", "demo-flow", "all")

PASS, FAIL, DEGENERATE = "PASS", "FAIL", "DEGENERATE"

RESCALING_HINT = (
    "rescale the system by a nonconstant function m (document field 'rescaling'), "
    "replacing X by m*X and nu by m*nu, so that div(m*X) is not identically zero"
)

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z_0-9]*\Z")


# System documents =====================================================================


@dataclass(frozen=True)
class SystemDocument:
    """A validated system document.

    Parameters
    ----------
    name : str
        system label (the file stem unless the document sets ``name``)
    variables : tuple of str
    vector_field, integrals : tuple of str
        expression strings as written in the document
    hamiltonian, nu : str
    domain : tuple of (float, float)
    samples : int
        admissible points per stage
    seed : int
    tolerances : Tolerances
    kernel_elements : tuple of KernelElement
    rescaling : str, optional
    flow : FlowSpec, optional
    system : IntegrableSystem
        the system the pipeline runs on, rescaling already applied
    """

    name: str
    variables: Tuple[str, ...]
    vector_field: Tuple[str, ...]
    integrals: Tuple[str, ...]
    hamiltonian: str
    nu: str
    domain: Tuple[Tuple[float, float], ...]
    samples: int
    seed: int
    tolerances: Tolerances
    kernel_elements: Tuple[KernelElement, ...]
    rescaling: Optional[str]
    flow: Optional[FlowSpec]
    system: IntegrableSystem

    @property
    def dimension(self) -> int:
        return len(self.variables)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        samples: Optional[int] = None,
        tolerances: Optional[Dict[str, float]] = None,
    ) -> "SystemDocument":
        """Apply command line overrides."""
        doc = self
        if seed is not None:
            doc = replace(doc, seed=int(seed), system=replace(doc.system, seed=int(seed)))
        if samples is not None:
            if int(samples) < 1:
                raise SchemaError(f"must be at least 1, got {samples}", path="samples")
            doc = replace(doc, samples=int(samples))
        if tolerances:
            tol = doc.tolerances.override(**tolerances)
            doc = replace(
                doc,
                tolerances=tol,
                system=replace(doc.system, tolerances=tol),
                kernel_elements=tuple(
                    replace(k, tolerance=tol.kernel) for k in doc.kernel_elements
                ),
            )
        return doc


def _require(raw: dict, key: str, kind, path: str = ""):
    if key not in raw:
        raise SchemaError("missing required field", path=path + key)
    value = raw[key]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise SchemaError(f"expected {names}, got {type(value).__name__}", path=path + key)
    return value


def _string_list(raw: dict, key: str, length: int) -> Tuple[str, ...]:
    values = _require(raw, key, list)
    if len(values) != length:
        raise SchemaError(f"expected {length} entries, got {len(values)}", path=key)
    for i, value in enumerate(values):
        if not isinstance(value, str):
            raise SchemaError(f"expected an expression string, got {value!r}", path=f"{key}.{i}")
    return tuple(values)


def _domain(raw: dict, n: int) -> Tuple[Tuple[float, float], ...]:
    values = _require(raw, "domain", list)
    if len(values) != n:
        raise SchemaError(f"expected {n} intervals, got {len(values)}", path="domain")
    domain = []
    for i, interval in enumerate(values):
        if (
            not isinstance(interval, list)
            or len(interval) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in interval)
        ):
            raise SchemaError(f"expected [lo, hi], got {interval!r}", path=f"domain.{i}")
        lo, hi = float(interval[0]), float(interval[1])
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise SchemaError(f"need finite lo < hi, got [{lo}, {hi}]", path=f"domain.{i}")
        domain.append((lo, hi))
    return tuple(domain)


def _kernel_elements(
    raw: dict, n: int, seed: int, tol: float
) -> Tuple[KernelElement, ...]:
    entries = raw.get("kernel_elements", [])
    if not isinstance(entries, list):
        raise SchemaError("expected a list", path="kernel_elements")
    targets = tuple(f"u{i + 1}" for i in range(n))
    elements = []
    for i, entry in enumerate(entries):
        path = f"kernel_elements.{i}"
        if not isinstance(entry, dict) or len(set(entry) & {"matrix", "expressions"}) != 1:
            raise SchemaError("expected exactly one of 'matrix' or 'expressions'", path=path)
        label = str(entry.get("label", f"k{i}"))
        if "matrix" in entry:
            matrix = entry["matrix"]
            if not isinstance(matrix, list) or not all(
                isinstance(row, list)
                and all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in row)
                for row in matrix
            ):
                raise SchemaError("expected a list of numeric rows", path=path + ".matrix")
            try:
                A = np.array(matrix, dtype=float)
                if A.shape != (n, n):
                    raise DimensionMismatch(f"expected a {n}x{n} matrix, got shape {A.shape}")
                elements.append(kernel_linear(A, targets, label=label, tol=tol))
            except (DimensionMismatch, ValueError) as err:
                raise SchemaError(str(err), path=path + ".matrix") from err
        else:
            texts = entry["expressions"]
            if not isinstance(texts, list) or len(texts) != n or not all(isinstance(t, str) for t in texts):
                raise SchemaError(f"expected {n} expression strings", path=path + ".expressions")
            elements.append(kernel_from_expressions(
                    texts, targets, label=label, seed=seed, tol=tol
                ))
    return tuple(elements)


def _flow(raw: dict) -> Optional[FlowSpec]:
    if "flow" not in raw:
        return None
    spec = raw["flow"]
    if not isinstance(spec, dict):
        raise SchemaError("expected an object", path="flow")
    known = {"epsilon", "horizon", "integrator", "tol", "step", "samples"}
    unknown = set(spec) - known
    if unknown:
        raise SchemaError(f"unknown keys {sorted(unknown)}", path="flow")
    try:
        return FlowSpec(**spec)
    except (TypeError, ValueError) as err:
        raise SchemaError(str(err), path="flow") from err


def parse_document(raw: dict, name: str = "system") -> SystemDocument:
    """Validate a decoded JSON document and build its system.

    Raises
    ------
    SchemaError
        naming the offending field
    ExpressionSyntaxError
        if an expression does not parse
    """
    if not isinstance(raw, dict):
        raise SchemaError("the document must be a JSON object")
    n = _require(raw, "dimension", int)
    if n < 2:
        raise SchemaError(f"must be at least 2, got {n}", path="dimension")
    variables = _string_list(raw, "variables", n)
    for i, v in enumerate(variables):
        if not _IDENTIFIER.match(v) or v in FUNCTIONS:
            raise SchemaError(f"{v!r} is not a usable variable name", path=f"variables.{i}")
    if len(set(variables)) != n:
        raise SchemaError("variable names must be distinct", path="variables")
    vector_field = _string_list(raw, "vector_field", n)
    integrals = _string_list(raw, "integrals", n - 2)
    hamiltonian = _require(raw, "hamiltonian", str)
    nu = _require(raw, "nu", str)
    domain = _domain(raw, n)
    samples = raw.get("samples", 1000)
    seed = raw.get("seed", 0)
    if not isinstance(samples, int) or isinstance(samples, bool) or samples < 1:
        raise SchemaError(f"must be at least 1, got {samples}", path="samples")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise SchemaError(f"expected a non-negative integer, got {seed!r}", path="seed")
    overrides = raw.get("tolerances", {})
    if not isinstance(overrides, dict):
        raise SchemaError("expected an object", path="tolerances")
    tolerances = Tolerances().override(**overrides)
    rescaling = raw.get("rescaling")
    if rescaling is not None and not isinstance(rescaling, str):
        raise SchemaError("expected an expression string", path="rescaling")

    system = IntegrableSystem(
        field=VectorField.from_strings(vector_field, variables),
        casimirs=tuple(parse_expr(t, variables) for t in integrals),
        hamiltonian=parse_expr(hamiltonian, variables),
        nu=parse_expr(nu, variables),
        domain=domain,
        tolerances=tolerances,
        seed=seed,
        name=str(raw.get("name", name)),
    )
    if rescaling is not None:
        system = apply_rescaling(system, parse_expr(rescaling, variables))

    return SystemDocument(
        name=system.name,
        variables=variables,
        vector_field=vector_field,
        integrals=integrals,
        hamiltonian=hamiltonian,
        nu=nu,
        domain=domain,
        samples=samples,
        seed=seed,
        tolerances=tolerances,
        kernel_elements=_kernel_elements(raw, n, seed, tolerances.kernel),
        rescaling=rescaling,
        flow=_flow(raw),
        system=system,
    )


def load_system(path) -> SystemDocument:
    """Load and validate a system document.

    Parameters
    ----------
    path : str or Path
        a JSON file, or the name of a bundled system (see :mod:`integrasym.catalog`)

    Raises
    ------
    FileNotFound
        if the file does not exist and no bundled system has that name
    SchemaError
        if the document is not valid JSON or misses or mistypes a field
    ExpressionSyntaxError
        if an expression does not parse
    """
    file_path = Path(path)
    if not file_path.is_file():
        if str(path) in catalog.names():
            file_path = catalog.path(str(path))
        else:
            raise FileNotFound(f"no such file or bundled system: {path}")
    try:
        raw = json.loads(file_path.read_text())
    except json.JSONDecodeError as err:
        raise SchemaError(f"invalid JSON ({err.msg}) at line {err.lineno}") from err
    except OSError as err:
        raise IoError(f"cannot read {file_path}: {err}") from err
    doc = parse_document(raw, name=file_path.stem)
    logger.info("loaded %s from %s (n = %d)", doc.name, file_path, doc.dimension)
    return doc


# Reports ==============================================================================


@dataclass
class StageResult:
    """Outcome of one pipeline stage."""

    verdict: str
    residual_max: float = 0.0
    residual_mean: float = 0.0
    points: int = 0
    details: dict = field(default_factory=dict)
    wall_time: float = 0.0
    numeric_failure: bool = False

    @classmethod
    def from_report(cls, report, verdict: Optional[str] = None, **details) -> "StageResult":
        return cls(
            verdict=verdict or (PASS if report.passed else FAIL),
            residual_max=report.max,
            residual_mean=report.mean,
            points=report.count,
            details={**report.as_dict(), **details},
        )

    def as_dict(self, timings: bool = False) -> dict:
        details = {
            k: v
            for k, v in self.details.items()
            if k not in ("residual_max", "residual_mean", "points")
        }
        out = {
            "residual_max": self.residual_max,
            "residual_mean": self.residual_mean,
            "points": self.points,
            "verdict": self.verdict,
            "details": details,
        }
        if timings:
            out["wall_time"] = self.wall_time
        return out


@dataclass
class RunReport:
    """Per-stage results of one pipeline run."""

    system: str
    seed: int
    version: str
    stages: Dict[str, StageResult] = field(default_factory=dict)

    @property
    def verdicts(self) -> Dict[str, str]:
        return {name: stage.verdict for name, stage in self.stages.items()}

    @property
    def exit_code(self) -> int:
        verdicts = set(self.verdicts.values())
        if DEGENERATE in verdicts:
            return 2
        if any(stage.numeric_failure for stage in self.stages.values()):
            return 3
        if FAIL in verdicts:
            return 1
        return 0

    def as_dict(self, timings: bool = False) -> dict:
        return _jsonable(
            {
                "system": self.system,
                "seed": self.seed,
                "version": self.version,
                "stages": {k: v.as_dict(timings) for k, v in self.stages.items()},
                "verdicts": self.verdicts,
            }
        )


def _jsonable(value):
    """Plain JSON types; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    return value


def emit_report(report: RunReport, path=None, timings: bool = False) -> str:
    """Write the report as pretty-printed JSON (to stdout when ``path`` is None or "-").

    Raises
    ------
    IoError
        if the file cannot be written
    """
    text = json.dumps(report.as_dict(timings), indent=2, allow_nan=False) + "\n"
    if path is None or str(path) == "-":
        _sys.stdout.write(text)
        return text
    try:
        Path(path).write_text(text)
    except OSError as err:
        raise IoError(f"cannot write report to {path}: {err}") from err
    logger.info("report written to %s", path)
    return text


# Pipeline =============================================================================


def diagnose_degeneracy(system: IntegrableSystem, stats: Optional[SampleResult]) -> dict:
    """Explain why no admissible points exist."""
    if simplify(system.divergence) == ZERO:
        cause = "div X ≡ 0"
    elif simplify(system.nu).is_constant:
        cause = "nu is constant"
    elif stats is not None and stats.rejected:
        reason = max(stats.rejected, key=lambda k: stats.rejected[k])
        cause = {
            "nonfinite": "the field or an integral is undefined on the domain",
            "nu": "nu vanishes on the domain",
            "oset": "the domain lies in the O-set",
            "det": "the chart Jacobian is singular on the domain",
        }[reason]
    else:
        cause = "no admissible points"
    return {"cause": cause, "hint": RESCALING_HINT}


class _Pipeline:
    """Lazily shared state of one run: chart, admissible sample, certificates."""

    def __init__(self, doc: SystemDocument):
        self.doc = doc
        self.system = doc.system

    @cached_property
    def chart(self) -> LinearizingChart:
        return build_chart(self.system)

    @cached_property
    def plan(self) -> SamplePlan:
        return SamplePlan.for_system(self.system, self.doc.samples, self.doc.seed)

    @cached_property
    def sample(self) -> SampleResult:
        return draw_admissible(self.system, self.plan, self.chart)

    @cached_property
    def regular_points(self) -> np.ndarray:
        """Uniform points where every expression is finite and ``|nu| > delta_nu``."""
        sys = self.system
        rng = np.random.default_rng(self.doc.seed)
        bounds = sys.bounds
        X = bounds[:, 0] + (bounds[:, 1] - bounds[:, 0]) * rng.random((self.doc.samples, sys.dimension))
        with np.errstate(all="ignore"):
            nu = evaluate_batch(sys.nu, sys.variables, X, strict=False)
            ok = np.isfinite(nu) & (np.abs(nu) > sys.tolerances.nu)
            ok &= np.all(np.isfinite(sys.field.evaluate(X, strict=False)), axis=-1)
        return X[ok]

    @cached_property
    def certificates(self) -> List[SymmetryCertificate]:
        return [
            symmetry_certificate(self.system, self.chart, k, self.plan, self.sample.points)
            for k in self.doc.kernel_elements
        ]

    # stages

    def conservation(self) -> StageResult:
        return StageResult.from_report(conservation_check(self.system, self.regular_points))

    def independence(self) -> StageResult:
        points = self.regular_points
        flags, proxies = independence_scan(self.system, points)
        report = summarize((~flags).astype(float), points, 0.5)
        return StageResult.from_report(
            report,
            dependent_points=int(np.sum(~flags)),
            min_proxy=float(np.min(proxies)) if proxies.size else None,
        )

    def realization(self) -> StageResult:
        report = realization_check(self.system, self.regular_points)
        identity = divergence_identity_check(self.system, self.regular_points)
        return StageResult.from_report(
            report,
            field=[str(c) for c in self.system.field.components],
            hamiltonian_field=[str(c) for c in self.system.hamiltonian_field.components],
            divergence=str(self.system.divergence),
            divergence_identity={"residual_max": identity.max, "passed": identity.passed},
        )

    def admissibility(self) -> StageResult:
        try:
            sample = self.sample
        except DegenerateError as err:
            stats = getattr(err, "stats", None)
            return StageResult(
                verdict=DEGENERATE,
                residual_max=1.0 if stats is None else stats.rejection_fraction,
                residual_mean=1.0 if stats is None else stats.rejection_fraction,
                points=0 if stats is None else int(stats.points.shape[0]),
                details={
                    "error": str(err),
                    **({} if stats is None else stats.as_dict()),
                    **diagnose_degeneracy(self.system, stats),
                },
            )
        return StageResult(
            verdict=PASS,
            residual_max=sample.rejection_fraction,
            residual_mean=sample.rejection_fraction,
            points=int(sample.points.shape[0]),
            details=sample.as_dict(),
        )

    def linearization(self) -> StageResult:
        points = self.sample.points
        report = linearization_check(self.system, self.chart, points)
        symbolic, numeric = chart_determinant_scan(self.chart, points)
        agreement = np.abs(symbolic - numeric) / (1.0 + np.abs(numeric))
        return StageResult.from_report(
            report,
            determinant=str(self.chart.determinant),
            determinant_agreement_max=float(np.max(agreement)) if agreement.size else 0.0,
        )

    def symmetrize(self) -> StageResult:
        certificates = self.certificates
        if not certificates:
            return StageResult(verdict=PASS, details={"certificates": []})
        worst = max(certificates, key=lambda c: c.report.max)
        return StageResult(
            verdict=PASS if all(c.valid for c in certificates) else FAIL,
            residual_max=worst.report.max,
            residual_mean=float(np.mean([c.report.mean for c in certificates])),
            points=worst.report.count,
            details={"certificates": [c.as_dict() for c in certificates]},
        )

    def orbits(self, spec: FlowSpec) -> StageResult:
        valid = [c for c in self.certificates if c.valid]
        reports = [
            (c.label, orbit_permutation_check(self.system, c, spec)) for c in valid
        ]
        if not reports:
            return StageResult(verdict=PASS, details={"orbits": {}})
        worst = max((r for _, r in reports), key=lambda r: r.max)
        return StageResult(
            verdict=PASS if all(r.passed for _, r in reports) else FAIL,
            residual_max=worst.max,
            residual_mean=float(np.mean([r.mean for _, r in reports])),
            points=worst.count,
            details={"orbits": {label: r.as_dict() for label, r in reports}},
        )


def _run_stage(report: RunReport, name: str, stage) -> bool:
    """Run one stage into ``report``; True when it passed."""
    start = time.perf_counter()
    try:
        result = stage()
    except DegenerateError as err:
        result = StageResult(verdict=DEGENERATE, details={"error": str(err), "error_type": type(err).__name__})
    except NumericFailure as err:
        result = StageResult(
            verdict=FAIL,
            details={"error": str(err), "error_type": type(err).__name__},
            numeric_failure=True,
        )
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as err:
        result = StageResult(verdict=FAIL, details={"error": str(err), "error_type": type(err).__name__})
    result.wall_time = time.perf_counter() - start
    report.stages[name] = result
    logger.info("stage %s: %s (residual max %.3e, %.3f s)", name, result.verdict, result.residual_max, result.wall_time)
    return result.verdict == PASS


def run_pipeline(doc: SystemDocument, command: str = "all") -> RunReport:
    """Run a pipeline command on a loaded document.

    ``check`` covers conservation, independence, realization and
    admissibility; ``linearize`` checks the chart; ``symmetrize`` certifies
    every kernel element; ``demo-flow`` runs the orbit check for every valid
    certificate, with the document's ``flow`` settings or the defaults.
    ``all`` runs everything in that order and stops at the first stage that
    does not pass. Mathematical failures end up as stage verdicts,
    never as exceptions.
    """
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}, expected one of {COMMANDS}")
    from . import __version__

    report = RunReport(system=doc.name, seed=doc.seed, version=__version__)
    pipeline = _Pipeline(doc)
    stages = []
    if command in ("check", "all"):
        stages += [
            ("conservation", pipeline.conservation),
            ("independence", pipeline.independence),
            ("realization", pipeline.realization),
            ("admissibility", pipeline.admissibility),
        ]
    if command in ("linearize", "all"):
        stages.append(("linearization", pipeline.linearization))
    if command in ("symmetrize", "demo-flow", "all"):
        stages.append(("certificates", pipeline.symmetrize))
    if command in ("demo-flow", "all"):
        spec = doc.flow or FlowSpec()
        stages.append(("orbit", lambda: pipeline.orbits(spec)))
    for name, stage in stages:
        if not _run_stage(report, name, stage) and command == "all":
            logger.warning("stage %s did not pass, skipping the remaining stages", name)
            break
    return report


# Command line =========================================================================


def _parse_tolerances(values: List[str]) -> Dict[str, float]:
    out = {}
    for item in values or []:
        name, sep, value = item.partition("=")
        try:
            if not sep:
                raise ValueError
            out[name.strip()] = float(value)
        except ValueError:
            raise SchemaError(f"expected NAME=VALUE, got {item!r}", path="--tol") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    from . import __version__

    parser = argparse.ArgumentParser(
        prog="integrasym",
        description="Realize, linearize and symmetrize completely integrable systems.",
    )
    parser.add_argument("command", choices=COMMANDS + ("systems",))
    parser.add_argument("-i", "--input", help="system document (JSON) or bundled system name")
    parser.add_argument("-o", "--output", default="-", help="report path, '-' for stdout")
    parser.add_argument("--seed", type=int, help="override the document seed")
    parser.add_argument("--samples", type=int, help="override the admissible sample size")
    parser.add_argument(
        "--tol", action="append", metavar="NAME=VALUE", help="override a tolerance (repeatable)"
    )
    parser.add_argument("--timings", action="store_true", help="include stage wall times")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Command line entry point; returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=_sys.stderr)

    if args.command == "systems":
        _sys.stdout.write(catalog.systems().to_string(index=False) + "\n")
        return 0
    if not args.input:
        parser.error("--input is required for pipeline commands")

    try:
        doc = load_system(args.input).with_overrides(
            seed=args.seed, samples=args.samples, tolerances=_parse_tolerances(args.tol)
        )
    except IntegrasymError as err:
        logger.error("%s", err)
        return 1

    report = run_pipeline(doc, args.command)
    try:
        emit_report(report, args.output, timings=args.timings)
    except IoError as err:
        logger.error("%s", err)
        return 1
    return report.exit_code


if __name__ == "__main__":
    _sys.exit(main())
