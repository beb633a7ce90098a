"""Constants and default thresholds used throughout package."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import SchemaError


@dataclass(frozen=True)
class Constant:
    """Constants dataclass."""

    value: float
    long_name: str
    units: str


@dataclass(frozen=True)
class Thresholds:
    """Rejection thresholds defining admissible points."""

    nu = Constant(
        value=1e-8, long_name="minimum magnitude of the rescaling nu", units="dimensionless"
    )
    oset = Constant(
        value=1e-8,
        long_name="relative magnitude below which a point lies in the O-set",
        units="dimensionless",
    )
    det = Constant(
        value=1e-8,
        long_name="Hadamard-normalized chart determinant threshold",
        units="dimensionless",
    )
    rank = Constant(
        value=1e-8,
        long_name="relative minor threshold for independence of the integrals",
        units="dimensionless",
    )


@dataclass(frozen=True)
class Residuals:
    """Residual tolerances deciding PASS / FAIL of a check."""

    realization = Constant(
        value=1e-9, long_name="Hamilton-Poisson realization residual", units="relative"
    )
    conservation = Constant(
        value=1e-9, long_name="conservation residual X(C)", units="relative"
    )
    linearization = Constant(
        value=1e-8, long_name="linearization identity residual", units="relative"
    )
    symmetry = Constant(
        value=1e-6, long_name="symmetry residual [X,Y] - mu X", units="relative"
    )
    kernel = Constant(
        value=1e-10, long_name="kernel residual [Euler field, Ybar]", units="absolute"
    )
    orbit = Constant(
        value=1e-6, long_name="level-set drift along a mapped orbit", units="relative"
    )
    fd_agreement = Constant(
        value=1e-6,
        long_name="agreement between exact and finite-difference brackets",
        units="relative",
    )


@dataclass(frozen=True)
class Numerics:
    """Fixed numerical parameters."""

    division_guard = Constant(
        value=1e-300, long_name="machine-zero guard for division", units="absolute"
    )
    fd_step = Constant(
        value=1e-6, long_name="relative central finite-difference step", units="relative"
    )
    newton_iterations = Constant(
        value=50, long_name="maximum Newton iterations", units="count"
    )
    newton_halvings = Constant(
        value=20, long_name="maximum step halvings per Newton step", units="count"
    )
    newton_tol = Constant(
        value=1e-12, long_name="Newton residual tolerance", units="relative"
    )
    kernel_samples = Constant(
        value=200, long_name="sample count for kernel verification", units="count"
    )
    draw_factor = Constant(
        value=100, long_name="draw budget per requested admissible point", units="count"
    )


@dataclass(frozen=True)
class Tolerances:
    """Active thresholds of one problem instance.

    Every field can be overridden by name from a system document or from the
    command line, see :meth:`Tolerances.override`.
    """

    nu: float = Thresholds.nu.value
    oset: float = Thresholds.oset.value
    det: float = Thresholds.det.value
    rank: float = Thresholds.rank.value
    realization: float = Residuals.realization.value
    conservation: float = Residuals.conservation.value
    linearization: float = Residuals.linearization.value
    symmetry: float = Residuals.symmetry.value
    kernel: float = Residuals.kernel.value
    orbit: float = Residuals.orbit.value
    fd_agreement: float = Residuals.fd_agreement.value

    def override(self, **values) -> "Tolerances":
        """Return a copy with the named tolerances replaced.

        Raises
        ------
        SchemaError
            if a name is unknown or a value is not a positive number
        """
        known = {f.name for f in fields(self)}
        for name, value in values.items():
            if name not in known:
                raise SchemaError(
                    f"unknown tolerance {name!r}, expected one of {sorted(known)}",
                    path=f"tolerances.{name}",
                )
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
                raise SchemaError(
                    f"tolerance {name!r} must be a positive number, got {value!r}",
                    path=f"tolerances.{name}",
                )
        return replace(self, **{k: float(v) for k, v in values.items()})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
