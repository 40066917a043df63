"""Carrier statistics function families and their shifted relations.

A statistics function F maps a (dimensionless) chemical-potential argument
to a normalized density.  Three families are provided:

* :class:`Boltzmann` - F(z) = exp(z), the nondegenerate limit,
* :class:`FermiDiracHalf` - the Fermi-Dirac integral of order 1/2, for
  electrons and holes in inorganic semiconductors,
* :class:`Blakemore` - F(z) = 1 / (exp(-z) + gamma), bounded by 1/gamma,
  used for ionic vacancies so their density saturates below the density
  of available lattice sites.

:class:`ShiftedStatistics` combines a family with a constant band-edge
shift ``zeta`` and a density-of-states scale ``n_states``, realizing the
relation u = N * F(v + zeta) between density u and chemical potential v,
together with its inverse, the diffusion-enhancement factor and the exact
chemical free-energy density used by the energy diagnostics.

All operations are pure and accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .fermi_integrals import fd, fd_log

__all__ = [
    "StatisticsDomainError",
    "StatisticsRangeError",
    "Boltzmann",
    "FermiDiracHalf",
    "Blakemore",
    "StatisticsKind",
    "ShiftedStatistics",
    "AxiomCheck",
    "AxiomReport",
    "verify_axioms",
    "parse_kind",
]

# Open-interval guard band for inverses, as a fraction of the value range.
_RANGE_GUARD = 1e-14


class StatisticsDomainError(ValueError):
    """Raised for non-finite or otherwise inadmissible arguments."""


class StatisticsRangeError(ValueError):
    """Raised when a density argument leaves the open range of N * F."""


def _check_finite(x, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise StatisticsDomainError(f"{what} must be finite, got {x!r}")
    return arr


def _scalar_like(template, arr: np.ndarray):
    if np.ndim(template) == 0:
        return float(arr.reshape(-1)[0]) if arr.ndim else float(arr)
    return arr


@dataclass(frozen=True)
class Boltzmann:
    """Exponential statistics, F(z) = e^z."""

    label: str = field(default="boltzmann", init=False, repr=False)
    range_max: float = field(default=math.inf, init=False, repr=False)

    def value(self, z):
        z = _check_finite(z, "statistics argument")
        return _scalar_like(z, np.exp(z))

    def derivative(self, z):
        return self.value(z)

    def log_value(self, z):
        z = _check_finite(z, "statistics argument")
        return _scalar_like(z, z.copy() if z.ndim else z)

    def inverse(self, u):
        u = _check_finite(u, "normalized density")
        if np.any(u <= 0.0):
            raise StatisticsRangeError(
                "normalized density must be > 0 for exponential statistics")
        return _scalar_like(u, np.log(u))

    def antiderivative(self, z):
        return self.value(z)


@dataclass(frozen=True)
class FermiDiracHalf:
    """Fermi-Dirac integral of order one half (normalized by Gamma(3/2))."""

    label: str = field(default="fermi_dirac_half", init=False, repr=False)
    range_max: float = field(default=math.inf, init=False, repr=False)

    def value(self, z):
        z = _check_finite(z, "statistics argument")
        return _scalar_like(z, np.atleast_1d(fd(0.5, z)))

    def derivative(self, z):
        # d/dz F_{1/2} = F_{-1/2}
        z = _check_finite(z, "statistics argument")
        return _scalar_like(z, np.atleast_1d(fd(-0.5, z)))

    def log_value(self, z):
        z = _check_finite(z, "statistics argument")
        return _scalar_like(z, np.atleast_1d(fd_log(0.5, z)))

    def inverse(self, u, guess=None):
        u = _check_finite(u, "normalized density")
        w = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any(w <= 0.0):
            raise StatisticsRangeError(
                "normalized density must be > 0 for Fermi-Dirac statistics")
        if guess is not None and np.shape(guess) == w.shape:
            eta = np.array(guess, dtype=float)
        else:
            # Boltzmann branch for small w, degenerate asymptote for large w
            eta = np.where(w < 1.0, np.log(w),
                           (0.75 * math.sqrt(math.pi) * np.maximum(w, 1.0)) ** (2.0 / 3.0))
        # below eta ~ -35 the Boltzmann correction is < 1e-16 relative
        active = eta > -35.0
        for _ in range(60):
            if not active.any():
                break
            f = fd(0.5, eta[active])
            step = (f - w[active]) / fd(-0.5, eta[active])
            step = np.minimum(4.0, np.maximum(-4.0, step))
            eta[active] -= step
            if np.max(np.abs(step)) < 1e-14 * max(1.0, np.max(np.abs(eta))):
                break
        return _scalar_like(u, eta)

    def antiderivative(self, z):
        # int F_{1/2} = F_{3/2}
        z = _check_finite(z, "statistics argument")
        return _scalar_like(z, np.atleast_1d(fd(1.5, z)))


@dataclass(frozen=True)
class Blakemore:
    """Bounded statistics F(z) = 1 / (e^{-z} + gamma), range (0, 1/gamma)."""

    gamma: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0.0):
            raise StatisticsDomainError(
                f"Blakemore gamma must be positive and finite, got {self.gamma!r}")

    @property
    def label(self) -> str:
        return f"blakemore(gamma={self.gamma:g})"

    @property
    def range_max(self) -> float:
        return 1.0 / self.gamma

    def value(self, z):
        z = _check_finite(z, "statistics argument")
        g = self.gamma
        ez = np.exp(np.minimum(z, 0.0))
        pos = 1.0 / (np.exp(-np.maximum(z, 0.0)) + g)
        neg = ez / (1.0 + g * ez)
        return _scalar_like(z, np.where(z > 0.0, pos, neg))

    def derivative(self, z):
        z = _check_finite(z, "statistics argument")
        g = self.gamma
        ez = np.exp(np.minimum(z, 0.0))
        emz = np.exp(-np.maximum(z, 0.0))
        pos = emz / (emz + g) ** 2
        neg = ez / (1.0 + g * ez) ** 2
        return _scalar_like(z, np.where(z > 0.0, pos, neg))

    def second_derivative(self, z):
        z = _check_finite(z, "statistics argument")
        g = self.gamma
        ez = np.exp(np.minimum(z, 0.0))
        emz = np.exp(-np.maximum(z, 0.0))
        pos = emz * (emz - g) / (emz + g) ** 3
        neg = ez * (1.0 - g * ez) / (1.0 + g * ez) ** 3
        return _scalar_like(z, np.where(z > 0.0, pos, neg))

    def log_value(self, z):
        z = _check_finite(z, "statistics argument")
        g = self.gamma
        neg = np.minimum(z, 0.0) - np.log1p(g * np.exp(np.minimum(z, 0.0)))
        pos = -np.log(g + np.exp(-np.maximum(z, 0.0)))
        return _scalar_like(z, np.where(z > 0.0, pos, neg))

    def inverse(self, u):
        u = _check_finite(u, "normalized density")
        w = np.atleast_1d(np.asarray(u, dtype=float))
        top = self.range_max
        if np.any(w <= _RANGE_GUARD * top):
            raise StatisticsRangeError(
                f"normalized density {np.min(w):g} at or below the lower "
                f"range limit 0 of Blakemore statistics")
        if np.any(w >= top * (1.0 - _RANGE_GUARD)):
            raise StatisticsRangeError(
                f"normalized density {np.max(w):g} at or above the upper "
                f"range limit 1/gamma = {top:g} of Blakemore statistics")
        # z = ln(w / (1 - gamma w)), evaluated cancellation-free
        return _scalar_like(u, np.log(w) - np.log1p(-self.gamma * w))

    def antiderivative(self, z):
        # int F = (1/gamma) ln(1 + gamma e^z)
        z = _check_finite(z, "statistics argument")
        g = self.gamma
        neg = np.log1p(g * np.exp(np.minimum(z, 0.0)))
        pos = np.maximum(z, 0.0) + np.log(g + np.exp(-np.maximum(z, 0.0)))
        return _scalar_like(z, np.where(z > 0.0, pos, neg) / g)


StatisticsKind = Union[Boltzmann, FermiDiracHalf, Blakemore]


def parse_kind(spec) -> StatisticsKind:
    """Build a statistics kind from its config representation.

    Accepts the strings ``"boltzmann"`` / ``"fermi_dirac_half"`` or a
    mapping ``{"blakemore": gamma}``.
    """
    if isinstance(spec, str):
        if spec == "boltzmann":
            return Boltzmann()
        if spec == "fermi_dirac_half":
            return FermiDiracHalf()
        raise StatisticsDomainError(f"unknown statistics kind {spec!r}")
    if isinstance(spec, dict) and set(spec) == {"blakemore"}:
        return Blakemore(gamma=float(spec["blakemore"]))
    raise StatisticsDomainError(f"unknown statistics kind {spec!r}")


@dataclass(frozen=True)
class ShiftedStatistics:
    """Statistics family with band-edge shift and density-of-states scale.

    Realizes u = n_states * F(v + zeta) for the chemical potential v and
    provides the inverse map plus the derived quantities the assembly and
    the energy diagnostics need.
    """

    kind: StatisticsKind
    zeta: float = 0.0
    n_states: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.n_states) and self.n_states > 0.0):
            raise StatisticsDomainError(
                f"n_states must be positive and finite, got {self.n_states!r}")
        if not np.isfinite(self.zeta):
            raise StatisticsDomainError(f"zeta must be finite, got {self.zeta!r}")

    @property
    def density_max(self) -> float:
        """Upper end of the open density range (inf for unbounded kinds)."""
        return self.n_states * self.kind.range_max

    def carrier_density(self, v):
        """Density u = n_states * F(v + zeta)."""
        v = _check_finite(v, "chemical potential")
        return _scalar_like(v, self.n_states * np.atleast_1d(self.kind.value(v + self.zeta)))

    def eta(self, u, guess=None):
        """Statistics argument eta = F^{-1}(u / n_states) = v + zeta."""
        w = np.asarray(u, dtype=float) / self.n_states
        if guess is not None and isinstance(self.kind, FermiDiracHalf):
            return self.kind.inverse(w, guess=guess)
        return self.kind.inverse(w)

    def chemical_potential(self, u):
        """Inverse of :meth:`carrier_density`."""
        return self.eta(u) - self.zeta

    def diffusion_enhancement(self, u):
        """Statistics factor g(u) = (u/N) * d(F^{-1})/dw at w = u/N.

        Equals one identically for exponential statistics; grows without
        bound as a bounded family approaches saturation.
        """
        u = _check_finite(u, "density")
        w = np.atleast_1d(np.asarray(u, dtype=float)) / self.n_states
        if isinstance(self.kind, Boltzmann):
            if np.any(w <= 0.0):
                raise StatisticsRangeError("density must be > 0")
            return _scalar_like(u, np.ones_like(w))
        eta = self.kind.inverse(w)
        return _scalar_like(u, w / np.atleast_1d(self.kind.derivative(eta)))

    def energy_density(self, u, v_ref):
        """Exact chemical free-energy density relative to potential v_ref.

        Returns the antiderivative int_{v_ref}^{v(u)} [u - N F(y + zeta)] dy,
        which is nonnegative, convex in u and vanishes at u = N F(v_ref+zeta).
        """
        u = _check_finite(u, "density")
        v_ref = _check_finite(v_ref, "reference potential")
        uu = np.atleast_1d(np.asarray(u, dtype=float))
        vr = np.broadcast_to(np.atleast_1d(np.asarray(v_ref, dtype=float)), uu.shape)
        v = np.atleast_1d(self.chemical_potential(uu))
        anti = self.kind.antiderivative
        phi = uu * (v - vr) - self.n_states * (
            np.atleast_1d(anti(v + self.zeta)) - np.atleast_1d(anti(vr + self.zeta)))
        return _scalar_like(u, phi)


# -- axiom verification -------------------------------------------------

@dataclass(frozen=True)
class AxiomCheck:
    axiom: str
    description: str
    passed: bool
    n_points: int
    worst_margin: float
    worst_z: float


@dataclass(frozen=True)
class AxiomReport:
    kind_label: str
    family: str
    checks: tuple[AxiomCheck, ...]
    constants: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def rows(self):
        """Tabular form: one (kind, axiom, passed, margin, z, points) row each."""
        return [
            (self.kind_label, c.axiom, c.passed, c.worst_margin, c.worst_z, c.n_points)
            for c in self.checks
        ]


def _margin_check(axiom, description, margins, zs, strict=True, slack=0.0):
    margins = np.atleast_1d(np.asarray(margins, dtype=float))
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    if margins.size == 0:
        return AxiomCheck(axiom, description, True, 0, math.inf, math.nan)
    i = int(np.argmin(margins))
    worst = float(margins[i])
    ok = worst > -slack if strict else worst >= -slack
    return AxiomCheck(axiom, description, bool(ok), int(margins.size), worst,
                      float(zs[i]))


def _electron_hole_axioms(kind, grid):
    f = np.atleast_1d(kind.value(grid))
    fp = np.atleast_1d(kind.derivative(grid))
    logf = np.atleast_1d(kind.log_value(grid))
    checks = [
        _margin_check("derivative_positive", "F'(z) > 0", fp, grid),
        _margin_check("strictly_increasing", "F(z1) < F(z2) for z1 < z2",
                      np.diff(f), grid[1:]) if grid.size > 1 else
        AxiomCheck("strictly_increasing", "F(z1) < F(z2) for z1 < z2",
                   True, 0, math.inf, math.nan),
        _margin_check("derivative_at_most_value", "F'(z) <= F(z)",
                      1.0 + 1e-12 - fp / f, grid, strict=False),
        _margin_check("value_at_most_exponential", "F(z) <= e^z",
                      grid + 1e-12 - logf, grid, strict=False),
    ]
    z_lo = min(float(grid.min()), -40.0)
    z_hi = max(float(grid.max()), 40.0)
    checks.append(_margin_check(
        "vanishes_at_minus_infinity", "F -> 0 as z -> -inf (probe point)",
        [z_lo + 1e-12 - float(kind.log_value(z_lo))], [z_lo], strict=False))
    checks.append(_margin_check(
        "unbounded_above", "F -> +inf as z -> +inf (probe point)",
        [float(kind.value(z_hi)) - 1.0], [z_hi]))
    nonneg = grid[grid >= 0.0]
    constants = {}
    if nonneg.size:
        ratios = nonneg / (1.0 + np.atleast_1d(kind.value(nonneg)))
        constants["growth_bound_c"] = float(np.max(ratios))
        checks.append(AxiomCheck(
            "linear_growth_bound", "z <= c (1 + F(z)) on z >= 0 (empirical c)",
            True, int(nonneg.size), constants["growth_bound_c"],
            float(nonneg[np.argmax(ratios)])))
    return checks, constants


def _vacancy_axioms(kind: Blakemore, grid):
    g = kind.gamma
    f = np.atleast_1d(kind.value(grid))
    fp = np.atleast_1d(kind.derivative(grid))
    ez = np.exp(np.minimum(grid, 0.0))
    emz = np.exp(-np.maximum(grid, 0.0))
    # cancellation-free margins:
    #   F - F' = gamma F^2,   e^z - F = gamma e^z / (e^{-z} + gamma)
    value_gap = np.where(grid > 0.0, g * np.exp(np.minimum(grid, 500.0)) / (emz + g),
                         g * ez * ez / (1.0 + g * ez))
    checks = [
        _margin_check("derivative_positive", "F'(z) > 0", fp, grid),
        _margin_check("strictly_increasing", "F(z1) < F(z2) for z1 < z2",
                      np.diff(f), grid[1:]) if grid.size > 1 else
        AxiomCheck("strictly_increasing", "F(z1) < F(z2) for z1 < z2",
                   True, 0, math.inf, math.nan),
        _margin_check("derivative_strictly_below_value", "F'(z) < F(z)",
                      g * f * f, grid),
        _margin_check("value_strictly_below_exponential", "F(z) < e^z",
                      value_gap, grid),
    ]
    z_lo = min(float(grid.min()), -40.0)
    z_hi = max(float(grid.max()), 40.0)
    checks.append(_margin_check(
        "vanishes_at_minus_infinity", "F -> 0 as z -> -inf (probe point)",
        [z_lo + 1e-12 - float(kind.log_value(z_lo))], [z_lo], strict=False))
    checks.append(_margin_check(
        "saturates_at_plus_infinity", "F -> 1/gamma as z -> +inf (probe point)",
        [1e-10 / g - abs(1.0 / g - float(kind.value(z_hi)))], [z_hi]))
    # curvature axioms hold on the open positive half-line; z = 0 is the
    # boundary case where F'' vanishes exactly for gamma = 1
    pos = grid[grid > 0.0]
    constants = {}
    if pos.size:
        fpp = np.atleast_1d(kind.second_derivative(pos))
        fp_pos = np.atleast_1d(kind.derivative(pos))
        checks.append(_margin_check(
            "concave_on_positive_axis", "F''(z) < 0 for z > 0", -fpp, pos))
        checks.append(_margin_check(
            "curvature_ratio_below_one", "|F''(z)| / F'(z) < 1 for z > 0",
            1.0 - np.abs(fpp) / fp_pos, pos))
        rate = (np.exp(-np.minimum(pos, 500.0)) + g) ** 2
        checks.append(_margin_check(
            "inverse_rate_above_one", "1 < (e^z F'(z))^{-1} for z > 0",
            rate - 1.0, pos))
        constants["inverse_rate_c"] = float(np.max(rate))
    return checks, constants


def verify_axioms(kind: StatisticsKind, grid) -> AxiomReport:
    """Check the structural axioms of a statistics family on a z grid.

    Electron/hole families are checked for monotonicity, the bounds
    0 < F' <= F <= e^z and the linear growth bound on the nonnegative
    axis (whose constant is existential and therefore reported, not
    asserted).  Blakemore families are checked for the bounded-statistics
    axiom set: strict bounds, saturation, concavity and curvature-ratio
    conditions on the positive half-line, and the inverse-rate window with
    its empirical constant.
    """
    grid = _check_finite(grid, "axiom grid")
    grid = np.unique(np.atleast_1d(grid))
    if grid.size == 0:
        raise StatisticsDomainError("axiom grid must be non-empty")
    if isinstance(kind, Blakemore):
        checks, constants = _vacancy_axioms(kind, grid)
        family = "vacancy"
    else:
        checks, constants = _electron_hole_axioms(kind, grid)
        family = "electron_hole"
    return AxiomReport(kind.label, family, tuple(checks), constants)
