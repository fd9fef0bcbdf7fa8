"""
Spectral Models

Dirac operators whose spectra are known in closed form: the twisted circle,
the flat 2-torus and the round unit 2-sphere. Heat traces, equivariant
traces and eta invariants are evaluated as spectral sums truncated at a
cutoff chosen from a Gaussian tail bound, so every value carries a
certificate for what was dropped.

Circle convention: D = -i d/dθ + a on L²(S¹). The spectrum is {m + a},
and rotation by α acts on the eigenline of m + a with character
e^{iα(m+a)}.

Torus convention: T² = R²/Z² with twist (a1, a2). D² has eigenvalue
4π²|m + a|² on each chirality, and translation of the first circle factor
by α/2π acts with character e^{iα(m1+a1)}.

Sphere convention: unit S² with its round metric, optionally twisted by a line
bundle of degree m ≥ 0. D² = J² + 1/4 - m²/4 on each chirality, where J is
total angular momentum; the untwisted level k carries the spin-(k+½)
representation with eigenvalue (k+1)², and the twisted kernel is the
spin-(m-1)/2 representation on chirality +1.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np
from scipy import integrate, linalg

from char_forms import CurvatureMatrix, IsometryNormalAction, equivariant_index_density
from graded_algebra import FLOAT, AlgebraContext, DegenerateActionError
from run_config import get_run_config, parallel_map
from superconnection_jlo import Superconnection, eta_form_integrand

logger = logging.getLogger(__name__)

TAIL_TARGET = 1e-14
NUMERICAL_FLOOR = 1e-14
CANCELLATION_FLOOR = 1e-13
MAX_MODES = 4_000_000

SMALL_T_THRESHOLD = 0.5 - 0.05
LARGE_T_THRESHOLD = -1.5 + 0.05
MIN_FIT_POINTS = 6
MIN_FIT_DECADES = 2.0

INVERTIBLE = "invertible"
ZERO_MODES_EXCLUDED = "zero modes excluded"

PASS = "PASS"
FAIL = "FAIL"
SKIP = "SKIP"

ModeTable = Tuple[np.ndarray, np.ndarray, np.ndarray]


class SpectralError(ValueError):
    """Spectral sum that cannot be formed or certified."""


class DegenerateFitError(ValueError):
    """Too few points or too short a window for a log-log slope."""


def _positive_time(t) -> float:
    t = float(t)
    if not t > 0:
        raise SpectralError(f"time must be positive, got {t}")
    return t


# ==================== MODELS ====================

@dataclass(frozen=True)
class SpectralLine:
    """One eigenspace: eigenvalue, rotation weights (one per dimension), chirality."""
    eigenvalue: float
    weights: Tuple[float, ...]
    chirality: Optional[int] = None

    @property
    def multiplicity(self) -> int:
        return len(self.weights)

    def character(self, alpha: Optional[float] = None) -> complex:
        if alpha is None:
            return complex(self.multiplicity)
        return complex(np.exp(1j * alpha * np.asarray(self.weights)).sum())

    def to_dict(self) -> Dict:
        return {
            "eigenvalue": self.eigenvalue,
            "multiplicity": self.multiplicity,
            "chirality": self.chirality,
        }


@dataclass(frozen=True)
class SpectrumModel:
    """
    Spectrum of a Dirac operator, listed one mode per dimension.

    ``mode_table(cutoff)`` returns (λ, weight, chirality) arrays for every
    mode with |λ| ≤ cutoff; ``shell_count(r)`` bounds the number of modes
    with |λ| in [r, r + 1). For graded models λ is the non-negative root of
    the D² eigenvalue and the chirality column is ±1.
    """
    name: str
    parameters: Dict[str, float]
    mode_table: Callable[[float], ModeTable] = field(repr=False, compare=False)
    shell_count: Callable[[float], float] = field(repr=False, compare=False)
    graded: bool = False
    kernel_dimension: int = 0

    def modes(self, cutoff: float) -> ModeTable:
        lam, weight, chirality = self.mode_table(cutoff)
        if lam.size > MAX_MODES:
            raise SpectralError(f"{self.name}: {lam.size} modes below cutoff {cutoff:.4g}")
        return lam, weight, chirality

    def tail_bound(self, t: float, cutoff: float, power: int = 0) -> float:
        """Bound on Σ |λ|^power e^{-tλ²} over modes beyond the cutoff."""
        total = 0.0
        r = cutoff
        while True:
            term = self.shell_count(r) * (r + 1.0) ** power * math.exp(-t * r * r)
            total += term
            if term <= 1e-6 * TAIL_TARGET and r > cutoff + 1.0:
                return total
            r += 1.0

    def cutoff(self, t: float, power: int = 0, target: float = TAIL_TARGET) -> float:
        t = _positive_time(t)
        cutoff = math.sqrt(math.log(1.0 / target) / t)
        while self.tail_bound(t, cutoff, power) > target:
            cutoff *= 1.2
        return cutoff

    def lines(self, cutoff: float) -> List[SpectralLine]:
        lam, weight, chirality = self.modes(cutoff)
        grouped: Dict[Tuple[float, int], List[float]] = {}
        for value, w, c in zip(lam.tolist(), weight.tolist(), chirality.tolist()):
            grouped.setdefault((value, int(c)), []).append(w)
        return [SpectralLine(value, tuple(ws), c if self.graded else None)
                for (value, c), ws in sorted(grouped.items())]

    def smallest_eigenvalue(self) -> float:
        """Smallest non-zero |λ|."""
        cutoff = 2.0
        while True:
            lam = np.abs(self.modes(cutoff)[0])
            nonzero = lam[lam > 0]
            if nonzero.size:
                return float(nonzero.min())
            cutoff *= 2

    def to_dict(self, cutoff: float = 3.0) -> Dict:
        return {
            "model": self.name,
            "parameters": self.parameters,
            "graded": self.graded,
            "kernel_dimension": self.kernel_dimension,
            "lines": [line.to_dict() for line in self.lines(cutoff)],
        }


def circle_dirac(a: float) -> SpectrumModel:
    """Twisted circle, spectrum {m + a}; a = 0 or 1 has a one-dimensional kernel."""
    a = float(a)
    if not 0.0 <= a <= 1.0:
        raise SpectralError(f"twist must lie in [0, 1], got {a}")

    def table(cutoff: float) -> ModeTable:
        m = np.arange(math.ceil(-cutoff - a), math.floor(cutoff - a) + 1, dtype=float)
        lam = m + a
        return lam, lam.copy(), np.ones_like(lam)

    kernel = 1 if a in (0.0, 1.0) else 0
    return SpectrumModel("circle", {"a": a}, table, lambda r: 2.0, graded=False, kernel_dimension=kernel)


def torus_dirac(a1: float = 0.0, a2: float = 0.0) -> SpectrumModel:
    """Flat square torus; each chirality sees every lattice mode once."""
    a1, a2 = float(a1), float(a2)
    for a in (a1, a2):
        if not 0.0 <= a < 1.0:
            raise SpectralError(f"twist must lie in [0, 1), got {a}")

    def table(cutoff: float) -> ModeTable:
        n = math.ceil(cutoff / (2 * math.pi)) + 1
        m1, m2 = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
        k1 = (m1 + a1).ravel()
        k2 = (m2 + a2).ravel()
        lam = 2 * math.pi * np.hypot(k1, k2)
        keep = lam <= cutoff
        lam, weight = lam[keep], k1[keep]
        ones = np.ones_like(lam)
        return np.concatenate([lam, lam]), np.concatenate([weight, weight]), np.concatenate([ones, -ones])

    def shell_count(r: float) -> float:
        inner = max(r / (2 * math.pi) - 1.0, 0.0)
        outer = (r + 1.0) / (2 * math.pi) + 1.0
        return 2 * math.pi * (outer * outer - inner * inner)

    kernel = 2 if a1 == 0.0 and a2 == 0.0 else 0
    return SpectrumModel("torus", {"a1": a1, "a2": a2}, table, shell_count, graded=True, kernel_dimension=kernel)


def _sphere_table(twist: int) -> Callable[[float], ModeTable]:
    def table(cutoff: float) -> ModeTable:
        lam, weight, chirality = [], [], []

        def add(square: int, spin: float, sign: float):
            weights = np.arange(-spin, spin + 1.0, 1.0)
            lam.append(np.full(weights.size, math.sqrt(square)))
            weight.append(weights)
            chirality.append(np.full(weights.size, sign))

        bound = cutoff * cutoff
        k = 0
        while k * (k + twist) <= bound:
            add(k * (k + twist), (twist - 1) / 2 + k, 1.0)
            if (k + 1) * (k + 1 + twist) <= bound:
                add((k + 1) * (k + 1 + twist), (twist + 1) / 2 + k, -1.0)
            k += 1
        if not lam:
            empty = np.zeros(0)
            return empty, empty, empty
        return np.concatenate(lam), np.concatenate(weight), np.concatenate(chirality)

    return table


def sphere_dirac(twist: int = 0) -> SpectrumModel:
    """Round unit sphere twisted by a line bundle of degree `twist` ≥ 0.

    Level k ≥ 0 of chirality +1 carries spin (twist-1)/2 + k at |λ|² = k(k + twist);
    level k of chirality -1 carries spin (twist+1)/2 + k at |λ|² = (k+1)(k+1+twist).
    The kernel is the spin-(twist-1)/2 representation, so the index is `twist`.
    """
    if int(twist) != twist or twist < 0:
        raise SpectralError(f"line bundle degree must be a non-negative integer, got {twist}")
    twist = int(twist)
    return SpectrumModel("sphere", {"twist": twist}, _sphere_table(twist),
                         lambda r: 4.0 * (r + 1.0) + 2.0 * twist, graded=True, kernel_dimension=twist)


MODEL_BUILDERS: Dict[str, Callable[..., SpectrumModel]] = {
    "circle": circle_dirac,
    "torus": torus_dirac,
    "sphere": sphere_dirac,
}


def build_model(name: str, **parameters) -> SpectrumModel:
    try:
        builder = MODEL_BUILDERS[name]
    except KeyError:
        raise SpectralError(f"unknown model {name!r}; choose from {sorted(MODEL_BUILDERS)}") from None
    return builder(**parameters)


# ==================== SPECTRAL SUMS ====================

@dataclass
class SpectralSum:
    """A truncated spectral sum with its certificate."""
    t: float
    value: complex
    cutoff: float
    truncation_bound: float
    scale: float

    @property
    def floor(self) -> float:
        return max(NUMERICAL_FLOOR, CANCELLATION_FLOOR * self.scale)

    def to_dict(self) -> Dict:
        return {
            "t": self.t,
            "value_re": self.value.real,
            "value_im": self.value.imag,
            "truncation_bound": self.truncation_bound,
            "cutoff": self.cutoff,
        }


def _character(weight: np.ndarray, alpha: Optional[float]) -> np.ndarray:
    if alpha is None:
        return np.ones_like(weight)
    return np.exp(1j * float(alpha) * weight)


def _reduce(terms: np.ndarray, chirality: np.ndarray, signed: bool) -> complex:
    if not signed:
        return complex(terms.sum())
    # same-order partial sums, so chirality-paired tables cancel exactly
    return complex(terms[chirality > 0].sum() - terms[chirality < 0].sum())


def heat_trace(model: SpectrumModel, t: float, alpha: Optional[float] = None, signed: bool = False,
               cutoff: Optional[float] = None) -> SpectralSum:
    """Σ (±) χ_λ(α) e^{-tλ²}; signed traces need a graded model."""
    t = _positive_time(t)
    if signed and not model.graded:
        raise SpectralError(f"{model.name} has no chirality grading for a signed trace")
    cutoff = cutoff or model.cutoff(t)
    lam, weight, chirality = model.modes(cutoff)
    terms = np.exp(-t * lam * lam) * _character(weight, alpha)
    return SpectralSum(t, _reduce(terms, chirality, signed), cutoff, model.tail_bound(t, cutoff),
                       float(np.abs(terms).sum()))


def eta_integrand(model: SpectrumModel, t: float, alpha: Optional[float] = None,
                  cutoff: Optional[float] = None) -> SpectralSum:
    """Tr[φ D e^{-tD²}]; zero modes contribute nothing."""
    t = _positive_time(t)
    if model.graded:
        raise SpectralError(f"eta integrand needs an ungraded (odd-dimensional) model, got {model.name}")
    cutoff = cutoff or model.cutoff(t, power=1)
    lam, weight, _ = model.modes(cutoff)
    terms = lam * np.exp(-t * lam * lam) * _character(weight, alpha)
    return SpectralSum(t, complex(terms.sum()), cutoff, model.tail_bound(t, cutoff, power=1),
                       float(np.abs(terms).sum()))


@dataclass
class EtaResult:
    value: complex
    kernel_dimension: int
    convention: str
    quadrature_error: float
    endpoint_bound: float
    model: str
    alpha: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            "model": self.model,
            "alpha": self.alpha,
            "eta_re": self.value.real,
            "eta_im": self.value.imag,
            "kernel_dimension": self.kernel_dimension,
            "convention": self.convention,
            "quadrature_error": self.quadrature_error,
            "endpoint_bound": self.endpoint_bound,
        }


def eta_invariant(model: SpectrumModel, alpha: Optional[float] = None, epsabs: float = 1e-10,
                  t_floor: float = 1e-6) -> EtaResult:
    """
    (1/√π) ∫_0^∞ t^{-1/2} Tr[φ D e^{-tD²}] dt, split at t = 1.

    Below t = 1 the substitution t = u² removes the endpoint singularity and
    the stretch [0, t_floor] is replaced by the bound C·t_floor, with C the
    largest |integrand|/t^{1/2} seen on a grid above t_floor. Above t = 1
    the substitution t = e^s runs out to the point where the lowest mode
    has decayed by e^{-60}.
    """
    def vector(t: float) -> np.ndarray:
        value = eta_integrand(model, t, alpha).value
        return np.array([value.real, value.imag])

    lower, lower_err = integrate.quad_vec(lambda u: 2.0 * vector(u * u), math.sqrt(t_floor), 1.0,
                                          epsabs=epsabs, epsrel=1e-10, norm="max", limit=400)
    s_max = math.log(max(1.0, 60.0 / model.smallest_eigenvalue() ** 2))
    upper, upper_err = integrate.quad_vec(lambda s: math.exp(s / 2) * vector(math.exp(s)), 0.0, s_max,
                                          epsabs=epsabs, epsrel=1e-10, norm="max", limit=400)
    grid = np.geomspace(t_floor, 1e-2, 6)
    slope_constant = max(abs(eta_integrand(model, t, alpha).value) / math.sqrt(t) for t in grid)
    endpoint_bound = slope_constant * t_floor / math.sqrt(math.pi)
    error = float(lower_err + upper_err) / math.sqrt(math.pi)
    if error > 1e-6:
        raise SpectralError(f"eta quadrature did not converge for {model.name} (error {error:.3g})")
    total = (lower + upper) / math.sqrt(math.pi)
    result = EtaResult(complex(total[0], total[1]), model.kernel_dimension,
                       ZERO_MODES_EXCLUDED if model.kernel_dimension else INVERTIBLE,
                       error, endpoint_bound, model.name, alpha)
    logger.info("[Eta] %s %s alpha=%s: %.12g%+.3gj (kernel %d)", model.name, model.parameters,
                alpha, result.value.real, result.value.imag, result.kernel_dimension)
    return result


# ==================== ORACLES ====================

def hurwitz_eta(a: float, dps: int = 50) -> float:
    """ζ(0, a) - ζ(0, 1 - a) for the circle with twist a in (0, 1)."""
    if not 0.0 < a < 1.0:
        raise SpectralError(f"Hurwitz oracle needs 0 < a < 1, got {a}")
    with mpmath.workdps(dps):
        return float(mpmath.zeta(0, mpmath.mpf(a)) - mpmath.zeta(0, 1 - mpmath.mpf(a)))


def equivariant_circle_eta(a: float, alpha: float, dps: int = 50) -> complex:
    """
    Abel-regularized Σ sign(λ) e^{iαλ} over λ in a + Z, summed as two
    geometric series with damping e^{-ε|λ|}, ε = 10^{-dps/2}.
    """
    if not 0.0 < a < 1.0:
        raise SpectralError(f"equivariant oracle needs 0 < a < 1, got {a}")
    if abs(math.remainder(alpha, 2 * math.pi)) < 1e-12:
        raise DegenerateActionError("rotation angle is a multiple of 2π")
    with mpmath.workdps(dps):
        a, alpha = mpmath.mpf(a), mpmath.mpf(alpha)
        eps = mpmath.mpf(10) ** (-(dps // 2))
        up = mpmath.mpc(-eps, alpha)
        down = mpmath.mpc(-eps, -alpha)
        positive = mpmath.exp(up * a) / (1 - mpmath.exp(up))
        negative = mpmath.exp(-down * a) * mpmath.exp(down) / (1 - mpmath.exp(down))
        return complex(positive - negative)


def circle_theta(a: float, t: float, dps: int = 30) -> float:
    """Σ e^{-t(m+a)²} through the Jacobi theta function."""
    with mpmath.workdps(dps):
        t, a = mpmath.mpf(t), mpmath.mpf(a)
        return float(mpmath.exp(-t * a * a) * mpmath.jtheta(3, mpmath.mpc(0, t * a), mpmath.exp(-t)))


def poisson_circle_trace(a: float, t: float, alpha: float = 0.0) -> complex:
    """√(π/t) Σ_k e^{2πika} e^{-(2πk-α)²/(4t)}, the resummed equivariant trace."""
    t = _positive_time(t)
    span = math.ceil(math.sqrt(4 * t * 80) / (2 * math.pi)) + 2
    center = round(alpha / (2 * math.pi))
    k = np.arange(center - span, center + span + 1)
    terms = np.exp(2j * math.pi * k * a) * np.exp(-(2 * math.pi * k - alpha) ** 2 / (4 * t))
    return complex(math.sqrt(math.pi / t) * terms.sum())


# ==================== EXPONENT FITS ====================

@dataclass
class HeatTraceSeries:
    """Samples of a trace on a t-grid, with per-point magnitude scales for the noise floor."""
    t: np.ndarray
    values: np.ndarray
    scales: Optional[np.ndarray] = None
    label: str = ""
    kernel_dimension: int = 0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        self.scales = np.zeros_like(self.t) if self.scales is None else np.asarray(self.scales, dtype=float)
        if self.t.ndim != 1 or self.values.shape != self.t.shape or self.scales.shape != self.t.shape:
            raise ValueError("t-grid, values and scales must be 1-d arrays of equal length")
        if np.any(self.t <= 0) or np.any(np.diff(self.t) <= 0):
            raise ValueError("t-grid must be positive and strictly increasing")

    @classmethod
    def sample(cls, fn: Callable[[float], SpectralSum], grid: Sequence[float], label: str = "",
               kernel_dimension: int = 0, workers: Optional[int] = None) -> "HeatTraceSeries":
        sums = parallel_map(fn, list(grid), workers)
        return cls(np.asarray(grid), [s.value for s in sums], [s.scale for s in sums], label, kernel_dimension)

    def floors(self) -> np.ndarray:
        return np.maximum(NUMERICAL_FLOOR, CANCELLATION_FLOOR * self.scales)

    def rows(self) -> List[Dict]:
        return [{"t": float(t), "value_re": v.real, "value_im": v.imag}
                for t, v in zip(self.t, self.values)]


@dataclass
class ExponentFit:
    slope: Optional[float]
    threshold: float
    window: Tuple[float, float]
    points: int
    status: str
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> Dict:
        return {
            "slope": self.slope,
            "threshold": self.threshold,
            "window": list(self.window),
            "points": self.points,
            "status": self.status,
            "reason": self.reason,
        }


def fit_exponent(series: HeatTraceSeries) -> Tuple[Optional[float], np.ndarray]:
    """Least-squares slope of log|value| against log t over points above the noise floor."""
    t = series.t
    if t.size < MIN_FIT_POINTS or math.log10(t[-1] / t[0]) < MIN_FIT_DECADES - 1e-9:
        raise DegenerateFitError(
            f"need ≥ {MIN_FIT_POINTS} points over ≥ {MIN_FIT_DECADES:g} decades, got {t.size} "
            f"over [{t[0]:.3g}, {t[-1]:.3g}]")
    above = np.abs(series.values) > series.floors()
    if above.sum() < 3:
        return None, above
    slope = np.polyfit(np.log(t[above]), np.log(np.abs(series.values[above])), 1)[0]
    return float(slope), above


def _window(series: HeatTraceSeries, mask: np.ndarray) -> Tuple[float, float]:
    t = series.t[mask] if mask.any() else series.t
    return float(t[0]), float(t[-1])


def small_t_exponent(series: HeatTraceSeries, threshold: float = SMALL_T_THRESHOLD) -> ExponentFit:
    """PASS when the trace vanishes at least like t^{1/2} as t → 0."""
    slope, mask = fit_exponent(series)
    if slope is None:
        return ExponentFit(None, threshold, _window(series, mask), int(mask.sum()), PASS, "below numerical floor")
    status = PASS if slope >= threshold else FAIL
    logger.debug("[Fit] small-t %s: slope %.4g → %s", series.label, slope, status)
    return ExponentFit(slope, threshold, _window(series, mask), int(mask.sum()), status)


def large_t_exponent(series: HeatTraceSeries, threshold: float = LARGE_T_THRESHOLD) -> ExponentFit:
    """PASS when the trace decays at least like t^{-3/2}; skipped when zero modes are present."""
    if series.kernel_dimension:
        return ExponentFit(None, threshold, (float(series.t[0]), float(series.t[-1])), 0, SKIP,
                           f"zero modes present (kernel dimension {series.kernel_dimension})")
    slope, mask = fit_exponent(series)
    if slope is None:
        return ExponentFit(None, threshold, _window(series, mask), int(mask.sum()), PASS, "below numerical floor")
    status = PASS if slope <= threshold else FAIL
    logger.debug("[Fit] large-t %s: slope %.4g → %s", series.label, slope, status)
    return ExponentFit(slope, threshold, _window(series, mask), int(mask.sum()), status)


def small_t_grid(points: Optional[int] = None) -> np.ndarray:
    config = get_run_config()
    return np.geomspace(config.t_min, 100 * config.t_min, points or config.grid_points)


def large_t_grid(points: Optional[int] = None) -> np.ndarray:
    config = get_run_config()
    return np.geomspace(config.t_max / 100, config.t_max, points or config.grid_points)


def eta_integrand_series(model: SpectrumModel, grid: Sequence[float], alpha: Optional[float] = None,
                         workers: Optional[int] = None) -> HeatTraceSeries:
    label = f"{model.name} eta integrand alpha={alpha}"
    return HeatTraceSeries.sample(lambda t: eta_integrand(model, t, alpha), grid, label,
                                  model.kernel_dimension, workers)


def heat_trace_series(model: SpectrumModel, grid: Sequence[float], alpha: Optional[float] = None,
                      signed: bool = False, workers: Optional[int] = None) -> HeatTraceSeries:
    label = f"{model.name} {'signed ' if signed else ''}heat trace alpha={alpha}"
    return HeatTraceSeries.sample(lambda t: heat_trace(model, t, alpha, signed), grid, label,
                                  model.kernel_dimension, workers)


def eta_form_series(B: Superconnection, grid: Sequence[float], phi=None,
                    workers: Optional[int] = None) -> HeatTraceSeries:
    """Largest even coefficient of the eta-form integrand on each grid point."""
    def largest(t: float) -> float:
        terms = eta_form_integrand(B, t, phi).definition.terms.values()
        return max((abs(complex(c)) for c in terms), default=0.0)

    values = parallel_map(largest, list(grid), workers)
    return HeatTraceSeries(np.asarray(grid), values, values, "eta form integrand",
                           0 if B.dirac_invertible() else 1)


# ==================== SPHERE ====================

def spin_matrices(j: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """J_x, J_y, J_z on the spin-j representation, basis m = j, j-1, ..., -j."""
    m = np.arange(j, -j - 1.0, -1.0)
    dim = m.size
    raising = np.zeros((dim, dim))
    for i in range(1, dim):
        raising[i - 1, i] = math.sqrt(j * (j + 1) - m[i] * (m[i] + 1))
    jx = (raising + raising.T) / 2
    jy = (raising - raising.T) / 2j
    return jx, jy, np.diag(m)


@dataclass
class SphereTableCheck:
    levels: int
    eigenvalue_deviation: float
    character_deviation: float
    closed_form_deviation: float

    def passed(self, tol: float = 1e-10) -> bool:
        return max(self.eigenvalue_deviation, self.character_deviation, self.closed_form_deviation) <= tol


def validate_sphere_table(levels: int = 8, angles: Sequence[float] = (0.7, math.pi / 2, 2.0, math.pi),
                          twist: int = 0) -> SphereTableCheck:
    """
    Rebuild each level from explicit spin matrices: eigenvalues of
    J² + 1/4 - m²/4 against |λ|², the trace of exp(iαJ_x) against the
    tabulated weights, and both against sin((j+½)α)/sin(α/2).
    """
    model = sphere_dirac(twist)
    lines = [line for line in model.lines(levels + 0.5) if line.chirality == 1]
    eig_dev = char_dev = closed_dev = 0.0
    for line in lines:
        spin = (line.multiplicity - 1) / 2
        jx, jy, jz = spin_matrices(spin)
        casimir = jx @ jx + jy @ jy + jz @ jz
        shift = 0.25 - twist * twist / 4
        eigs = linalg.eigvalsh(casimir.real + shift * np.eye(casimir.shape[0]))
        eig_dev = max(eig_dev, float(np.max(np.abs(eigs - line.eigenvalue ** 2))))
        for alpha in angles:
            brute = complex(np.trace(linalg.expm(1j * alpha * jx)))
            table = line.character(alpha)
            closed = math.sin((spin + 0.5) * alpha) / math.sin(alpha / 2)
            char_dev = max(char_dev, abs(brute - table))
            closed_dev = max(closed_dev, abs(table - closed))
    check = SphereTableCheck(len(lines), eig_dev, char_dev, closed_dev)
    logger.debug("[Sphere] table check over %d levels (twist %d): %s", check.levels, twist, check)
    return check


def sphere_weyl_deviation(t: float) -> float:
    """t·Tr e^{-tD²} - (2 - t/3); the small-t expansion continues with -t²/30."""
    trace = heat_trace(sphere_dirac(), t)
    return trace.value.real * t - (2.0 - t / 3.0)


def _rotation(alpha: float) -> float:
    reduced = math.fmod(float(alpha), 2 * math.pi)
    if abs(math.remainder(reduced, 2 * math.pi)) < 1e-12:
        raise DegenerateActionError(f"rotation by {alpha} fixes the whole sphere; nothing to localize on")
    return reduced


def sphere_lefschetz(alpha: float, t: float, twist: int = 0) -> SpectralSum:
    """Str[g_α e^{-tD²}] on the round sphere; sin(mα/2)/sin(α/2) for twist m."""
    _rotation(alpha)
    return heat_trace(sphere_dirac(twist), t, alpha, signed=True)


@dataclass
class FixedPointSum:
    alpha: float
    contributions: Dict[str, complex]
    twist: int = 0

    @property
    def total(self) -> complex:
        return sum(self.contributions.values(), 0j)

    def to_dict(self) -> Dict:
        return {
            "alpha": self.alpha,
            "twist": self.twist,
            "contributions": {k: [v.real, v.imag] for k, v in self.contributions.items()},
            "total": [self.total.real, self.total.imag],
        }


def sphere_fixed_point_sum(alpha: float, twist: int = 0) -> FixedPointSum:
    """Equivariant densities at the two poles; the south pole sees the rotation reversed.

    The twisting line bundle fiber at a pole rotating by θ contributes e^{imθ/2}.
    """
    angle = _rotation(alpha)
    ctx = AlgebraContext(2, scalar_mode=FLOAT)
    contributions = {}
    for pole, theta in (("north", angle), ("south", -angle)):
        density = equivariant_index_density(CurvatureMatrix.zero(ctx, 0), IsometryNormalAction((theta,)),
                                            CurvatureMatrix.zero(ctx, 2), a=0, n=2)
        contributions[pole] = cmath.exp(0.5j * twist * theta) * complex(density.value.scalar_part())
    return FixedPointSum(float(alpha), contributions, twist)
