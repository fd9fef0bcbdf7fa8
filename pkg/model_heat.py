"""
Model Heat Kernels

Closed-form Mehler kernels of the harmonic-oscillator model operator
F = -Σ_i (∂_i - ¼ Σ_j a_ij x_j)², the Gaussian fixed-point integral over the
normal fiber of an isometry, and the equivariant density assembled from them.

Kernel used throughout (A = (a_ij) antisymmetric, x, y ∈ R^n):

    K_t(x, y) = (4πt)^{-n/2} det^{1/2}(S) exp(-<x-y, C(x-y)>/4t) exp(<x, Ay>/4)
    S = (tA/2)/sinh(tA/2),  C = (tA/2) coth(tA/2)

A is either a real numpy array (numeric mode) or a matrix of nilpotent even
forms (exact mode, evaluated through terminating Taylor series).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from char_forms import (
    X,
    CurvatureMatrix,
    DimensionMismatchError,
    IndexDensity,
    IsometryNormalAction,
    det_sqrt,
    determinant,
    equivariant_prefactor,
    identity,
    mat_add,
    mat_mul,
    mat_scale,
    matrix_function,
    scalar_function,
)
from graded_algebra import (
    AlgebraContext,
    GradedElement,
    SpinorLift,
    constant,
    equivariant_supertrace,
    format_scalar,
    quantize,
    spinor_lift,
)
from volterra_getzler import DEFAULT_DEGREE

logger = logging.getLogger(__name__)

Rows = List[List[GradedElement]]

SINH_RATIO = X / 2 / sympy.sinh(X / 2)
COTH_RATIO = X / 2 * sympy.coth(X / 2)


class NonPositiveTimeError(ValueError):
    """Heat kernels are only defined for t > 0."""


def _check_time(t):
    if complex(t).real <= 0:
        raise NonPositiveTimeError(f"t must be positive, got {t}")


def _transpose(rows: Rows) -> Rows:
    return [list(col) for col in zip(*rows)] if rows else []


# ==================== DATA ====================

@dataclass(frozen=True, eq=False)
class MehlerData:
    """Coefficient matrix A of the model operator.

    Exact mode stores rows of even exterior forms; numeric mode a real array.
    """
    A: Union[np.ndarray, Tuple[Tuple[GradedElement, ...], ...]]
    ctx: Optional[AlgebraContext] = None

    def __post_init__(self):
        if self.ctx is None:
            A = np.asarray(self.A)
            if not np.isrealobj(A) or A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ValueError("numeric Mehler data needs a real square matrix")
            if not np.allclose(A, -A.T, atol=1e-14):
                raise ValueError("Mehler matrix must be antisymmetric")
            object.__setattr__(self, "A", A.astype(float))
        else:
            # CurvatureMatrix validates antisymmetry and evenness
            checked = CurvatureMatrix.from_rows(self.ctx, self.A)
            object.__setattr__(self, "A", checked.entries)

    @classmethod
    def numeric(cls, A) -> "MehlerData":
        return cls(np.asarray(A, dtype=float))

    @classmethod
    def planar(cls, b: float) -> "MehlerData":
        """n = 2 with a_12 = -a_21 = b."""
        return cls.numeric([[0.0, b], [-b, 0.0]])

    @classmethod
    def from_rows(cls, ctx: AlgebraContext, rows: Sequence[Sequence[GradedElement]]) -> "MehlerData":
        return cls(tuple(tuple(r) for r in rows), ctx)

    @classmethod
    def from_curvature(cls, R: CurvatureMatrix) -> "MehlerData":
        """a_ij = <R ∂_i, ∂_j>, i.e. A is the transpose of the curvature matrix."""
        return cls.from_rows(R.ctx, _transpose(R.rows()))

    @classmethod
    def block_diagonal(cls, *blocks: "MehlerData") -> "MehlerData":
        if all(b.is_numeric for b in blocks):
            n = sum(b.n for b in blocks)
            out = np.zeros((n, n))
            offset = 0
            for b in blocks:
                out[offset:offset + b.n, offset:offset + b.n] = b.A
                offset += b.n
            return cls.numeric(out)
        if any(b.is_numeric for b in blocks):
            raise ValueError("cannot mix numeric and exact Mehler blocks")
        ctx = blocks[0].ctx
        R = CurvatureMatrix.direct_sum(*(CurvatureMatrix.from_rows(ctx, b.rows()) for b in blocks))
        return cls.from_rows(ctx, R.rows())

    @property
    def is_numeric(self) -> bool:
        return self.ctx is None

    @property
    def n(self) -> int:
        return len(self.A)

    def rows(self) -> Rows:
        if self.is_numeric:
            raise ValueError("numeric Mehler data has no form-valued rows")
        return [list(r) for r in self.A]

    def block(self, start: int, stop: int) -> "MehlerData":
        if self.is_numeric:
            return MehlerData.numeric(self.A[start:stop, start:stop])
        return MehlerData.from_rows(self.ctx, [list(r[start:stop]) for r in self.A[start:stop]])

    def is_block_diagonal(self, a: int) -> bool:
        """No coupling between the first a directions and the rest."""
        if self.is_numeric:
            return not np.any(self.A[:a, a:]) and not np.any(self.A[a:, :a])
        return all(self.A[i][j].is_zero() for i in range(a) for j in range(a, self.n))

    def to_dict(self) -> Dict:
        if self.is_numeric:
            return {"mode": "numeric", "A": self.A.tolist()}
        return {"mode": "exact", "A": [[e.to_dict() for e in row] for row in self.A]}


@dataclass(frozen=True)
class FixedPointGeometry:
    """Fixed set of dimension a, normal rotation blocks acting on the last b = n - a directions."""
    a: int
    action: IsometryNormalAction

    def __post_init__(self):
        if self.a < 0:
            raise ValueError(f"fixed dimension must be non-negative, got {self.a}")

    @property
    def b(self) -> int:
        return self.action.dim

    @property
    def n(self) -> int:
        return self.a + self.b

    def default_lift(self, ctx: AlgebraContext) -> SpinorLift:
        return spinor_lift(ctx, self.action.planes(offset=self.a))

    def to_dict(self) -> Dict:
        return {"a": self.a, "b": self.b, "action": self.action.to_dict()}


# ==================== NUMERIC KERNEL ====================

def _numeric_functions(A: np.ndarray, t: float) -> Tuple[float, np.ndarray]:
    """det^{1/2}(S) and C for real antisymmetric A, via the spectrum of iA."""
    if A.size == 0:
        return 1.0, np.zeros((0, 0))
    mu, V = np.linalg.eigh(1j * A)
    half = mu * t / 2
    small = np.abs(half) < 1e-12
    safe = np.where(small, 1.0, half)
    s = np.where(small, 1.0, safe / np.sin(safe))
    c = np.where(small, 1.0, safe / np.tan(safe))
    # eigenvalues of iA pair up as ±μ; the continuous branch takes one factor per pair
    det_half = float(np.prod(s[mu > 1e-12 * max(1.0, float(np.max(np.abs(mu))))]))
    C = ((V * c) @ V.conj().T).real
    return det_half, C


def numeric_kernel(A: np.ndarray, x, y, t: float):
    """Vectorized K_t(x, y); x and y broadcast over leading axes, last axis has length n."""
    _check_time(t)
    n = A.shape[0]
    det_half, C = _numeric_functions(A, t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    quad = np.einsum("...i,ij,...j->...", d, C, d)
    cross = np.einsum("...i,ij,...j->...", x, A, y)
    return (4 * np.pi * t) ** (-n / 2) * det_half * np.exp(-quad / (4 * t) + cross / 4)


def planar_diagonal(b: float, t: float) -> float:
    """K_t(0, 0) for the planar model: b / (8π sin(bt/2))."""
    if b == 0:
        return 1 / (4 * math.pi * t)
    return b / (8 * math.pi * math.sin(b * t / 2))


# ==================== EXACT KERNEL ====================

def _bilinear(M: Rows, u: Sequence, v: Sequence, ctx: AlgebraContext) -> GradedElement:
    acc = ctx.zero(True)
    for i, ui in enumerate(u):
        for j, vj in enumerate(v):
            weight = ui * vj
            if weight != 0:
                acc = acc + M[i][j].scale(weight)
    return acc


def _as_scalars(point: Optional[Sequence], n: int, ctx: AlgebraContext) -> List:
    if point is None:
        point = [0] * n
    if len(point) != n:
        raise DimensionMismatchError(f"point {list(point)} is not in R^{n}")
    return [constant(p, ctx.scalar_mode) for p in point]


def _graded_kernel(data: MehlerData, x, y, t) -> GradedElement:
    ctx = data.ctx
    n = data.n
    tA = mat_scale(data.rows(), t)
    det_half = det_sqrt(matrix_function(SINH_RATIO, tA, ctx=ctx), ctx)
    C = matrix_function(COTH_RATIO, tA, ctx=ctx)
    x, y = _as_scalars(x, n, ctx), _as_scalars(y, n, ctx)
    d = [xi - yi for xi, yi in zip(x, y)]
    exponent = (_bilinear(data.rows(), x, y, ctx).scale(constant(sympy.Rational(1, 4), ctx.scalar_mode))
                - _bilinear(C, d, d, ctx).scale(1 / (4 * constant(t, ctx.scalar_mode))))
    gaussian = scalar_function(sympy.exp(X), exponent)
    norm = constant((4 * sympy.pi * sympy.sympify(t)) ** sympy.Rational(-n, 2), ctx.scalar_mode)
    return (det_half * gaussian).scale(norm)


def mehler_kernel(data: MehlerData, x=None, y=None, t=1):
    """K_t(x, y) of exp(-tF); a float in numeric mode, a GradedElement in exact mode.

    Points default to the origin.
    """
    _check_time(t)
    if data.is_numeric:
        zero = np.zeros(data.n)
        return float(numeric_kernel(data.A, zero if x is None else x, zero if y is None else y, float(t)))
    value = _graded_kernel(data, x, y, t)
    logger.debug("[Mehler] n=%d t=%s: %d terms", data.n, t, len(value.terms))
    return value


def mehler_expansion(data: MehlerData, l_max: int) -> List[GradedElement]:
    """Coefficients a_l with K_t(0, 0) = t^{-n/2} Σ_l t^l a_l (exact mode)."""
    if data.is_numeric:
        raise ValueError("t-expansion needs nilpotent (exact) Mehler data")
    ctx = data.ctx
    T = sympy.Symbol("t", positive=True)
    det_half = det_sqrt(matrix_function(SINH_RATIO, mat_scale(data.rows(), T), ctx=ctx), ctx)
    norm = (4 * sympy.pi) ** sympy.Rational(-data.n, 2)
    return [det_half.map_coefficients(lambda c, l=l: sympy.expand(c).coeff(T, l)).scale(norm)
            for l in range(l_max + 1)]


# ==================== FIXED-POINT INTEGRAL ====================

def _rotation_array(action: IsometryNormalAction) -> np.ndarray:
    out = np.zeros((action.dim, action.dim))
    for j, theta in enumerate(action.angles):
        c, s = math.cos(float(theta)), math.sin(float(theta))
        out[2 * j:2 * j + 2, 2 * j:2 * j + 2] = [[c, -s], [s, c]]
    return out


def _check_geometry(geom: FixedPointGeometry, data: MehlerData):
    if data.n != geom.n:
        raise DimensionMismatchError(f"Mehler data has n={data.n}, geometry has a+b={geom.n}")
    if not data.is_block_diagonal(geom.a):
        raise ValueError("fixed-point integral needs A split into tangential and normal blocks")


def fixed_point_integral(geom: FixedPointGeometry, data: MehlerData, t=1):
    """∫_{R^b} K_t((0, v), (0, φv)) dv over the whole normal fiber.

    The exponent is -<v, M v> with
    M = (1/4t)(1-φ)ᵀ C_N (1-φ) - ¼ sym(A_N φ), so the integral is
    (4πt)^{-n/2} det^{1/2}(S) π^{b/2} det(M)^{-1/2}.
    """
    _check_time(t)
    _check_geometry(geom, data)
    a, b, n = geom.a, geom.b, geom.n
    if data.is_numeric:
        t = float(t)
        det_half, _ = _numeric_functions(data.A, t)
        A_N = data.A[a:, a:]
        _, C_N = _numeric_functions(A_N, t)
        phi = _rotation_array(geom.action)
        gap = np.eye(b) - phi
        A_phi = A_N @ phi
        M = gap.T @ C_N @ gap / (4 * t) - (A_phi + A_phi.T) / 8
        value = (4 * np.pi * t) ** (-n / 2) * det_half * np.pi ** (b / 2) / math.sqrt(np.linalg.det(M))
        logger.debug("[FixedPoint] numeric a=%d b=%d t=%s: %.6g", a, b, t, value)
        return value

    ctx = data.ctx
    mode = ctx.scalar_mode
    tA = mat_scale(data.rows(), t)
    det_half = det_sqrt(matrix_function(SINH_RATIO, tA, ctx=ctx), ctx)
    C_N = matrix_function(COTH_RATIO, [row[a:] for row in tA[a:]], ctx=ctx)
    A_N = data.block(a, n).rows()
    phi = geom.action.matrix(ctx)
    gap = mat_add(identity(ctx, b), phi, -1)
    A_phi = mat_mul(A_N, phi)
    sym = mat_scale(mat_add(A_phi, _transpose(A_phi)), constant(sympy.Rational(1, 8), mode))
    quad = mat_scale(mat_mul(mat_mul(_transpose(gap), C_N), gap), 1 / (4 * constant(t, mode)))
    M = mat_add(quad, sym, -1)
    gaussian = scalar_function(X ** sympy.Rational(-1, 2), determinant(M, ctx))
    norm = constant((4 * sympy.pi * sympy.sympify(t)) ** sympy.Rational(-n, 2)
                    * sympy.pi ** sympy.Rational(b, 2), mode)
    value = (det_half * gaussian).scale(norm)
    logger.debug("[FixedPoint] exact a=%d b=%d: %d terms", a, b, len(value.terms))
    return value


def getzler_rescale(element: GradedElement, t) -> GradedElement:
    """Scale each monomial by t^{-g/2}, g its Getzler degree (fiber and base generators count 1)."""
    ctx = element.ctx
    mode = ctx.scalar_mode
    out = {}
    for bits, coeff in element.terms.items():
        g = DEFAULT_DEGREE.of_mask(ctx, bits)
        out[bits] = coeff * constant(sympy.sympify(t) ** sympy.Rational(-g, 2), mode)
    return GradedElement(ctx, out, element.exterior)


# ==================== EQUIVARIANT DENSITY ====================

def equivariant_model_density(geom: FixedPointGeometry, data: MehlerData, lift: Optional[SpinorLift] = None,
                              t=1) -> IndexDensity:
    """Str[φ̃ c(t^{a/2} ψ_t I_t)] at the fixed point.

    ψ_t is the Getzler rescaling; for 2-form Mehler data the result does not
    depend on t and equals the characteristic-form density
    (-i)^{n/2} (2π)^{-a/2} |Â(R_fix) ν_φ(R_N)|^{(a)}.
    """
    if lift is None:
        if data.is_numeric:
            raise ValueError("numeric Mehler data needs an explicit spinor lift")
        lift = geom.default_lift(data.ctx)
    ctx = lift.element.ctx
    if ctx.n != geom.n:
        raise DimensionMismatchError(f"spinor lift lives in Cl({ctx.n}), geometry has n={geom.n}")
    mode = ctx.scalar_mode
    integral = fixed_point_integral(geom, data, t)
    weight = constant(sympy.sympify(t) ** sympy.Rational(geom.a, 2), mode)
    if isinstance(integral, GradedElement):
        rescaled = getzler_rescale(integral, t).scale(weight)
    else:
        rescaled = ctx.scalar(constant(integral, mode) * weight, True)
    trace = equivariant_supertrace(lift, quantize(rescaled), geom.a)
    prefactor = equivariant_prefactor(geom.n, geom.a, mode)
    return IndexDensity(trace.total, prefactor, {
        "pipeline": "model_heat",
        "a": geom.a,
        "n": geom.n,
        "t": str(t),
        "lift": lift.metadata(),
        "leading_terms": len(trace.leading.terms),
        "correction_terms": len(trace.corrections.terms),
    })


# ==================== NUMERIC ORACLES ====================

@dataclass
class OracleResult:
    """Finite-difference semigroup value at the origin, coarse/fine mesh and extrapolation."""
    b: float
    t: float
    half_width: float
    points: Tuple[int, int]
    coarse: float
    fine: float
    extrapolated: float
    closed_form: float = field(init=False)

    def __post_init__(self):
        self.closed_form = planar_diagonal(self.b, self.t)

    @property
    def rel_error(self) -> float:
        return abs(self.extrapolated - self.closed_form) / abs(self.closed_form)

    def to_dict(self) -> Dict:
        return {
            "b": self.b,
            "t": self.t,
            "half_width": self.half_width,
            "points": list(self.points),
            "coarse": self.coarse,
            "fine": self.fine,
            "extrapolated": self.extrapolated,
            "closed_form": self.closed_form,
            "rel_error": self.rel_error,
        }


def _periodic_stencil(N: int, offsets: Dict[int, float]) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for i in range(N):
        for k, v in offsets.items():
            rows.append(i)
            cols.append((i + k) % N)
            vals.append(v)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))


def _grid_diagonal(b: float, t: float, half_width: float, N: int) -> float:
    """Discrete kernel at the origin of the planar model on a periodic N×N grid."""
    h = 2 * half_width / N
    coords = -half_width + h * np.arange(N)
    eye = sparse.identity(N, format="csr")
    second = _periodic_stencil(N, {-1: 1.0, 0: -2.0, 1: 1.0}) / h ** 2
    first = _periodic_stencil(N, {-1: -0.5, 1: 0.5}) / h
    pos = sparse.diags(coords)
    # flat index i*N + j: i runs over x1, j over x2
    D1, D2 = sparse.kron(first, eye), sparse.kron(eye, first)
    X1, X2 = sparse.kron(pos, eye), sparse.kron(eye, pos)
    laplacian = sparse.kron(second, eye) + sparse.kron(eye, second)
    F = -laplacian + 0.5 * b * (X2 @ D1 - X1 @ D2) - (b * b / 16) * (X1 @ X1 + X2 @ X2)
    origin = (N // 2) * N + N // 2
    delta = np.zeros(N * N)
    delta[origin] = 1 / h ** 2
    u = expm_multiply(-t * F.tocsr(), delta)
    return float(u[origin])


def semigroup_oracle(b: float, t: float, half_width: float = 3.0,
                     points: Tuple[int, int] = (128, 256)) -> OracleResult:
    """Grid value of K_t(0, 0) for the planar model, Richardson-extrapolated in h².

    The generator is the central finite-difference form of
    -Δ + ½b(x2∂1 - x1∂2) - (b²/16)|x|² on the periodic box [-L, L)²,
    propagated exactly in time with ``expm_multiply``.
    """
    _check_time(t)
    coarse_n, fine_n = points
    if fine_n != 2 * coarse_n or coarse_n % 2:
        raise ValueError(f"mesh pair must be (N, 2N) with N even, got {points}")
    coarse = _grid_diagonal(b, t, half_width, coarse_n)
    fine = _grid_diagonal(b, t, half_width, fine_n)
    result = OracleResult(b, t, half_width, (coarse_n, fine_n), coarse, fine, (4 * fine - coarse) / 3)
    logger.info("[Oracle] b=%s t=%s grid=%s rel err %.2e", b, t, points, result.rel_error)
    return result


def convolution_check(data: MehlerData, x, y, s: float, t: float, spacing: float = 0.05,
                      half_width: float = 6.0) -> Tuple[float, float]:
    """(∫ K_s(x, z) K_t(z, y) dz on a grid, K_{s+t}(x, y)) for numeric data."""
    if not data.is_numeric:
        raise ValueError("convolution check runs in numeric mode")
    n = data.n
    axis = np.arange(-half_width, half_width + spacing / 2, spacing)
    Z = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    left = numeric_kernel(data.A, np.asarray(x, dtype=float), Z, s)
    right = numeric_kernel(data.A, Z, np.asarray(y, dtype=float), t)
    convolved = float(np.sum(left * right) * spacing ** n)
    direct = float(numeric_kernel(data.A, x, y, s + t))
    logger.debug("[Mehler] convolution s=%s t=%s: %.8g vs %.8g", s, t, convolved, direct)
    return convolved, direct


def density_residual(model: IndexDensity, reference: IndexDensity) -> float:
    """Largest coefficient gap between two densities."""
    return model.value.to_float().max_abs_difference(reference.value.to_float())


def density_report(model: IndexDensity, reference: IndexDensity) -> Dict:
    return {
        "model": model.to_dict(),
        "reference": reference.to_dict(),
        "prefactor": format_scalar(model.prefactor),
        "residual": density_residual(model, reference),
    }
