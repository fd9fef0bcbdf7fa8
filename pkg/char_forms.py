"""
Characteristic Forms

Â-genus, the equivariant localization factor ν_φ, the Chern character and the
assembled (equivariant) index densities, all evaluated over nilpotent even form
algebras. Coefficients are exterior-mode GradedElements; even elements commute,
so determinants and scalar power series behave as in a commutative ring.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy

from graded_algebra import (
    EXACT,
    AlgebraContext,
    DegenerateActionError,
    GradedElement,
    berezin,
    constant,
    format_scalar,
    normal_det_sqrt,
)

logger = logging.getLogger(__name__)

X = sympy.Symbol("x")

Rows = List[List[GradedElement]]


class DimensionMismatchError(ValueError):
    """Curvature sizes do not add up to the fiber dimension."""


class ConvergenceError(ValueError):
    """Numeric part outside the domain of the requested power series."""


# ==================== NILPOTENT EVEN SCALARS ====================

def even_scalar(ctx: AlgebraContext, terms: Optional[Dict[int, object]] = None) -> GradedElement:
    """NilpotentEvenScalar: an exterior-mode element supported on even monomials."""
    element = GradedElement(ctx, terms or {}, exterior=True)
    _require_even(element)
    return element


def _require_even(element: GradedElement):
    if element.parity() != 0:
        raise ValueError("characteristic forms need even (commuting) coefficients")


def _as_form(element: GradedElement) -> GradedElement:
    if element.exterior:
        return element
    if element.has_fiber():
        raise ValueError("curvature entries must be forms, not Clifford elements")
    return GradedElement(element.ctx, element.terms, exterior=True)


def truncate(element: GradedElement, degree_cap: Optional[int]) -> GradedElement:
    if degree_cap is None:
        return element
    return element.project(lambda bits: bin(bits).count("1") <= degree_cap)


# ==================== MATRICES ====================

@dataclass(frozen=True)
class CurvatureMatrix:
    """Antisymmetric k×k matrix of NilpotentEvenScalar entries."""
    ctx: AlgebraContext
    entries: Tuple[Tuple[GradedElement, ...], ...] = ()

    def __post_init__(self):
        rows = tuple(tuple(_as_form(e) for e in row) for row in self.entries)
        object.__setattr__(self, "entries", rows)
        k = len(rows)
        for i, row in enumerate(rows):
            if len(row) != k:
                raise ValueError(f"curvature matrix row {i} has {len(row)} entries, expected {k}")
            for j, entry in enumerate(row):
                if entry.ctx != self.ctx:
                    raise ValueError("curvature entries must share the matrix context")
                _require_even(entry)
                if not (entry + rows[j][i]).is_zero():
                    raise ValueError(f"curvature matrix is not antisymmetric at ({i + 1}, {j + 1})")

    @property
    def size(self) -> int:
        return len(self.entries)

    def rows(self) -> Rows:
        return [list(row) for row in self.entries]

    @classmethod
    def zero(cls, ctx: AlgebraContext, k: int) -> "CurvatureMatrix":
        return cls(ctx, tuple(tuple(ctx.zero(True) for _ in range(k)) for _ in range(k)))

    @classmethod
    def block(cls, u: GradedElement) -> "CurvatureMatrix":
        """Single 2×2 block [[0, u], [-u, 0]]."""
        zero = u.ctx.zero(True)
        return cls(u.ctx, ((zero, u), (-u, zero)))

    @classmethod
    def from_rows(cls, ctx: AlgebraContext, rows: Sequence[Sequence[GradedElement]]) -> "CurvatureMatrix":
        return cls(ctx, tuple(tuple(row) for row in rows))

    @classmethod
    def direct_sum(cls, *blocks: "CurvatureMatrix") -> "CurvatureMatrix":
        ctx = blocks[0].ctx
        k = sum(b.size for b in blocks)
        rows = [[ctx.zero(True) for _ in range(k)] for _ in range(k)]
        offset = 0
        for b in blocks:
            for i in range(b.size):
                for j in range(b.size):
                    rows[offset + i][offset + j] = b.entries[i][j]
            offset += b.size
        return cls.from_rows(ctx, rows)

    def to_dict(self) -> Dict:
        return {"size": self.size, "entries": [[e.to_dict() for e in row] for row in self.entries]}


def _as_rows(M) -> Rows:
    if isinstance(M, CurvatureMatrix):
        return M.rows()
    return [[_as_form(e) for e in row] for row in M]


def _ctx_of(rows: Rows, fallback: Optional[AlgebraContext] = None) -> AlgebraContext:
    if rows and rows[0]:
        return rows[0][0].ctx
    if fallback is None:
        raise ValueError("empty matrix needs an explicit context")
    return fallback


def identity(ctx: AlgebraContext, k: int) -> Rows:
    return [[ctx.one(True) if i == j else ctx.zero(True) for j in range(k)] for i in range(k)]


def mat_mul(A: Rows, B: Rows) -> Rows:
    k, m = len(A), len(B[0]) if B else 0
    out = []
    for i in range(k):
        row = []
        for j in range(m):
            acc = A[i][0] * B[0][j]
            for l in range(1, len(B)):
                acc = acc + A[i][l] * B[l][j]
            row.append(acc)
        out.append(row)
    return out


def mat_add(A: Rows, B: Rows, scale=1) -> Rows:
    return [[a + b.scale(scale) for a, b in zip(ra, rb)] for ra, rb in zip(A, B)]


def mat_scale(A: Rows, factor) -> Rows:
    return [[a.scale(factor) for a in row] for row in A]


def mat_trace(A: Rows, ctx: AlgebraContext) -> GradedElement:
    acc = ctx.zero(True)
    for i in range(len(A)):
        acc = acc + A[i][i]
    return acc


def _is_zero_matrix(A: Rows) -> bool:
    return all(e.is_zero() for row in A for e in row)


def determinant(M, ctx: Optional[AlgebraContext] = None) -> GradedElement:
    """Laplace expansion; valid because even coefficients commute."""
    rows = _as_rows(M)
    ctx = _ctx_of(rows, ctx)
    k = len(rows)
    if k == 0:
        return ctx.one(True)
    if k == 1:
        return rows[0][0]
    acc = ctx.zero(True)
    for j in range(k):
        if rows[0][j].is_zero():
            continue
        minor = [row[:j] + row[j + 1:] for row in rows[1:]]
        term = rows[0][j] * determinant(minor, ctx)
        acc = acc + (term if j % 2 == 0 else -term)
    return acc


# ==================== POWER SERIES ====================

@lru_cache(maxsize=None)
def taylor_coefficients(f: sympy.Expr, center: sympy.Expr, order: int) -> Tuple[sympy.Expr, ...]:
    """Coefficients c_0..c_order of f(center + h) in powers of h."""
    h = sympy.Dummy("h")
    series = sympy.series(f.subs(X, center + h), h, 0, order + 1).removeO()
    series = sympy.expand(series)
    if not series.is_polynomial(h):
        raise ConvergenceError(f"{f} is not analytic at {center}")
    coeffs = tuple(sympy.simplify(series.coeff(h, k)) for k in range(order + 1))
    for c in coeffs:
        if c.has(h, sympy.zoo, sympy.nan, sympy.oo, -sympy.oo):
            raise ConvergenceError(f"{f} has no Taylor expansion about {center}")
    return coeffs


def _scalar_center(numeric: List[List], ctx: AlgebraContext):
    """c when the numeric part is c·I, None otherwise."""
    k = len(numeric)
    center = numeric[0][0] if k else constant(0, ctx.scalar_mode)
    for i in range(k):
        for j in range(k):
            if numeric[i][j] != (center if i == j else 0):
                return None
    return center


def _same_point(x, y, mode: str) -> bool:
    if mode == EXACT:
        return sympy.simplify(x - y) == 0
    return abs(complex(x) - complex(y)) < 1e-10


@lru_cache(maxsize=None)
def divided_difference(f: sympy.Expr, points: Tuple, mode: str = EXACT):
    """f[x_0, …, x_p]; repeated points contribute derivatives."""
    groups: List[List] = []
    for x in points:
        for group in groups:
            if _same_point(x, group[0], mode):
                group[1] += 1
                break
        else:
            groups.append([x, 1])
    total = sympy.Integer(0)
    for idx, (nu, mult) in enumerate(groups):
        g = f
        for jdx, (other, other_mult) in enumerate(groups):
            if jdx != idx:
                g = g / (X - sympy.sympify(other)) ** other_mult
        total += sympy.diff(g, X, mult - 1).subs(X, sympy.sympify(nu)) / sympy.factorial(mult - 1)
    if mode == EXACT:
        total = sympy.simplify(total)
    else:
        total = sympy.N(total)
    if total.has(sympy.zoo, sympy.nan, sympy.oo, -sympy.oo):
        raise ConvergenceError(f"{f} is singular on the spectrum {list(points)}")
    return total if mode == EXACT else complex(total)


def _eigenbasis(numeric: List[List], ctx: AlgebraContext):
    """(eigenvalues, V, V^{-1}) with N = V diag(eigenvalues) V^{-1}."""
    if ctx.scalar_mode == EXACT:
        N = sympy.Matrix(numeric)
        if not N.is_diagonalizable():
            raise ConvergenceError("numeric part is not diagonalizable")
        V, D = N.diagonalize()
        W = V.inv()
        values = tuple(sympy.simplify(D[i, i]) for i in range(D.rows))
        return values, V.tolist(), W.applyfunc(sympy.simplify).tolist()
    N = np.array(numeric, dtype=complex)
    values, V = np.linalg.eig(N)
    if np.linalg.cond(V) > 1e10:
        raise ConvergenceError("numeric part is not diagonalizable")
    return tuple(complex(v) for v in values), V.tolist(), np.linalg.inv(V).tolist()


def _change_basis(left, rows: Rows, right, ctx: AlgebraContext) -> Rows:
    k = len(rows)
    out = [[ctx.zero(True) for _ in range(k)] for _ in range(k)]
    for i in range(k):
        for j in range(k):
            for a in range(k):
                if left[i][a] == 0:
                    continue
                for b in range(k):
                    if right[b][j] != 0 and not rows[a][b].is_zero():
                        out[i][j] = out[i][j] + rows[a][b].scale(left[i][a] * right[b][j])
    return out


def _spectral_function(f: sympy.Expr, rows: Rows, numeric: List[List], ctx: AlgebraContext, order: int) -> Rows:
    """f(N + E) = Σ_p Σ f[λ_{i0}, …, λ_{ip}] P_{i0} E P_{i1} ⋯ E P_{ip} over the eigenprojections of N."""
    mode = ctx.scalar_mode
    k = len(rows)
    values, V, W = _eigenbasis(numeric, ctx)
    nil = [[e - numeric[i][j] for j, e in enumerate(row)] for i, row in enumerate(rows)]
    tilde = _change_basis(W, nil, V, ctx)

    result = [[ctx.zero(True) for _ in range(k)] for _ in range(k)]
    for a in range(k):
        result[a][a] = ctx.scalar(divided_difference(f, (values[a],), mode), exterior=True)
    layer = {(a,): ctx.one(True) for a in range(k)}
    for _ in range(order):
        step = {}
        for path, product in layer.items():
            for c in range(k):
                extended = product * tilde[path[-1]][c]
                if not extended.is_zero():
                    step[path + (c,)] = extended
        if not step:
            break
        for path, product in step.items():
            weight = divided_difference(f, tuple(values[i] for i in path), mode)
            result[path[0]][path[-1]] = result[path[0]][path[-1]] + product.scale(weight)
        layer = step

    out = _change_basis(V, result, W, ctx)
    if mode == EXACT:
        out = [[e.map_coefficients(sympy.simplify) for e in row] for row in out]
    logger.debug("[MatrixFunction] spectral path on %dx%d numeric part, eigenvalues %s", k, k, values)
    return out


def matrix_function(f, M, degree_cap: Optional[int] = None,
                    ctx: Optional[AlgebraContext] = None) -> Rows:
    """Evaluate the power series f (a sympy expression in X) on a numeric-plus-nilpotent matrix.

    Args:
        f: sympy expression in ``char_forms.X``
        M: CurvatureMatrix or list of rows of even form coefficients
        degree_cap: optional truncation on total form degree

    Returns:
        Rows of the matrix f(M); the series terminates by nilpotency.
        A numeric part other than c·I goes through its eigenprojections and
        must be diagonalizable.
    """
    rows = _as_rows(M)
    ctx = _ctx_of(rows, ctx)
    k = len(rows)
    if k == 0:
        return []
    numeric = [[e.scalar_part() for e in row] for row in rows]
    order = ctx.generator_count // 2
    center = _scalar_center(numeric, ctx)
    if center is None:
        result = _spectral_function(sympy.sympify(f), rows, numeric, ctx, order)
        return [[truncate(e, degree_cap) for e in row] for row in result]
    nil = [[e - (center if i == j else 0) for j, e in enumerate(row)] for i, row in enumerate(rows)]
    center_expr = center if ctx.scalar_mode == EXACT else sympy.sympify(complex(center))
    coeffs = taylor_coefficients(sympy.sympify(f), center_expr, order)

    result = mat_scale(identity(ctx, k), constant(coeffs[0], ctx.scalar_mode))
    power = identity(ctx, k)
    for j in range(1, order + 1):
        power = mat_mul(power, nil)
        if _is_zero_matrix(power):
            break
        result = mat_add(result, power, constant(coeffs[j], ctx.scalar_mode))
    return [[truncate(e, degree_cap) for e in row] for row in result]


def scalar_function(f, s: GradedElement, degree_cap: Optional[int] = None) -> GradedElement:
    """f(s) for an even scalar with numeric part inside the domain of f."""
    return matrix_function(f, [[_as_form(s)]], degree_cap)[0][0]


def det_sqrt(M, ctx: Optional[AlgebraContext] = None) -> GradedElement:
    """Principal square root of the determinant (positive real numeric part)."""
    return scalar_function(sympy.sqrt(X), determinant(M, ctx))


# ==================== CHARACTERISTIC FORMS ====================

def a_hat(R: CurvatureMatrix, degree_cap: Optional[int] = None) -> GradedElement:
    """Â(R) = det^{1/2}((R/2)/sinh(R/2)) = exp(-½ tr log(sinh(R/2)/(R/2)))."""
    if R.size == 0:
        return R.ctx.one(True)
    log_ratio = matrix_function(sympy.log(sympy.sinh(X / 2) / (X / 2)), R)
    exponent = mat_trace(log_ratio, R.ctx).scale(sympy.Rational(-1, 2))
    return scalar_function(sympy.exp(X), exponent, degree_cap)


def chern_character(C, degree_cap: Optional[int] = None, ctx: Optional[AlgebraContext] = None) -> GradedElement:
    """Ch = Tr exp(-C)."""
    rows = _as_rows(C)
    ctx = _ctx_of(rows, ctx)
    return truncate(mat_trace(matrix_function(sympy.exp(-X), rows, ctx=ctx), ctx), degree_cap)


@dataclass(frozen=True)
class IsometryNormalAction:
    """φ^N as rotation blocks; block j rotates e_{2j-1} toward e_{2j} by angles[j]."""
    angles: Tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(self.angles))
        for theta in self.angles:
            ratio = float(sympy.N(sympy.sympify(theta) / (2 * sympy.pi)))
            if abs(ratio - round(ratio)) < 1e-12:
                raise DegenerateActionError(f"angle {theta} leaves its normal plane fixed")

    @classmethod
    def reflection(cls, pairs: int = 1) -> "IsometryNormalAction":
        """-I on 2·pairs normal directions."""
        return cls((sympy.pi,) * pairs)

    @property
    def dim(self) -> int:
        return 2 * len(self.angles)

    def det_sqrt(self, mode: str = EXACT):
        """det^{1/2}(1 - φ^N) = ∏ 2 sin(θ_j/2), the lift-continuous branch."""
        return normal_det_sqrt(self.angles, mode)

    @property
    def branch_sign(self) -> int:
        return 1 if complex(self.det_sqrt()).real > 0 else -1

    def planes(self, offset: int = 0) -> List[Tuple[int, int, object]]:
        """Rotation blocks on fiber indices offset+1, offset+2, ... for spinor_lift."""
        return [(offset + 2 * j + 1, offset + 2 * j + 2, theta) for j, theta in enumerate(self.angles)]

    def matrix(self, ctx: AlgebraContext) -> Rows:
        k = self.dim
        rows = [[ctx.zero(True) for _ in range(k)] for _ in range(k)]
        for j, theta in enumerate(self.angles):
            if ctx.scalar_mode == EXACT:
                c, s = sympy.cos(sympy.sympify(theta)), sympy.sin(sympy.sympify(theta))
            else:
                c, s = math.cos(float(theta)), math.sin(float(theta))
            p = 2 * j
            rows[p][p] = ctx.scalar(c, True)
            rows[p][p + 1] = ctx.scalar(-s, True)
            rows[p + 1][p] = ctx.scalar(s, True)
            rows[p + 1][p + 1] = ctx.scalar(c, True)
        return rows

    def to_dict(self) -> Dict:
        return {"angles": [str(a) for a in self.angles], "branch_sign": self.branch_sign}


def nu_phi(action: IsometryNormalAction, R_N: CurvatureMatrix,
           degree_cap: Optional[int] = None) -> GradedElement:
    """ν_φ = det^{-1/2}(1 - φ^N e^{-R_N}) on the lift-continuous branch."""
    ctx = R_N.ctx
    if R_N.size != action.dim:
        raise DimensionMismatchError(f"normal curvature has size {R_N.size}, action acts on {action.dim}")
    if action.dim == 0:
        return ctx.one(True)
    rotated = mat_mul(action.matrix(ctx), matrix_function(sympy.exp(-X), R_N))
    det = determinant(mat_add(identity(ctx, action.dim), rotated, -1), ctx)
    value = scalar_function(X ** sympy.Rational(-1, 2), det, degree_cap)
    return value.scale(action.branch_sign)


# ==================== DENSITIES ====================

def equivariant_prefactor(n: int, a: int, mode: str = EXACT):
    """(-i)^{n/2} (2π)^{-a/2}."""
    return constant((-sympy.I) ** (n // 2) * (2 * sympy.pi) ** sympy.Rational(-a, 2), mode)


def family_prefactor(n: int, mode: str = EXACT):
    """(2iπ)^{-n/2}."""
    return constant((2 * sympy.I * sympy.pi) ** sympy.Rational(-n, 2), mode)


def prefactor_consistency(n: int, mode: str = EXACT):
    """Residual factor between the two normalizations at φ = id, a = n (1 when they agree)."""
    ratio = equivariant_prefactor(n, n, EXACT) / family_prefactor(n, EXACT)
    return constant(sympy.simplify(ratio), mode)


@dataclass
class IndexDensity:
    """Top-degree fiber pairing of a characteristic integrand, times its normalization."""
    value: GradedElement
    prefactor: object
    metadata: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "value": self.value.to_dict(),
            "prefactor": format_scalar(self.prefactor),
            "metadata": self.metadata,
        }


def index_density(R: CurvatureMatrix, n: int, twist=None, degree_cap: Optional[int] = None) -> IndexDensity:
    """(2iπ)^{-n/2} |Â(R) ch(twist)|^{(n)}."""
    if n % 2 or R.size != n:
        raise DimensionMismatchError(f"family density needs even n equal to the curvature size (n={n}, size={R.size})")
    integrand = a_hat(R, degree_cap)
    if twist is not None:
        integrand = integrand * chern_character(twist, degree_cap, R.ctx)
    prefactor = family_prefactor(n, R.ctx.scalar_mode)
    return IndexDensity(berezin(integrand, n).scale(prefactor), prefactor,
                        {"normalization": "(2iπ)^(-n/2)", "n": n})


def equivariant_index_density(R_fix: CurvatureMatrix, action: IsometryNormalAction, R_N: CurvatureMatrix,
                              a: int, n: int, twist=None, degree_cap: Optional[int] = None) -> IndexDensity:
    """(-i)^{n/2} (2π)^{-a/2} |Â(R_fix) ν_φ(R_N) ch(twist)|^{(a)}."""
    if R_fix.ctx != R_N.ctx:
        raise DimensionMismatchError("tangential and normal curvature live in different algebras")
    if R_fix.size != a or a + action.dim != n:
        raise DimensionMismatchError(
            f"a={a}, b={action.dim}, n={n}, tangential curvature size {R_fix.size}")
    if n % 2 or a % 2:
        raise DimensionMismatchError(f"even-dimensional density needs even a and n (a={a}, n={n})")
    integrand = a_hat(R_fix, degree_cap) * nu_phi(action, R_N, degree_cap)
    if twist is not None:
        integrand = integrand * chern_character(twist, degree_cap, R_fix.ctx)
    prefactor = equivariant_prefactor(n, a, R_fix.ctx.scalar_mode)
    value = berezin(integrand, a).scale(prefactor)
    logger.debug("[Density] a=%d b=%d branch=%d terms=%d", a, action.dim, action.branch_sign, len(value.terms))
    return IndexDensity(value, prefactor, {
        "normalization": "(-i)^(n/2) (2π)^(-a/2)",
        "a": a,
        "n": n,
        "action": action.to_dict(),
    })
