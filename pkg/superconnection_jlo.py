"""
Superconnections and JLO Cochains

Finite-dimensional laboratory for a superconnection B = d + D + A_+ over a
base with q_bar form generators dy_1..dy_q: curvature and its Duhamel
expansion, the rescaling ψ_t, Chern forms and their transgressions, the JLO
cochain, the Grassmann-variable exponential identity and the eta-form
integrand.

A FormMatrix stores {base mask: coefficient matrix}. Coefficients are complex
numpy arrays (numeric mode, constant in y) or sympy matrices whose entries are
functions of the base coordinates (symbolic mode). With a grading Γ the
product follows the Koszul rule

    (ω ⊗ M)(η ⊗ N) = ±(ω∧η) ⊗ (Γ^{|η|} M Γ^{|η|}) N

and without one, forms commute with matrices.
"""
from __future__ import annotations

import logging
import math
import numbers
from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy
from scipy import integrate, linalg
from scipy.special import roots_legendre

from graded_algebra import exterior_multiplication, format_scalar, popcount, reorder_sign
from run_config import get_run_config, parallel_map

logger = logging.getLogger(__name__)

EXACT_QUADRATURE = "exact"
SIMPLEX_QUADRATURE = "simplex"

SIGMA_X = sympy.Matrix([[0, 1], [1, 0]])
SIGMA_Y = sympy.Matrix([[0, -sympy.I], [sympy.I, 0]])
SIGMA_Z = sympy.Matrix([[1, 0], [0, -1]])


class FormError(ValueError):
    """Form-valued matrices that do not fit together (size, grading, generator count, parity)."""


class SymbolicExpError(ValueError):
    """A closed-form exponential needs a degree-0 curvature of the form f·1."""


# ==================== HELPERS ====================

def _normal(value):
    return sympy.expand(value, power_exp=False)


def _is_symbolic(value) -> bool:
    return isinstance(value, sympy.MatrixBase)


def _coerce(value, size: Optional[int], symbolic: bool):
    if symbolic:
        mat = sympy.Matrix(value).applyfunc(_normal)
    else:
        mat = np.asarray(value, dtype=complex)
        if mat.ndim == 0:
            mat = mat * np.eye(size or 1, dtype=complex)
    if mat.shape[0] != mat.shape[1] or (size is not None and mat.shape[0] != size):
        raise FormError(f"expected a {size}×{size} coefficient, got shape {tuple(mat.shape)}")
    return mat


def _zero_matrix(mat, symbolic: bool) -> bool:
    if symbolic:
        return all(entry == 0 for entry in mat)
    return not np.any(mat)


def _zeros(size: int, symbolic: bool):
    return sympy.zeros(size, size) if symbolic else np.zeros((size, size), dtype=complex)


def _power(t, exponent: sympy.Rational, symbolic: bool):
    if exponent == 0:
        return 1
    if symbolic:
        return sympy.sympify(t) ** exponent
    return float(t) ** float(exponent)


def mask_of(indices: Iterable[int], q_bar: int) -> int:
    """Mask of the ascending monomial dy_{i1}∧...∧dy_{ik}."""
    indices = tuple(indices)
    if list(indices) != sorted(set(indices)):
        raise FormError(f"base indices must be strictly ascending, got {indices}")
    mask = 0
    for i in indices:
        if not 1 <= i <= q_bar:
            raise FormError(f"base index {i} outside 1..{q_bar}")
        mask |= 1 << (i - 1)
    return mask


def indices_of(mask: int) -> Tuple[int, ...]:
    return tuple(i + 1 for i in range(mask.bit_length()) if mask >> i & 1)


def label_of(mask: int) -> str:
    return "^".join(f"dy{i}" for i in indices_of(mask)) if mask else "1"


def parse_label(label: str, q_bar: int) -> int:
    """Inverse of label_of: "1", "dy2", "dy1^dy3"."""
    label = label.strip()
    if label in ("", "1"):
        return 0
    indices = []
    for part in label.split("^"):
        part = part.strip()
        if not part.startswith("dy") or not part[2:].isdigit():
            raise FormError(f"cannot parse form label {label!r}")
        indices.append(int(part[2:]))
    return mask_of(indices, q_bar)


@lru_cache(maxsize=None)
def _grading_signs(grading: Tuple[int, ...], symbolic: bool):
    outer = [[gi * gj for gj in grading] for gi in grading]
    return sympy.Matrix(outer) if symbolic else np.array(outer, dtype=complex)


def _split_complex(values: Sequence) -> np.ndarray:
    arr = np.array([complex(v) for v in values])
    return np.concatenate([arr.real, arr.imag])


def _join_complex(stacked: np.ndarray) -> np.ndarray:
    half = len(stacked) // 2
    return stacked[:half] + 1j * stacked[half:]


# ==================== BASE FORMS ====================

class BaseForm:
    """Scalar-valued form on the base: {mask: coefficient}."""

    def __init__(self, q_bar: int, terms: Optional[Mapping[int, object]] = None, symbolic: bool = False):
        self.q_bar = q_bar
        self.symbolic = symbolic
        clean: Dict[int, object] = {}
        for mask, value in (terms or {}).items():
            value = _normal(value) if symbolic else complex(value)
            if value != 0:
                clean[mask] = value
        self.terms = clean

    def _like(self, terms) -> "BaseForm":
        return BaseForm(self.q_bar, terms, self.symbolic)

    def coefficient(self, indices: Iterable[int] = ()):
        return self.terms.get(mask_of(indices, self.q_bar), 0)

    def degree_part(self, k: int) -> "BaseForm":
        return self._like({m: c for m, c in self.terms.items() if popcount(m) == k})

    def __add__(self, other: "BaseForm") -> "BaseForm":
        out = dict(self.terms)
        for mask, value in other.terms.items():
            out[mask] = out.get(mask, 0) + value
        return BaseForm(self.q_bar, out, self.symbolic or other.symbolic)

    def __neg__(self) -> "BaseForm":
        return self.scale(-1)

    def __sub__(self, other: "BaseForm") -> "BaseForm":
        return self + (-other)

    def scale(self, factor) -> "BaseForm":
        return self._like({m: factor * c for m, c in self.terms.items()})

    def exterior_derivative(self, coords: Sequence[sympy.Symbol]) -> "BaseForm":
        return self._like(_differentiate(self.terms, coords, self.q_bar, sympy.diff))

    def vanishes(self, tol: float = 0.0) -> bool:
        if self.symbolic:
            return all(sympy.simplify(c) == 0 for c in self.terms.values())
        return all(abs(c) <= tol for c in self.terms.values())

    def subs(self, values: Mapping) -> "BaseForm":
        return BaseForm(self.q_bar, {m: complex(sympy.sympify(c).subs(values).evalf())
                                     for m, c in self.terms.items()})

    def max_abs_difference(self, other: "BaseForm") -> float:
        keys = set(self.terms) | set(other.terms)
        return max((abs(complex(self.terms.get(k, 0)) - complex(other.terms.get(k, 0))) for k in keys),
                   default=0.0)

    def to_dict(self) -> Dict[str, object]:
        return {label_of(m): format_scalar(c) for m, c in sorted(self.terms.items())}

    def __repr__(self):
        return f"BaseForm({self.to_dict()})"


def _differentiate(terms: Mapping[int, object], coords: Sequence[sympy.Symbol], q_bar: int, diff) -> Dict[int, object]:
    """d(c dy_I) = Σ_j ∂_j c dy_j∧dy_I."""
    if len(coords) != q_bar:
        raise FormError(f"need {q_bar} base coordinates, got {len(coords)}")
    out: Dict[int, object] = {}
    for mask, value in terms.items():
        for j, y in enumerate(coords):
            bit = 1 << j
            if mask & bit:
                continue
            derivative = diff(value, y)
            if derivative == 0 or (_is_symbolic(derivative) and all(e == 0 for e in derivative)):
                continue
            term = derivative * reorder_sign(bit, mask)
            key = mask | bit
            out[key] = out[key] + term if key in out else term
    return out


# ==================== FORM MATRICES ====================

class FormMatrix:
    """Element of Λ(R^q_bar) ⊗ End(C^size), optionally super-graded by Γ = diag(grading)."""

    def __init__(self, q_bar: int, size: int, terms: Optional[Mapping[int, object]] = None,
                 grading: Optional[Sequence[int]] = None, symbolic: bool = False):
        if q_bar < 0:
            raise FormError(f"q_bar must be non-negative, got {q_bar}")
        if size < 1:
            raise FormError(f"size must be positive, got {size}")
        if grading is not None:
            grading = tuple(int(g) for g in grading)
            if len(grading) != size or any(g not in (1, -1) for g in grading):
                raise FormError(f"grading must be {size} signs ±1, got {grading}")
        self.q_bar = q_bar
        self.size = size
        self.grading = grading
        self.symbolic = symbolic
        clean: Dict[int, object] = {}
        for mask, value in (terms or {}).items():
            if mask < 0 or mask >> q_bar:
                raise FormError(f"mask {mask:b} uses generators beyond dy_{q_bar}")
            value = _coerce(value, size, symbolic)
            if not _zero_matrix(value, symbolic):
                clean[mask] = value
        self.terms = clean

    # ---------- constructors ----------

    @classmethod
    def constant(cls, matrix, q_bar: int = 0, grading: Optional[Sequence[int]] = None,
                 symbolic: Optional[bool] = None) -> "FormMatrix":
        symbolic = _is_symbolic(matrix) if symbolic is None else symbolic
        mat = _coerce(matrix, None, symbolic)
        return cls(q_bar, mat.shape[0], {0: mat}, grading, symbolic)

    @classmethod
    def from_blocks(cls, q_bar: int, blocks: Mapping[Tuple[int, ...], object],
                    grading: Optional[Sequence[int]] = None, symbolic: Optional[bool] = None) -> "FormMatrix":
        """{(1, 2): M} means dy_1∧dy_2 ⊗ M."""
        if not blocks:
            raise FormError("from_blocks needs at least one block")
        first = next(iter(blocks.values()))
        symbolic = _is_symbolic(first) if symbolic is None else symbolic
        size = _coerce(first, None, symbolic).shape[0]
        return cls(q_bar, size, {mask_of(k, q_bar): v for k, v in blocks.items()}, grading, symbolic)

    @classmethod
    def from_labels(cls, q_bar: int, blocks: Mapping[str, object], size: int,
                    grading: Optional[Sequence[int]] = None) -> "FormMatrix":
        return cls(q_bar, size, {parse_label(k, q_bar): v for k, v in blocks.items()}, grading)

    def _like(self, terms: Mapping[int, object]) -> "FormMatrix":
        return FormMatrix(self.q_bar, self.size, terms, self.grading, self.symbolic)

    def zero(self) -> "FormMatrix":
        return self._like({})

    def identity(self) -> "FormMatrix":
        eye = sympy.eye(self.size) if self.symbolic else np.eye(self.size, dtype=complex)
        return self._like({0: eye})

    def lift(self, matrix) -> "FormMatrix":
        """Degree-0 element with the same shape data."""
        return self._like({0: matrix})

    # ---------- access ----------

    def coefficient(self, indices: Iterable[int] = ()):
        mask = mask_of(indices, self.q_bar)
        return self.terms.get(mask, _zeros(self.size, self.symbolic))

    def degree_part(self, k: int) -> "FormMatrix":
        return self._like({m: v for m, v in self.terms.items() if popcount(m) == k})

    def positive_part(self) -> "FormMatrix":
        return self._like({m: v for m, v in self.terms.items() if m})

    @property
    def min_degree(self) -> Optional[int]:
        return min((popcount(m) for m in self.terms), default=None)

    def is_zero(self) -> bool:
        return not self.terms

    # ---------- arithmetic ----------

    def _check(self, other: "FormMatrix"):
        if not isinstance(other, FormMatrix):
            raise TypeError(f"expected a FormMatrix, got {type(other).__name__}")
        mine = (self.q_bar, self.size, self.grading, self.symbolic)
        theirs = (other.q_bar, other.size, other.grading, other.symbolic)
        if mine != theirs:
            raise FormError(f"incompatible form matrices {mine} and {theirs}")

    def __add__(self, other: "FormMatrix") -> "FormMatrix":
        self._check(other)
        out = dict(self.terms)
        for mask, value in other.terms.items():
            out[mask] = out[mask] + value if mask in out else value
        return self._like(out)

    def __neg__(self) -> "FormMatrix":
        return self.scale(-1)

    def __sub__(self, other: "FormMatrix") -> "FormMatrix":
        return self + (-other)

    def scale(self, factor) -> "FormMatrix":
        if self.symbolic:
            factor = sympy.sympify(factor)
        return self._like({m: v * factor for m, v in self.terms.items()})

    def flip(self, matrix=None):
        """Γ M Γ on one coefficient, or on every coefficient when called without one."""
        if matrix is None:
            return self._like({m: self.flip(v) for m, v in self.terms.items()})
        if self.grading is None:
            return matrix
        signs = _grading_signs(self.grading, self.symbolic)
        return matrix.multiply_elementwise(signs) if self.symbolic else matrix * signs

    def __mul__(self, other):
        if not isinstance(other, FormMatrix):
            return self.scale(other)
        self._check(other)
        out: Dict[int, object] = {}
        for ma, left in self.terms.items():
            flipped = self.flip(left)
            for mb, right in other.terms.items():
                if ma & mb:
                    continue
                factor = flipped if popcount(mb) & 1 else left
                term = (factor @ right) * reorder_sign(ma, mb)
                key = ma | mb
                out[key] = out[key] + term if key in out else term
        return self._like(out)

    def __rmul__(self, other):
        return self.scale(other)

    def power(self, k: int) -> "FormMatrix":
        return reduce(lambda acc, _: acc * self, range(k), self.identity())

    def parity_parts(self) -> Tuple["FormMatrix", "FormMatrix"]:
        """(even, odd) in the total parity: form degree plus matrix parity."""
        if self.grading is None:
            raise FormError("parity is only defined with a grading")
        half = sympy.Rational(1, 2) if self.symbolic else 0.5
        even: Dict[int, object] = {}
        odd: Dict[int, object] = {}
        for mask, value in self.terms.items():
            flipped = self.flip(value)
            m_even, m_odd = (value + flipped) * half, (value - flipped) * half
            if popcount(mask) & 1:
                m_even, m_odd = m_odd, m_even
            even[mask], odd[mask] = m_even, m_odd
        return self._like(even), self._like(odd)

    def rescale(self, t) -> "FormMatrix":
        """ψ_t: a degree-k coefficient is multiplied by t^{-k/2}."""
        return self._like({m: v * _power(t, sympy.Rational(-popcount(m), 2), self.symbolic)
                           for m, v in self.terms.items()})

    def exterior_derivative(self, coords: Sequence[sympy.Symbol]) -> "FormMatrix":
        if not self.symbolic:
            return self.zero()
        return self._like(_differentiate(self.terms, coords, self.q_bar, lambda m, y: m.diff(y)))

    # ---------- traces ----------

    def supertrace(self) -> BaseForm:
        """Str(ω ⊗ M) = ω tr(ΓM)."""
        if self.grading is None:
            raise FormError("supertrace needs a grading")
        out = {}
        for mask, value in self.terms.items():
            out[mask] = sum((g * value[i, i] for i, g in enumerate(self.grading)), 0)
        return BaseForm(self.q_bar, out, self.symbolic)

    def trace(self, even_only: bool = False) -> BaseForm:
        """Ordinary trace of each coefficient; Tr^even keeps the even form degrees."""
        out = {}
        for mask, value in self.terms.items():
            if even_only and popcount(mask) & 1:
                continue
            out[mask] = value.trace() if self.symbolic else np.trace(value)
        return BaseForm(self.q_bar, out, self.symbolic)

    # ---------- numerics ----------

    def subs(self, values: Mapping) -> "FormMatrix":
        if not self.symbolic:
            return self
        terms = {m: np.array(v.subs(values).evalf(), dtype=complex) for m, v in self.terms.items()}
        return FormMatrix(self.q_bar, self.size, terms, self.grading, False)

    def max_abs(self) -> float:
        if self.symbolic:
            raise FormError("max_abs needs numeric coefficients")
        return max((float(np.max(np.abs(v))) for v in self.terms.values()), default=0.0)

    def to_dict(self) -> Dict[str, object]:
        return {
            "q_bar": self.q_bar,
            "size": self.size,
            "grading": list(self.grading) if self.grading else None,
            "terms": {label_of(m): [[format_scalar(v[i, j]) for j in range(self.size)] for i in range(self.size)]
                      for m, v in sorted(self.terms.items())},
        }

    def __repr__(self):
        return f"FormMatrix(q_bar={self.q_bar}, size={self.size}, degrees={sorted(popcount(m) for m in self.terms)})"


def supercommutator(a: FormMatrix, b: FormMatrix) -> FormMatrix:
    """[a, b] = ab - (-1)^{|a||b|} ba over the total-parity parts."""
    result = a.zero()
    for pa, part_a in zip((0, 1), a.parity_parts()):
        for pb, part_b in zip((0, 1), b.parity_parts()):
            if part_a.is_zero() or part_b.is_zero():
                continue
            sign = -1 if pa * pb else 1
            result = result + part_a * part_b - (part_b * part_a).scale(sign)
    return result


# ==================== FAITHFUL REPRESENTATION ====================

class FormRepresentation:
    """
    Faithful matrix image of numeric FormMatrix elements on Λ(R^q_bar) ⊗ C^size:
    ρ(ω ⊗ M) = ε_ω ⊗ M_even + ε_ω P ⊗ M_odd, with P the form-degree parity.
    The coefficient matrices of an element are the blocks of its image in the
    column of the vacuum 1 ∈ Λ.
    """

    def __init__(self, q_bar: int, size: int, grading: Optional[Tuple[int, ...]] = None):
        self.q_bar = q_bar
        self.size = size
        self.grading = grading
        forms = 1 << q_bar
        generators = [exterior_multiplication(q_bar, g) for g in range(q_bar)]
        self._eps = {}
        for mask in range(forms):
            mat = np.eye(forms, dtype=complex)
            for g in range(q_bar):
                if mask >> g & 1:
                    mat = mat @ generators[g]
            self._eps[mask] = mat
        self._parity = np.diag([(-1.0) ** popcount(s) for s in range(forms)]).astype(complex)
        self.dim = forms * size

    @classmethod
    def of(cls, element: FormMatrix) -> "FormRepresentation":
        return cls(element.q_bar, element.size, element.grading)

    def matrix(self, element: FormMatrix) -> np.ndarray:
        if element.symbolic:
            raise FormError("the matrix representation needs numeric coefficients")
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for mask, value in element.terms.items():
            eps = self._eps[mask]
            if element.grading is None:
                out += np.kron(eps, value)
                continue
            flipped = element.flip(value)
            out += np.kron(eps, (value + flipped) / 2) + np.kron(eps @ self._parity, (value - flipped) / 2)
        return out

    def decode(self, image: np.ndarray, min_degree: int = 0) -> FormMatrix:
        size = self.size
        terms = {}
        for mask in range(1 << self.q_bar):
            if popcount(mask) < min_degree:
                continue
            terms[mask] = image[mask * size:(mask + 1) * size, :size]
        return FormMatrix(self.q_bar, size, terms, self.grading)

    def exp(self, element: FormMatrix, factor: float = -1.0) -> FormMatrix:
        """e^{factor·element}, exact up to the dense matrix exponential."""
        return self.decode(linalg.expm(factor * self.matrix(element)))


# ==================== SUPERCONNECTIONS ====================

@dataclass(frozen=True, eq=False)
class Superconnection:
    """B = d + D + A_+ with D of degree 0 and A_+ of positive form degree."""
    D: FormMatrix
    A_plus: FormMatrix
    coords: Tuple[sympy.Symbol, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        self.D._check(self.A_plus)
        if any(mask for mask in self.D.terms):
            raise FormError("D must have form degree 0")
        if 0 in self.A_plus.terms:
            raise FormError("A_plus must have strictly positive form degree")
        if self.symbolic and len(self.coords) != self.q_bar:
            raise FormError(f"symbolic superconnections need {self.q_bar} base coordinates")
        if self.D.grading is not None:
            even, _ = self.operator.parity_parts()
            if not even.is_zero() and (self.symbolic or even.max_abs() > 1e-12):
                raise FormError("B must be odd in the total grading")
        if not self.symbolic:
            d0 = self.D.coefficient()
            if not np.allclose(d0, d0.conj().T, atol=1e-12):
                raise FormError("D must be self-adjoint")

    @classmethod
    def from_dirac(cls, D, q_bar: int = 0, grading: Optional[Sequence[int]] = None,
                   A_plus: Optional[FormMatrix] = None, coords: Sequence[sympy.Symbol] = ()) -> "Superconnection":
        dirac = FormMatrix.constant(D, q_bar, grading)
        return cls(dirac, A_plus if A_plus is not None else dirac.zero(), tuple(coords))

    @property
    def q_bar(self) -> int:
        return self.D.q_bar

    @property
    def size(self) -> int:
        return self.D.size

    @property
    def grading(self):
        return self.D.grading

    @property
    def symbolic(self) -> bool:
        return self.D.symbolic

    @property
    def operator(self) -> FormMatrix:
        """D + A_+, the part of B beyond the trivial connection d."""
        return self.D + self.A_plus

    def dirac_invertible(self, tol: float = 1e-12) -> bool:
        if self.symbolic:
            return sympy.simplify(self.D.coefficient().det()) != 0
        return float(np.min(np.linalg.svd(self.D.coefficient(), compute_uv=False))) > tol

    def differential(self, element: FormMatrix) -> FormMatrix:
        return element.exterior_derivative(self.coords)

    def rescaled(self, t) -> FormMatrix:
        """√t ψ_t of the operator part: Σ_k t^{(1-k)/2} X_k."""
        out = self.D.zero()
        for k in range(self.q_bar + 1):
            part = self.operator.degree_part(k)
            if not part.is_zero():
                out = out + part.scale(_power(t, sympy.Rational(1 - k, 2), self.symbolic))
        return out

    def rescaled_derivative(self, t) -> FormMatrix:
        """d/dt of rescaled(t), term by term."""
        out = self.D.zero()
        for k in range(self.q_bar + 1):
            part = self.operator.degree_part(k)
            if k == 1 or part.is_zero():
                continue
            weight = sympy.Rational(1 - k, 2)
            coeff = weight * _power(t, weight - 1, self.symbolic)
            out = out + part.scale(coeff if self.symbolic else float(coeff))
        return out

    def bracket(self, element: FormMatrix) -> FormMatrix:
        """[B, a] = da + [D + A_+, a]."""
        return self.differential(element) + supercommutator(self.operator, element)


@dataclass(frozen=True, eq=False)
class CurvatureSplit:
    total: FormMatrix
    square: FormMatrix
    positive: FormMatrix

    @classmethod
    def of(cls, F: FormMatrix) -> "CurvatureSplit":
        return cls(F, F.degree_part(0), F.positive_part())

    def scalar_square(self):
        """f when the degree-0 part is f·1, otherwise None."""
        mat = self.square.coefficient()
        f = mat[0, 0]
        for i in range(self.total.size):
            for j in range(self.total.size):
                expected = f if i == j else 0
                if (sympy.simplify(mat[i, j] - expected) != 0) if self.total.symbolic \
                        else abs(mat[i, j] - expected) > 1e-14:
                    return None
        return f


def curvature(B: Superconnection, t=1) -> CurvatureSplit:
    """F_t = d X_t + X_t², X_t = rescaled(t); t = 1 gives F = B²."""
    X = B.operator if t == 1 else B.rescaled(t)
    F = B.differential(X) + X * X
    return CurvatureSplit.of(F)


def _as_split(F: Union[FormMatrix, CurvatureSplit]) -> CurvatureSplit:
    return F if isinstance(F, CurvatureSplit) else CurvatureSplit.of(F)


def _heat_series(curv: CurvatureSplit, t) -> Tuple[FormMatrix, object]:
    """(Σ_{k≤q_bar} (-tF_+)^k/k!, t·f) for a symbolic curvature with F_0 = f·1."""
    f = curv.scalar_square()
    if f is None:
        raise SymbolicExpError("symbolic exponentials need a degree-0 curvature f·1")
    t = sympy.sympify(t)
    series = curv.total.zero()
    step = curv.total.identity()
    for k in range(curv.total.q_bar + 1):
        series = series + step.scale(sympy.Rational(1, math.factorial(k)))
        step = step * curv.positive.scale(-t)
    return series, _normal(t * f)


def heat_exp(F: Union[FormMatrix, CurvatureSplit], t=1) -> FormMatrix:
    """e^{-tF}: faithful-representation exponential, or e^{-tf} Σ (-tF_+)^k/k! when F_0 = f·1."""
    curv = _as_split(F)
    if not curv.total.symbolic:
        return FormRepresentation.of(curv.total).exp(curv.total, -float(t))
    series, exponent = _heat_series(curv, t)
    return series.scale(sympy.exp(-exponent))


# ==================== DUHAMEL EXPANSION ====================

def simplex_rule(k: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss rule on Δ_k = {s ∈ R^{k+1}_{≥0}, Σ s = 1} through collapsed coordinates:
    σ_k = u_k, σ_j = u_j σ_{j+1}, Jacobian Π_m u_m^{m-1}. Returns (nodes (N, k+1), weights);
    the weights sum to 1/k!.
    """
    if k == 0:
        return np.ones((1, 1)), np.ones(1)
    x, w = roots_legendre(order)
    u, w = (x + 1) / 2, w / 2
    grids = np.meshgrid(*([u] * k), indexing="ij")
    U = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack(np.meshgrid(*([w] * k), indexing="ij")), axis=0).ravel()
    for m in range(1, k):
        weights = weights * U[:, m] ** m
    sigma = np.empty_like(U)
    sigma[:, k - 1] = U[:, k - 1]
    for j in range(k - 2, -1, -1):
        sigma[:, j] = U[:, j] * sigma[:, j + 1]
    nodes = np.empty((U.shape[0], k + 1))
    nodes[:, 0] = sigma[:, 0]
    nodes[:, 1:k] = np.diff(sigma, axis=1)
    nodes[:, k] = 1 - sigma[:, k - 1]
    return nodes, weights


def _propagator(square: np.ndarray, t: float) -> Callable[[float], np.ndarray]:
    """s ↦ e^{-s t square}."""
    if np.allclose(square, square.conj().T, atol=1e-13):
        vals, vecs = np.linalg.eigh(square)
        return lambda s: (vecs * np.exp(-s * t * vals)) @ vecs.conj().T
    return lambda s: linalg.expm(-s * t * square)


def duhamel_term(F: Union[FormMatrix, CurvatureSplit], t, k: int, quadrature: str = EXACT_QUADRATURE,
                 order: int = 16, workers: Optional[int] = None) -> FormMatrix:
    """I_k = ∫_{Δ_k} e^{-s_0 tD²} F_+ e^{-s_1 tD²} ··· F_+ e^{-s_k tD²} ds."""
    curv = _as_split(F)
    total = curv.total
    if k > total.q_bar:
        return total.zero()
    if total.symbolic:
        f = curv.scalar_square()
        if f is None:
            raise SymbolicExpError("symbolic Duhamel terms need a degree-0 curvature f·1")
        return curv.positive.power(k).scale(sympy.exp(-sympy.sympify(t) * f) / math.factorial(k))
    t = float(t)
    square = curv.square.coefficient()
    if k == 0:
        return total.lift(linalg.expm(-t * square))
    if quadrature == EXACT_QUADRATURE:
        return _van_loan_term(curv, t, k)
    if quadrature != SIMPLEX_QUADRATURE:
        raise ValueError(f"unknown quadrature {quadrature!r}")

    nodes, weights = simplex_rule(k, order)
    propagate = _propagator(square, t)
    positive = curv.positive

    def node_value(i: int) -> FormMatrix:
        s = nodes[i]
        prod = total.lift(propagate(s[0]))
        for j in range(1, k + 1):
            prod = prod * positive * total.lift(propagate(s[j]))
        return prod.scale(weights[i])

    values = parallel_map(node_value, range(len(weights)), workers)
    return reduce(lambda acc, v: acc + v, values, total.zero())


def _van_loan_term(curv: CurvatureSplit, t: float, k: int) -> FormMatrix:
    """Upper-right block of exp of the bidiagonal block matrix (diag -tρ(D²), superdiag ρ(F_+))."""
    rep = FormRepresentation.of(curv.total)
    diag = -t * rep.matrix(curv.square)
    upper = rep.matrix(curv.positive)
    n = rep.dim
    big = np.zeros(((k + 1) * n, (k + 1) * n), dtype=complex)
    for j in range(k + 1):
        big[j * n:(j + 1) * n, j * n:(j + 1) * n] = diag
        if j < k:
            big[j * n:(j + 1) * n, (j + 1) * n:(j + 2) * n] = upper
    block = linalg.expm(big)[:n, k * n:(k + 1) * n]
    return rep.decode(block, min_degree=k)


def duhamel_exp(F: Union[FormMatrix, CurvatureSplit], t, quadrature: str = EXACT_QUADRATURE,
                order: int = 16, workers: Optional[int] = None) -> FormMatrix:
    """e^{-tF} = e^{-tD²} + Σ_{k=1}^{q_bar} (-t)^k I_k; the series stops at q_bar."""
    curv = _as_split(F)
    out = curv.total.zero()
    for k in range(curv.total.q_bar + 1):
        term = duhamel_term(curv, t, k, quadrature, order, workers)
        out = out + term.scale((-t) ** k)
    logger.debug("[Duhamel] %s t=%s q_bar=%d", quadrature, t, curv.total.q_bar)
    return out


def heat_residual(F: Union[FormMatrix, CurvatureSplit], t: float, quadrature: str = EXACT_QUADRATURE,
                  order: int = 16, h: float = 1e-3) -> float:
    """max |(∂_t + F) e^{-tF}| with a five-point difference in t."""
    curv = _as_split(F)
    if t <= 2 * h:
        raise ValueError(f"t={t} too small for step h={h}")

    def E(s):
        return duhamel_exp(curv, s, quadrature, order)

    derivative = (E(t - 2 * h) - E(t - h).scale(8) + E(t + h).scale(8) - E(t + 2 * h)).scale(1 / (12 * h))
    return (derivative + curv.total * E(t)).max_abs()


# ==================== CHERN FORMS ====================

def _phi(B: Superconnection, phi) -> FormMatrix:
    if phi is None:
        return B.D.identity()
    phi_form = B.D.lift(phi)
    if B.grading is not None:
        odd = phi_form - phi_form.flip()
        if not odd.is_zero() and (B.symbolic or odd.max_abs() > 1e-12):
            raise FormError("φ must be an even matrix")
    commutator = phi_form * B.operator - B.operator * phi_form
    residue = (not commutator.is_zero()) and (B.symbolic or commutator.max_abs() > 1e-12)
    if residue:
        logger.warning("[Chern] φ does not commute with B; closedness is not guaranteed")
    return phi_form


def chern_form(B: Superconnection, t=1, phi=None) -> BaseForm:
    """ψ_t Str[φ e^{-tF}] = Str[φ e^{-F_t}]."""
    phi_form = _phi(B, phi)
    return (phi_form * heat_exp(curvature(B, t))).supertrace()


def transgression_density(B: Superconnection, t, phi=None) -> BaseForm:
    """Str[φ (dB_t/dt) e^{-B_t²}]."""
    phi_form = _phi(B, phi)
    return (phi_form * B.rescaled_derivative(t) * heat_exp(curvature(B, t))).supertrace()


def transgression_form(B: Superconnection, t1, t2, phi=None) -> BaseForm:
    """α = -∫_{t1}^{t2} Str[φ (dB_t/dt) e^{-B_t²}] dt, so that dα = ch_{t2} - ch_{t1}."""
    if not B.symbolic:
        def integrand(t):
            density = transgression_density(B, t, phi)
            return _split_complex([density.terms.get(m, 0) for m in range(1 << B.q_bar)])

        stacked, _ = integrate.quad_vec(integrand, float(t1), float(t2), epsabs=1e-12)
        values = _join_complex(stacked)
        return BaseForm(B.q_bar, {m: -v for m, v in enumerate(values)})

    s = sympy.Symbol("s", positive=True)
    w = sympy.Symbol("w", positive=True)
    phi_form = _phi(B, phi)
    series, exponent = _heat_series(curvature(B, s), 1)
    rate = _normal(exponent / s)
    # e^{-B_s²} = e^{-s·rate}·series, series polynomial in √s
    density = (phi_form * B.rescaled_derivative(s) * series).supertrace()
    out = {}
    for mask, value in density.terms.items():
        polynomial = value.as_poly(s)
        if polynomial is None:
            out[mask] = -sympy.integrate(value * sympy.exp(-s * rate), (s, t1, t2), conds="none")
            continue
        total = 0
        for (n,), coeff in polynomial.terms():
            moment = sympy.integrate(s ** n * sympy.exp(-s * w), (s, t1, t2), conds="none")
            total += coeff * moment.subs(w, rate)
        out[mask] = -total
    logger.debug("[Chern] transgression over [%s, %s] with %d coefficients", t1, t2, len(out))
    return BaseForm(B.q_bar, out, True)


def transgression_defect(B: Superconnection, t1, t2, phi=None) -> BaseForm:
    """ch_{t2} - ch_{t1} - dα; vanishes identically."""
    alpha = transgression_form(B, t1, t2, phi)
    difference = chern_form(B, t2, phi) - chern_form(B, t1, phi)
    if not B.symbolic:
        return difference
    return difference - alpha.exterior_derivative(B.coords)


def toy_family() -> Superconnection:
    """Rank-2 family over R^3: D = (1+y3²)(y1σx + y2σy), A_+ = y2 dy1 ⊗ σz, Γ = σz."""
    y1, y2, y3 = sympy.symbols("y1:4", real=True)
    D = (1 + y3 ** 2) * (y1 * SIGMA_X + y2 * SIGMA_Y)
    grading = (1, -1)
    dirac = FormMatrix(3, 2, {0: D}, grading, symbolic=True)
    A_plus = FormMatrix(3, 2, {mask_of((1,), 3): y2 * SIGMA_Z}, grading, symbolic=True)
    return Superconnection(dirac, A_plus, (y1, y2, y3))


# ==================== JLO COCHAIN ====================

@dataclass
class JLOResult:
    value: BaseForm
    k: int
    t: float
    order: int
    refinement: float = 0.0

    def to_dict(self) -> Dict[str, object]:
        return {"k": self.k, "t": self.t, "order": self.order,
                "refinement": self.refinement, "value": self.value.to_dict()}


def jlo_cochain(B: Superconnection, t: float, inputs: Sequence[FormMatrix], phi=None,
                order: Optional[int] = None, workers: Optional[int] = None) -> JLOResult:
    """
    t^k ∫_{Δ_2k} Str[ψ_t φ T_0 e^{-s_0 tF} T_1 e^{-s_1 tF} ··· T_2k e^{-s_2k tF}] ds
    with T_0 = a_0 and T_j = [B, a_j]. The refinement field is the change
    against a rule four points coarser.
    """
    if B.symbolic:
        raise FormError("jlo_cochain needs numeric coefficients")
    if len(inputs) % 2 == 0:
        raise FormError(f"need 2k+1 inputs, got {len(inputs)}")
    for a in inputs:
        B.D._check(a)
    k = (len(inputs) - 1) // 2
    order = order or get_run_config().quadrature_order
    phi_form = _phi(B, phi)
    chain = [phi_form * inputs[0]] + [B.bracket(a) for a in inputs[1:]]
    F = curvature(B).total
    rep = FormRepresentation.of(F)
    image = rep.matrix(F)
    t = float(t)

    def evaluate(rule_order: int) -> BaseForm:
        nodes, weights = simplex_rule(2 * k, rule_order)

        def node_value(i: int) -> FormMatrix:
            prod = chain[0]
            for j, s in enumerate(nodes[i]):
                prod = prod * rep.decode(linalg.expm(-s * t * image))
                if j < 2 * k:
                    prod = prod * chain[j + 1]
            return prod.scale(weights[i])

        values = parallel_map(node_value, range(len(weights)), workers)
        total = reduce(lambda acc, v: acc + v, values, F.zero())
        return total.rescale(t).supertrace().scale(t ** k)

    value = evaluate(order)
    refinement = value.max_abs_difference(evaluate(max(order - 4, 2))) if k else 0.0
    logger.info("[JLO] k=%d t=%s order=%d refinement=%.2e", k, t, order, refinement)
    return JLOResult(value, k, t, order, refinement)


# ==================== GRASSMANN VARIABLE ====================

class GrassmannAug:
    """p + z q over square matrices; z is odd with z² = 0 and z M = (ΓMΓ) z."""

    __array_ufunc__ = None

    def __init__(self, primal, tangent=None, grading: Optional[Sequence[int]] = None):
        self.primal = np.asarray(primal, dtype=complex)
        self.tangent = np.zeros_like(self.primal) if tangent is None else np.asarray(tangent, dtype=complex)
        if self.primal.shape != self.tangent.shape:
            raise ValueError(f"primal {self.primal.shape} and tangent {self.tangent.shape} differ")
        self.grading = tuple(grading) if grading is not None else None

    def __str__(self):
        return f"{self.primal}+z{self.tangent}"

    def __repr__(self):
        return self.__str__()

    def _flip(self, m: np.ndarray) -> np.ndarray:
        if self.grading is None:
            return m
        return m * _grading_signs(self.grading, False)

    def _coerce(self, other) -> "GrassmannAug":
        if isinstance(other, GrassmannAug):
            return other
        if isinstance(other, numbers.Number):
            return GrassmannAug(other * np.eye(self.primal.shape[0]), None, self.grading)
        if isinstance(other, np.ndarray):
            return GrassmannAug(other, None, self.grading)
        raise TypeError('The other operand should be a scalar, a matrix or a {}'.format(self.__class__.__name__))

    def __add__(self, other):
        other = self._coerce(other)
        return GrassmannAug(self.primal + other.primal, self.tangent + other.tangent, self.grading)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return GrassmannAug(-self.primal, -self.tangent, self.grading)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, numbers.Number):
            return GrassmannAug(self.primal * other, self.tangent * other, self.grading)
        other = self._coerce(other)
        primal = self.primal @ other.primal
        tangent = self.tangent @ other.primal + self._flip(self.primal) @ other.tangent
        return GrassmannAug(primal, tangent, self.grading)

    __matmul__ = __mul__

    def __rmul__(self, other):
        if isinstance(other, numbers.Number):
            return self.__mul__(other)
        return self._coerce(other).__mul__(self)

    def max_abs_difference(self, other: "GrassmannAug") -> float:
        return float(max(np.max(np.abs(self.primal - other.primal)), np.max(np.abs(self.tangent - other.tangent))))


def dual_expm(X: GrassmannAug) -> GrassmannAug:
    """exp(P + zQ) = e^P + z ∫_0^1 e^{sP̃} Q e^{(1-s)P} ds with P̃ = ΓPΓ, via one block exponential."""
    n = X.primal.shape[0]
    big = np.zeros((2 * n, 2 * n), dtype=complex)
    big[:n, :n] = X._flip(X.primal)
    big[:n, n:] = X.tangent
    big[n:, n:] = X.primal
    E = linalg.expm(big)
    return GrassmannAug(E[n:, n:], E[:n, n:], X.grading)


@dataclass
class GrassmannReport:
    t: float
    size: int
    deviation: float

    def passed(self, tol: float = 1e-10) -> bool:
        return self.deviation <= tol

    def to_dict(self) -> Dict[str, object]:
        return {"t": self.t, "size": self.size, "deviation": self.deviation}


def grassmann_exp_identity(D, t: float, grading: Optional[Sequence[int]] = None) -> GrassmannReport:
    """Compare exp(-t(D² - zD)) with exp(-tD²) + z tD exp(-tD²)."""
    D = np.asarray(D, dtype=complex)
    square = D @ D
    lhs = dual_expm(GrassmannAug(-t * square, t * D, grading))
    heat = linalg.expm(-t * square)
    rhs = GrassmannAug(heat, t * D @ heat, grading)
    report = GrassmannReport(float(t), D.shape[0], lhs.max_abs_difference(rhs))
    logger.debug("[Grassmann] size=%d t=%s deviation=%.2e", report.size, t, report.deviation)
    return report


# ==================== ETA FORMS ====================

@dataclass
class EtaIntegrand:
    """Both forms of the eta-form integrand at one t, and their coefficientwise ratio."""
    t: float
    definition: BaseForm
    rewrite: BaseForm

    def ratios(self, tol: float = 1e-14) -> Dict[str, Optional[complex]]:
        out = {}
        for mask in sorted(set(self.definition.terms) | set(self.rewrite.terms)):
            base = complex(self.definition.terms.get(mask, 0))
            other = complex(self.rewrite.terms.get(mask, 0))
            out[label_of(mask)] = other / base if abs(base) > tol else None
        return out

    def to_dict(self) -> Dict[str, object]:
        return {
            "t": self.t,
            "definition": self.definition.to_dict(),
            "rewrite": self.rewrite.to_dict(),
            "ratios": {k: format_scalar(v) if v is not None else None for k, v in self.ratios().items()},
        }


def eta_form_integrand(B: Superconnection, t: float, phi=None, clifford_torsion=None) -> EtaIntegrand:
    """
    definition: Tr^even[φ (dB_t/dt) e^{-B_t²}]
    rewrite:    (2√t)^{-1} Tr^even[ψ_t φ (D + c(T)/4) e^{-tF}]
    clifford_torsion is the optional odd matrix standing in for c(T).
    """
    phi_form = _phi(B, phi)
    definition = (phi_form * B.rescaled_derivative(t) * heat_exp(curvature(B, t))).trace(even_only=True)
    middle = B.D
    if clifford_torsion is not None:
        middle = middle + B.D.lift(clifford_torsion).scale(0.25)
    rescaled = (phi_form * middle * heat_exp(curvature(B), t)).rescale(t)
    rewrite = rescaled.trace(even_only=True).scale(1 / (2 * math.sqrt(t)))
    return EtaIntegrand(float(t), definition, rewrite)


@dataclass
class EtaFormResult:
    value: BaseForm
    refinement: float

    def to_dict(self) -> Dict[str, object]:
        return {"value": self.value.to_dict(), "refinement": self.refinement}


def eta_form(B: Superconnection, phi=None, epsabs: float = 1e-10) -> EtaFormResult:
    """
    ∫_0^∞ of the defining integrand, split at t = 1 with t = u² on the inner
    piece. The refinement field compares against a run at 100·epsabs.
    """
    masks = [m for m in range(1 << B.q_bar) if popcount(m) % 2 == 0]

    def vector(t: float) -> np.ndarray:
        form = eta_form_integrand(B, t, phi).definition
        return _split_complex([form.terms.get(m, 0) for m in masks])

    def inner(u: float) -> np.ndarray:
        return 2 * u * vector(u * u) if u > 0 else np.zeros(2 * len(masks))

    def run(tol: float) -> np.ndarray:
        near, _ = integrate.quad_vec(inner, 0.0, 1.0, epsabs=tol)
        far, _ = integrate.quad_vec(vector, 1.0, np.inf, epsabs=tol)
        return _join_complex(near + far)

    fine = run(epsabs)
    coarse = run(100 * epsabs)
    value = BaseForm(B.q_bar, dict(zip(masks, fine)))
    refinement = float(np.max(np.abs(fine - coarse))) if masks else 0.0
    logger.info("[Eta] eta form over %d even coefficients, refinement=%.2e", len(masks), refinement)
    return EtaFormResult(value, refinement)


# ==================== TEST MODELS ====================

def random_superconnection(rng: np.random.Generator, size: int = 4, q_bar: int = 2,
                           scale: float = 0.5) -> Superconnection:
    """Random odd self-adjoint D with random A_+ of the right parity in every degree."""
    if size % 2:
        raise ValueError("graded random models need an even size")
    half = size // 2
    grading = (1,) * half + (-1,) * half

    def block(even: bool) -> np.ndarray:
        mat = scale * (rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size)))
        mask = np.zeros((size, size), dtype=bool)
        mask[:half, :half] = mask[half:, half:] = True
        return np.where(mask if even else ~mask, mat, 0)

    W = scale * (rng.normal(size=(half, half)) + 1j * rng.normal(size=(half, half)))
    D = np.zeros((size, size), dtype=complex)
    D[:half, half:] = W
    D[half:, :half] = W.conj().T
    A_plus = {mask: block(popcount(mask) % 2 == 1) for mask in range(1, 1 << q_bar)}
    return Superconnection(FormMatrix(q_bar, size, {0: D}, grading),
                           FormMatrix(q_bar, size, A_plus, grading))
