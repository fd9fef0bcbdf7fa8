"""
Graded Coefficient Algebra

Sparse exact arithmetic in Cl(n) ⊗ Λ(base) ⊗ Λ(aux): Clifford relations, the
quantization/symbol pair, supertraces and odd traces, Berezin integrals and the
equivariant supertrace at a fixed point.

Every generator (Clifford, base form, auxiliary Grassmann variable) is odd and
has a fixed position in one ordered list: c(e_1)..c(e_n), dy_1..dy_q, aux...
A basis monomial is the ascending product of the generators in its bitmask, so
the Koszul sign of a product is the canonical reordering sign of the masks.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import sympy

logger = logging.getLogger(__name__)

EXACT = "exact"
FLOAT = "float"

FULL = "full"
STAR_ZERO = "star_zero"


class ContextMismatchError(ValueError):
    """Operands live in different algebras."""


class ParityError(ValueError):
    """Trace requested for the wrong parity of fiber dimension."""


class BerezinRangeError(ValueError):
    """Fixed-point dimension outside 0..n."""


class DegenerateActionError(ValueError):
    """The normal action has an eigenvalue 1."""


def popcount(bits: int) -> int:
    return bin(bits).count("1")


def reorder_sign(a: int, b: int) -> int:
    """Sign of sorting the concatenated generator lists of masks a and b."""
    a >>= 1
    swaps = 0
    while a:
        swaps += popcount(a & b)
        a >>= 1
    return -1 if swaps & 1 else 1


def normalize_scalar(value, mode: str):
    """Bring a coefficient into canonical form for the scalar tower."""
    if mode == FLOAT:
        return complex(value)
    value = sympy.sympify(value)
    if value.is_Rational:
        return value
    return sympy.expand(value)


def constant(value, mode: str):
    """Scalar constant in the requested mode (sympy expression or complex)."""
    return normalize_scalar(value, mode)


def format_scalar(value):
    """JSON-friendly scalar: "p/q" for rationals, {"re", "im"} for complex, floats as floats."""
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, complex):
        return value.real if value.imag == 0 else {"re": value.real, "im": value.imag}
    value = sympy.sympify(value)
    if value.is_Rational:
        return str(value)
    re, im = value.as_real_imag()
    if re.is_Rational and im.is_Rational:
        return {"re": str(re), "im": str(im)}
    return str(value)


@dataclass(frozen=True)
class AlgebraContext:
    """Shape of the coefficient algebra Cl(n) ⊗ Λ(R^q_bar) ⊗ Λ(aux)."""
    n: int
    q_bar: int = 0
    aux: Tuple[str, ...] = ()
    scalar_mode: str = EXACT

    def __post_init__(self):
        object.__setattr__(self, "aux", tuple(self.aux))
        if self.n < 1:
            raise ValueError(f"fiber dimension must be positive, got {self.n}")
        if self.q_bar < 0:
            raise ValueError(f"base generator count must be non-negative, got {self.q_bar}")
        if len(set(self.aux)) != len(self.aux):
            raise ValueError(f"auxiliary generator names must be unique: {self.aux}")
        if self.scalar_mode not in (EXACT, FLOAT):
            raise ValueError(f"unknown scalar mode {self.scalar_mode!r}")

    # ==================== MASKS ====================

    @property
    def clifford_bits(self) -> int:
        return (1 << self.n) - 1

    @property
    def base_bits(self) -> int:
        return ((1 << self.q_bar) - 1) << self.n

    @property
    def aux_bits(self) -> int:
        return ((1 << len(self.aux)) - 1) << (self.n + self.q_bar)

    @property
    def form_bits(self) -> int:
        return self.base_bits | self.aux_bits

    @property
    def generator_count(self) -> int:
        return self.n + self.q_bar + len(self.aux)

    def clifford_bit(self, i: int) -> int:
        if not 1 <= i <= self.n:
            raise ValueError(f"Clifford index {i} outside 1..{self.n}")
        return 1 << (i - 1)

    def base_bit(self, alpha: int) -> int:
        if not 1 <= alpha <= self.q_bar:
            raise ValueError(f"base index {alpha} outside 1..{self.q_bar}")
        return 1 << (self.n + alpha - 1)

    def aux_bit(self, name: str) -> int:
        if name not in self.aux:
            raise ValueError(f"unknown auxiliary generator {name!r}")
        return 1 << (self.n + self.q_bar + self.aux.index(name))

    def with_mode(self, mode: str) -> "AlgebraContext":
        return AlgebraContext(self.n, self.q_bar, self.aux, mode)

    # ==================== CONSTRUCTORS ====================

    def scalar(self, value, exterior: bool = False) -> "GradedElement":
        return GradedElement(self, {0: value}, exterior)

    def zero(self, exterior: bool = False) -> "GradedElement":
        return GradedElement(self, {}, exterior)

    def one(self, exterior: bool = False) -> "GradedElement":
        return self.scalar(1, exterior)

    def clifford(self, i: int) -> "GradedElement":
        """c(e_i)."""
        return GradedElement(self, {self.clifford_bit(i): 1})

    def fiber_form(self, i: int) -> "GradedElement":
        """The exterior generator e^i (symbol-map image of c(e_i))."""
        return GradedElement(self, {self.clifford_bit(i): 1}, exterior=True)

    def base(self, alpha: int, exterior: bool = False) -> "GradedElement":
        """dy_alpha."""
        return GradedElement(self, {self.base_bit(alpha): 1}, exterior)

    def aux_generator(self, name: str, exterior: bool = False) -> "GradedElement":
        return GradedElement(self, {self.aux_bit(name): 1}, exterior)

    def monomial(self, clifford: Iterable[int] = (), base: Iterable[int] = (),
                 aux: Iterable[str] = (), coeff=1, exterior: bool = False) -> "GradedElement":
        """Canonical (ascending) basis monomial with the given generator sets."""
        bits = 0
        for i in clifford:
            bits |= self.clifford_bit(i)
        for alpha in base:
            bits |= self.base_bit(alpha)
        for name in aux:
            bits |= self.aux_bit(name)
        return GradedElement(self, {bits: coeff}, exterior)

    def basis(self, clifford_only: bool = True) -> List[int]:
        """All canonical masks (Clifford part only by default)."""
        top = self.clifford_bits if clifford_only else (1 << self.generator_count) - 1
        return list(range(top + 1))


@dataclass(frozen=True)
class BasisMask:
    """Readable view of a monomial mask."""
    clifford_set: Tuple[int, ...]
    base_set: Tuple[int, ...]
    aux_set: Tuple[str, ...]

    @classmethod
    def from_bits(cls, bits: int, ctx: AlgebraContext) -> "BasisMask":
        clifford = tuple(i + 1 for i in range(ctx.n) if bits >> i & 1)
        base = tuple(a + 1 for a in range(ctx.q_bar) if bits >> (ctx.n + a) & 1)
        aux = tuple(name for k, name in enumerate(ctx.aux) if bits >> (ctx.n + ctx.q_bar + k) & 1)
        return cls(clifford, base, aux)

    def to_bits(self, ctx: AlgebraContext) -> int:
        return ctx.monomial(self.clifford_set, self.base_set, self.aux_set).support()[0]

    def label(self, exterior: bool = False) -> str:
        if exterior:
            parts = ["e" + str(i) for i in self.clifford_set]
            sep = "^"
        else:
            parts = [f"c(e{i})" for i in self.clifford_set]
            sep = ""
        parts = [sep.join(parts)] if parts else []
        parts += ["dy" + str(a) for a in self.base_set]
        parts += list(self.aux_set)
        return "·".join(parts) if parts else "1"


class GradedElement:
    """Sparse element: mask -> coefficient, no stored zeros.

    ``exterior`` marks the symbol-map side, where the fiber generators are
    exterior forms e^i (squares vanish) instead of Clifford generators.
    Treated as immutable.
    """
    __slots__ = ("ctx", "terms", "exterior")

    def __init__(self, ctx: AlgebraContext, terms: Optional[Dict[int, object]] = None,
                 exterior: bool = False):
        clean: Dict[int, object] = {}
        for bits, coeff in (terms or {}).items():
            coeff = normalize_scalar(coeff, ctx.scalar_mode)
            if coeff != 0:
                clean[bits] = coeff
        self.ctx = ctx
        self.terms = clean
        self.exterior = exterior

    # ==================== INSPECTION ====================

    def support(self) -> List[int]:
        return sorted(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def has_fiber(self) -> bool:
        return any(bits & self.ctx.clifford_bits for bits in self.terms)

    def coefficient(self, bits: int = 0):
        return self.terms.get(bits, normalize_scalar(0, self.ctx.scalar_mode))

    def scalar_part(self):
        return self.coefficient(0)

    def parity(self) -> Optional[int]:
        """0 or 1 for homogeneous elements, None when mixed (zero counts as even)."""
        parities = {popcount(bits) & 1 for bits in self.terms}
        if len(parities) > 1:
            return None
        return parities.pop() if parities else 0

    def project(self, keep: Callable[[int], bool]) -> "GradedElement":
        return GradedElement(self.ctx, {b: c for b, c in self.terms.items() if keep(b)}, self.exterior)

    def grade(self, k: int, part: str = "total") -> "GradedElement":
        """Component of degree k in the fiber ('fiber'), base ('base') or all generators."""
        mask = {"total": -1, "fiber": self.ctx.clifford_bits,
                "base": self.ctx.base_bits, "form": self.ctx.form_bits}[part]
        return self.project(lambda bits: popcount(bits & mask) == k)

    def even_part(self) -> "GradedElement":
        return self.project(lambda bits: popcount(bits) % 2 == 0)

    def odd_part(self) -> "GradedElement":
        return self.project(lambda bits: popcount(bits) % 2 == 1)

    def max_degree(self) -> int:
        return max((popcount(b) for b in self.terms), default=0)

    # ==================== ARITHMETIC ====================

    def _coerce(self, other) -> "GradedElement":
        if isinstance(other, GradedElement):
            return other
        return GradedElement(self.ctx, {0: other}, self.exterior)

    def _flag(self, other: "GradedElement") -> bool:
        if self.ctx != other.ctx:
            raise ContextMismatchError(f"{self.ctx} vs {other.ctx}")
        if self.exterior != other.exterior and self.has_fiber() and other.has_fiber():
            raise ContextMismatchError("cannot combine Clifford and exterior fiber parts; apply symbol_map/quantize first")
        return self.exterior if self.has_fiber() else other.exterior

    def __add__(self, other) -> "GradedElement":
        other = self._coerce(other)
        flag = self._flag(other)
        out = dict(self.terms)
        for bits, coeff in other.terms.items():
            out[bits] = out.get(bits, 0) + coeff
        return GradedElement(self.ctx, out, flag)

    __radd__ = __add__

    def __neg__(self) -> "GradedElement":
        return GradedElement(self.ctx, {b: -c for b, c in self.terms.items()}, self.exterior)

    def __sub__(self, other) -> "GradedElement":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "GradedElement":
        return self._coerce(other) - self

    def __mul__(self, other) -> "GradedElement":
        if isinstance(other, GradedElement):
            return mul(self, other)
        return self.scale(other)

    def __rmul__(self, other) -> "GradedElement":
        if isinstance(other, GradedElement):
            return mul(other, self)
        return self.scale(other)

    def scale(self, factor) -> "GradedElement":
        factor = normalize_scalar(factor, self.ctx.scalar_mode)
        return GradedElement(self.ctx, {b: factor * c for b, c in self.terms.items()}, self.exterior)

    def __pow__(self, power: int) -> "GradedElement":
        if power < 0:
            raise ValueError("negative powers are not defined in the graded algebra")
        result = GradedElement(self.ctx, {0: 1}, self.exterior)
        for _ in range(power):
            result = result * self
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, GradedElement):
            other = self._coerce(other)
        if self.ctx != other.ctx:
            return False
        if self.exterior != other.exterior and (self.has_fiber() or other.has_fiber()):
            return False
        return self.terms == other.terms

    __hash__ = None

    # ==================== CONVERSIONS ====================

    def map_coefficients(self, f: Callable) -> "GradedElement":
        return GradedElement(self.ctx, {b: f(c) for b, c in self.terms.items()}, self.exterior)

    def to_float(self) -> "GradedElement":
        ctx = self.ctx.with_mode(FLOAT)
        return GradedElement(ctx, {b: complex(c) for b, c in self.terms.items()}, self.exterior)

    def chop(self, tol: float = 1e-13) -> "GradedElement":
        """Drop coefficients below tol (float mode)."""
        return GradedElement(self.ctx, {b: c for b, c in self.terms.items() if abs(complex(c)) > tol},
                             self.exterior)

    def max_abs_difference(self, other: "GradedElement") -> float:
        keys = set(self.terms) | set(other.terms)
        return max((abs(complex(self.coefficient(k)) - complex(other.coefficient(k))) for k in keys),
                   default=0.0)

    def to_dict(self) -> Dict[str, object]:
        return {BasisMask.from_bits(b, self.ctx).label(self.exterior): format_scalar(c)
                for b, c in sorted(self.terms.items())}

    def dump(self) -> str:
        """Debug dump, one `mask → coefficient` line per term in canonical order."""
        lines = []
        for bits in self.support():
            label = BasisMask.from_bits(bits, self.ctx).label(self.exterior)
            lines.append(f"{label} → {self.terms[bits]}")
        return "\n".join(lines) if lines else "0"

    def __repr__(self) -> str:
        body = " + ".join(f"({c})·{BasisMask.from_bits(b, self.ctx).label(self.exterior)}"
                          for b, c in sorted(self.terms.items()))
        return f"GradedElement({body or '0'})"


# ==================== PRODUCT ====================

def mul(a: GradedElement, b: GradedElement, ctx: Optional[AlgebraContext] = None) -> GradedElement:
    """Graded product: Clifford squares give -1, form/aux and exterior squares give 0."""
    ctx = ctx or a.ctx
    if a.ctx != ctx or b.ctx != ctx:
        raise ContextMismatchError(f"operands over {a.ctx} and {b.ctx}, expected {ctx}")
    exterior = a._flag(b)
    null = ctx.form_bits | (ctx.clifford_bits if exterior else 0)
    out: Dict[int, object] = {}
    for ba, ca in a.terms.items():
        for bb, cb in b.terms.items():
            common = ba & bb
            if common & null:
                continue
            sign = reorder_sign(ba, bb)
            if popcount(common) & 1:
                sign = -sign
            key = ba ^ bb
            out[key] = out.get(key, 0) + sign * ca * cb
    return GradedElement(ctx, out, exterior)


def supercommutator(a: GradedElement, b: GradedElement) -> GradedElement:
    """[a, b] = ab - (-1)^{|a||b|} ba, extended bilinearly over parity parts."""
    result = a.ctx.zero(a.exterior)
    for pa, part_a in ((0, a.even_part()), (1, a.odd_part())):
        for pb, part_b in ((0, b.even_part()), (1, b.odd_part())):
            if part_a.is_zero() or part_b.is_zero():
                continue
            sign = -1 if pa * pb else 1
            result = result + mul(part_a, part_b) - mul(part_b, part_a).scale(sign)
    return result


# ==================== SYMBOL MAP ====================

def symbol_map(a: GradedElement) -> GradedElement:
    """σ: c(e^{i1})···c(e^{ik}) (ascending) ↦ e^{i1}∧···∧e^{ik}; forms pass through."""
    return GradedElement(a.ctx, a.terms, exterior=True)


def quantize(a: GradedElement) -> GradedElement:
    """c = σ^{-1}."""
    return GradedElement(a.ctx, a.terms, exterior=False)


# ==================== TRACES ====================

def _require_clifford(a: GradedElement):
    if a.exterior and a.has_fiber():
        raise ValueError("trace expects a Clifford element; quantize the form first")


def supertrace(a: GradedElement, ctx: Optional[AlgebraContext] = None) -> GradedElement:
    """Str over the spinor factor; only the top Clifford monomial survives, with (-2i)^{n/2}."""
    ctx = ctx or a.ctx
    if ctx.n % 2:
        raise ParityError(f"supertrace needs even n (got {ctx.n}); use trace_odd")
    _require_clifford(a)
    top = ctx.clifford_bits
    factor = constant((-2 * sympy.I) ** (ctx.n // 2), ctx.scalar_mode)
    out: Dict[int, object] = {}
    for bits, coeff in a.terms.items():
        if bits & top == top:
            form = bits & ~top
            out[form] = out.get(form, 0) + factor * coeff
    return GradedElement(ctx, out)


def trace_odd(a: GradedElement, ctx: Optional[AlgebraContext] = None) -> GradedElement:
    """Tr over the spinor factor for odd n: 2^{[n/2]} on scalars, (-i)^{[n/2]+1}2^{[n/2]} on the top."""
    ctx = ctx or a.ctx
    if ctx.n % 2 == 0:
        raise ParityError(f"trace_odd needs odd n (got {ctx.n}); use supertrace")
    _require_clifford(a)
    top = ctx.clifford_bits
    half = ctx.n // 2
    unit = constant(2 ** half, ctx.scalar_mode)
    top_value = constant((-sympy.I) ** (half + 1) * 2 ** half, ctx.scalar_mode)
    out: Dict[int, object] = {}
    for bits, coeff in a.terms.items():
        fiber = bits & top
        form = bits & ~top
        if fiber == 0:
            out[form] = out.get(form, 0) + unit * coeff
        elif fiber == top:
            # c_top·ω = (-1)^{|ω|} ω·c_top
            sign = -1 if popcount(form) & 1 else 1
            out[form] = out.get(form, 0) + sign * top_value * coeff
    return GradedElement(ctx, out)


def berezin(a: GradedElement, fixed_dim: int, mode: str = FULL) -> GradedElement:
    """Coefficient of e^1∧…∧e^a, returned as a base/aux form.

    ``star_zero`` first restricts to the Λ^{(*,0)} component (no normal
    directions e^{a+1..n}); on canonical monomials both modes agree.
    """
    ctx = a.ctx
    if not 0 <= fixed_dim <= ctx.n:
        raise BerezinRangeError(f"fixed dimension {fixed_dim} outside 0..{ctx.n}")
    if mode not in (FULL, STAR_ZERO):
        raise ValueError(f"unknown Berezin mode {mode!r}")
    if a.has_fiber() and not a.exterior:
        raise ValueError("Berezin integral expects exterior forms; apply symbol_map first")
    target = (1 << fixed_dim) - 1
    normal = ctx.clifford_bits & ~target
    out: Dict[int, object] = {}
    for bits, coeff in a.terms.items():
        fiber = bits & ctx.clifford_bits
        if mode == STAR_ZERO and fiber & normal:
            continue
        if fiber == target:
            form = bits & ~ctx.clifford_bits
            out[form] = out.get(form, 0) + coeff
    return GradedElement(ctx, out, exterior=True)


# ==================== SPINOR LIFT ====================

def normal_det_sqrt(angles: Sequence, mode: str = EXACT):
    """det^{1/2}(1 - φ^N) on the branch continuous along the lifted rotation path: ∏ 2 sin(θ_j/2)."""
    if mode == FLOAT:
        return reduce(lambda acc, th: acc * 2 * math.sin(float(th) / 2), angles, 1.0) + 0j
    value = reduce(lambda acc, th: acc * 2 * sympy.sin(sympy.sympify(th) / 2), angles, sympy.Integer(1))
    return normalize_scalar(value, EXACT)


@dataclass(frozen=True)
class SpinorLift:
    """Linearized lift of a normal rotation at a fixed point."""
    element: GradedElement
    planes: Tuple[Tuple[int, int], ...]
    angles: Tuple
    lift_sign: int

    def metadata(self) -> Dict:
        return {
            "planes": [list(p) for p in self.planes],
            "angles": [str(a) for a in self.angles],
            "lift_sign": self.lift_sign,
        }


def spinor_lift(ctx: AlgebraContext, blocks: Sequence[Tuple[int, int, object]]) -> SpinorLift:
    """∏_j exp((θ_j/2) c(e_p)c(e_q)) for rotation blocks (p, q, θ) rotating e_p toward e_q.

    Planes must be disjoint and listed so that p1 < q1 < p2 < q2 < ...; a
    plane given as (q, p) is flipped to (p, q) with angle -θ.
    """
    mode = ctx.scalar_mode
    planes: List[Tuple[int, int]] = []
    angles: List = []
    for p, q, theta in blocks:
        if p > q:
            p, q, theta = q, p, -theta
        planes.append((p, q))
        angles.append(theta)
    flat = [i for plane in planes for i in plane]
    if flat != sorted(flat) or len(set(flat)) != len(flat):
        raise ValueError(f"rotation planes must be disjoint and ascending, got {planes}")

    element = ctx.one()
    for (p, q), theta in zip(planes, angles):
        if mode == FLOAT:
            c, s = math.cos(float(theta) / 2), math.sin(float(theta) / 2)
        else:
            half = sympy.sympify(theta) / 2
            c, s = sympy.cos(half), sympy.sin(half)
        factor = GradedElement(ctx, {0: c, ctx.clifford_bit(p) | ctx.clifford_bit(q): s})
        element = element * factor

    det_half = normal_det_sqrt(angles, mode)
    lift_sign = 1 if complex(det_half).real > 0 else -1
    logger.debug("[SpinorLift] planes=%s angles=%s sign=%d", planes, angles, lift_sign)
    return SpinorLift(element, tuple(planes), tuple(angles), lift_sign)


@dataclass
class EquivariantTrace:
    """Str[φ̃A] split into the leading Berezin term and the lower normal-degree corrections."""
    leading: GradedElement
    corrections: GradedElement
    prefactor: object

    @property
    def total(self) -> GradedElement:
        return self.leading + self.corrections


def _check_normal_cover(lift: SpinorLift, ctx: AlgebraContext, a: int):
    covered = sorted(i for plane in lift.planes for i in plane)
    if covered != list(range(a + 1, ctx.n + 1)):
        raise DegenerateActionError(
            f"rotation planes {lift.planes} must cover the normal directions {a + 1}..{ctx.n}")
    for theta in lift.angles:
        ratio = complex(sympy.N(sympy.sympify(theta) / (2 * sympy.pi))).real
        if abs(ratio - round(ratio)) < 1e-12:
            raise DegenerateActionError(f"rotation angle {theta} fixes its normal plane")


def _form_sign(forms: GradedElement) -> GradedElement:
    """Move c_top past each form: c_top·ω = (-1)^{n|ω|} ω·c_top."""
    if forms.ctx.n % 2 == 0:
        return forms
    return GradedElement(forms.ctx, {b: (-c if popcount(b) & 1 else c) for b, c in forms.terms.items()},
                         forms.exterior)


def _fixed_point_expansion(lift: SpinorLift, A: GradedElement, a: int, prefactor) -> EquivariantTrace:
    ctx = A.ctx
    _require_clifford(A)
    _check_normal_cover(lift, ctx, a)
    b = ctx.n - a
    tangential = (1 << a) - 1
    normal = ctx.clifford_bits & ~tangential
    sigma_a = symbol_map(A)
    sigma_phi = symbol_map(lift.element)

    det_half = normal_det_sqrt(lift.angles, ctx.scalar_mode)
    scale = constant(sympy.Rational(1, 2 ** (b // 2)), ctx.scalar_mode) * det_half
    leading = _form_sign(berezin(sigma_a, a, STAR_ZERO)).scale(prefactor * scale)

    corrections = ctx.zero(exterior=True)
    for b_prime in range(b):
        phi_part = sigma_phi.project(lambda bits: popcount(bits & normal) == b_prime)
        a_part = sigma_a.project(lambda bits: (bits & tangential) == tangential
                                 and popcount(bits & normal) == b - b_prime)
        if phi_part.is_zero() or a_part.is_zero():
            continue
        corrections = corrections + _form_sign(berezin(mul(phi_part, a_part), ctx.n)).scale(prefactor)
    return EquivariantTrace(leading, corrections, prefactor)


def equivariant_supertrace(lift: SpinorLift, A: GradedElement, a: int) -> EquivariantTrace:
    """Str[φ̃A] at a fixed point with a tangential and n - a normal directions.

    Leading term (-2i)^{n/2} 2^{-b/2} det^{1/2}(1-φ^N) |σ(A)|^{(a,0)} plus
    (-2i)^{n/2} Σ_{b'<b} |σ(φ̃)^{(0,b')} σ(A)^{(a,b-b')}|^{(n)}.
    """
    ctx = A.ctx
    if ctx.n % 2:
        raise ParityError("equivariant_supertrace needs even n; use equivariant_trace_odd")
    prefactor = constant((-2 * sympy.I) ** (ctx.n // 2), ctx.scalar_mode)
    return _fixed_point_expansion(lift, A, a, prefactor)


def equivariant_trace_odd(lift: SpinorLift, A: GradedElement, a: int) -> EquivariantTrace:
    """Odd-dimensional analog for odd Clifford A, prefactor (-i)^{(n+1)/2} 2^{(n-1)/2}."""
    ctx = A.ctx
    if ctx.n % 2 == 0:
        raise ParityError("equivariant_trace_odd needs odd n")
    if any(popcount(bits & ctx.clifford_bits) % 2 == 0 for bits in A.terms):
        raise ValueError("equivariant_trace_odd expects an odd Clifford element")
    prefactor = constant((-sympy.I) ** ((ctx.n + 1) // 2) * 2 ** ((ctx.n - 1) // 2), ctx.scalar_mode)
    return _fixed_point_expansion(lift, A, a, prefactor)


# ==================== MATRIX ORACLE ====================

_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)
_ID2 = np.eye(2, dtype=complex)


def _kron_all(factors: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, factors, np.eye(1, dtype=complex))


def exterior_multiplication(count: int, g: int) -> np.ndarray:
    """Matrix of left exterior multiplication by generator g on Λ(R^count)."""
    dim = 1 << count
    mat = np.zeros((dim, dim), dtype=complex)
    for s in range(dim):
        if s >> g & 1:
            continue
        sign = -1 if popcount(s & ((1 << g) - 1)) & 1 else 1
        mat[s | 1 << g, s] = sign
    return mat


class SpinorRep:
    """Iterated 2×2 (Pauli) realization of Cl(n) on the spinor space."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("n must be positive")
        self.n = n
        m = n // 2
        self.dim = 2 ** m
        gammas: List[np.ndarray] = []
        for k in range(m):
            for pauli in (_SX, _SY):
                gammas.append(1j * _kron_all([_SZ] * k + [pauli] + [_ID2] * (m - k - 1)))
        omega = reduce(np.matmul, gammas, np.eye(self.dim, dtype=complex))
        if n % 2:
            gammas.append((-1) ** m * (-1j) ** (m + 1) * omega)
            self.chirality = None
        else:
            self.chirality = (1j) ** m * omega
        self.matrices = gammas

    def clifford_matrix(self, bits: int) -> np.ndarray:
        out = np.eye(self.dim, dtype=complex)
        for i in range(self.n):
            if bits >> i & 1:
                out = out @ self.matrices[i]
        return out

    def matrix(self, element: GradedElement) -> np.ndarray:
        """ρ(element); form generators act as chirality ⊗ exterior multiplication (even n)."""
        ctx = element.ctx
        if ctx.n != self.n:
            raise ContextMismatchError(f"representation for n={self.n}, element has n={ctx.n}")
        _require_clifford(element)
        forms = ctx.q_bar + len(ctx.aux)
        if forms and self.chirality is None:
            raise ParityError("form-extended representation needs a chirality (even n)")
        lam_dim = 1 << forms
        eps = [exterior_multiplication(forms, g) for g in range(forms)]
        out = np.zeros((self.dim * lam_dim, self.dim * lam_dim), dtype=complex)
        for bits, coeff in element.terms.items():
            mat = np.kron(self.clifford_matrix(bits & ctx.clifford_bits), np.eye(lam_dim))
            form_bits = bits >> ctx.n
            for g in range(forms):
                if form_bits >> g & 1:
                    mat = mat @ np.kron(self.chirality, eps[g])
            out += complex(coeff) * mat
        return out

    tensor_matrix = matrix

    def matrix_supertrace(self, mat: np.ndarray) -> complex:
        if self.chirality is None:
            raise ParityError("supertrace needs even n")
        return complex(np.trace(self.chirality @ mat))

    def matrix_trace(self, mat: np.ndarray) -> complex:
        return complex(np.trace(mat))
