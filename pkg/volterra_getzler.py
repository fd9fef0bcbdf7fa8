"""
Volterra Symbol Calculus with Getzler Grading

Heat-calculus symbols x^α ξ^β (iτ+|ξ|²)^{-m} with form-valued coefficients,
their composition, the parametrix of ∂_t + P, diagonal heat coefficients, and
the Getzler order / model operator of polynomial differential operators.

Symbols are kept canonical: numerator powers of τ are rewritten through
iτ = (iτ+|ξ|²) - |ξ|², so every term is x^α ξ^β R^{-m} with R = iτ+|ξ|² and
m an integer (m ≤ 0 means a polynomial in R). Homogeneity is |β| - 2m.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import sympy

from graded_algebra import AlgebraContext, BasisMask, GradedElement, popcount, quantize, symbol_map

logger = logging.getLogger(__name__)

MultiIndex = Tuple[int, ...]
SymbolKey = Tuple[MultiIndex, MultiIndex, int]      # (x exponent, ξ exponent, resolvent power m)
OperatorKey = Tuple[MultiIndex, MultiIndex, int]    # (x exponent, ∂_x multi-index, ∂_t power)


class NonTerminatingError(ValueError):
    """Composition needs polynomial x-dependence."""


class NonParabolicError(ValueError):
    """Principal part of ∂_t + P is not iτ + |ξ|²."""


class DistributionalDiagonalError(ValueError):
    """Polynomial (m ≤ 0) symbol term has no pointwise kernel diagonal."""


# ==================== MULTI-INDICES ====================

def _zero(n: int) -> MultiIndex:
    return (0,) * n


def _unit(n: int, j: int) -> MultiIndex:
    return tuple(1 if i == j else 0 for i in range(n))


def _add(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


def _sub(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x - y for x, y in zip(a, b))


def _below(a: MultiIndex) -> Iterable[MultiIndex]:
    return itertools.product(*(range(k + 1) for k in a))


def _factorial(a: MultiIndex) -> int:
    return math.prod(math.factorial(k) for k in a)


def _falling(g: MultiIndex, a: MultiIndex) -> int:
    """g!/(g-a)! componentwise."""
    return math.prod(math.factorial(gj) // math.factorial(gj - aj) for gj, aj in zip(g, a))


@lru_cache(maxsize=None)
def _xi_derivative(beta: MultiIndex, m: int, alpha: MultiIndex) -> Tuple[Tuple[MultiIndex, int, int], ...]:
    """∂_ξ^α (ξ^β R^{-m}) as (β', m', integer factor) triples."""
    current: Dict[Tuple[MultiIndex, int], int] = {(beta, m): 1}
    n = len(beta)
    for j in range(n):
        for _ in range(alpha[j]):
            nxt: Dict[Tuple[MultiIndex, int], int] = {}
            for (b, mm), s in current.items():
                if b[j]:
                    key = (_sub(b, _unit(n, j)), mm)
                    nxt[key] = nxt.get(key, 0) + s * b[j]
                if mm:
                    key = (_add(b, _unit(n, j)), mm + 1)
                    nxt[key] = nxt.get(key, 0) - 2 * mm * s
            current = {k: v for k, v in nxt.items() if v}
    return tuple((b, mm, s) for (b, mm), s in current.items())


@lru_cache(maxsize=None)
def _xi_norm_power(p: int, n: int) -> Tuple[Tuple[MultiIndex, int], ...]:
    """|ξ|^{2p} = Σ multinomial(p; γ) ξ^{2γ}."""
    out = []
    for gamma in itertools.product(range(p + 1), repeat=n):
        if sum(gamma) == p:
            out.append((tuple(2 * g for g in gamma), math.factorial(p) // _factorial(gamma)))
    return tuple(out)


# ==================== SYMBOLS ====================

@dataclass(frozen=True)
class SymbolTerm:
    """coeff · x^α ξ^β τ^k (iτ+|ξ|²)^{-m}; canonical terms have k = 0."""
    coeff: GradedElement
    alpha: MultiIndex
    beta: MultiIndex
    m: int
    k: int = 0

    @property
    def homogeneity(self) -> int:
        return sum(self.beta) + 2 * self.k - 2 * self.m


class GradedSymbol:
    """Finite sum of canonical symbol terms keyed by (α, β, m)."""
    __slots__ = ("ctx", "n", "terms", "declared_order")

    def __init__(self, ctx: AlgebraContext, terms: Optional[Dict[SymbolKey, object]] = None,
                 declared_order: Optional[int] = None, n: Optional[int] = None):
        n = ctx.n if n is None else n
        clean: Dict[SymbolKey, GradedElement] = {}
        for (alpha, beta, m), coeff in (terms or {}).items():
            alpha, beta = tuple(alpha), tuple(beta)
            if len(alpha) != n or len(beta) != n or min(alpha + beta, default=0) < 0:
                raise ValueError(f"bad multi-indices {alpha}, {beta} for dimension {n}")
            if not isinstance(coeff, GradedElement):
                coeff = ctx.scalar(coeff)
            if not coeff.is_zero():
                clean[(alpha, beta, int(m))] = coeff
        self.ctx = ctx
        self.n = n
        self.terms = clean
        top = self.max_homogeneity()
        if declared_order is None:
            declared_order = top if top is not None else 0
        elif top is not None and top > declared_order:
            raise ValueError(f"term of homogeneity {top} exceeds declared order {declared_order}")
        self.declared_order = declared_order

    # ==================== CONSTRUCTORS ====================

    @classmethod
    def monomial(cls, ctx: AlgebraContext, alpha: Optional[MultiIndex] = None, beta: Optional[MultiIndex] = None,
                 m: int = 0, coeff=1, n: Optional[int] = None) -> "GradedSymbol":
        n = ctx.n if n is None else n
        return cls(ctx, {(alpha or _zero(n), beta or _zero(n), m): coeff}, n=n)

    @classmethod
    def resolvent(cls, ctx: AlgebraContext, m: int = 1, n: Optional[int] = None) -> "GradedSymbol":
        """(iτ+|ξ|²)^{-m}."""
        return cls.monomial(ctx, m=m, n=n)

    @classmethod
    def one(cls, ctx: AlgebraContext, n: Optional[int] = None) -> "GradedSymbol":
        return cls.monomial(ctx, n=n)

    @classmethod
    def from_expr(cls, ctx: AlgebraContext, expr, n: Optional[int] = None) -> "GradedSymbol":
        """Parse a sympy expression in x1.., xi1.., tau and res = (iτ+|ξ|²)^{-1}."""
        n = ctx.n if n is None else n
        xs, xis, tau, res = symbol_variables(n)
        norm = sum(v ** 2 for v in xis)
        expr = sympy.expand(sympy.sympify(expr).subs(tau, -sympy.I * (1 / res - norm)))
        terms: Dict[SymbolKey, object] = {}
        for monomial, coeff in expr.as_coefficients_dict().items():
            powers = monomial.as_powers_dict()
            alpha, beta, m = [0] * n, [0] * n, 0
            for base, exp in powers.items():
                if base == 1:
                    continue
                if base.is_number:
                    coeff = coeff * base ** exp
                    continue
                if not sympy.sympify(exp).is_Integer:
                    raise NonTerminatingError(f"non-integer power {base}**{exp}")
                if base in xs:
                    alpha[xs.index(base)] = int(exp)
                elif base in xis:
                    beta[xis.index(base)] = int(exp)
                elif base == res:
                    m = int(exp)
                else:
                    raise NonTerminatingError(f"symbol factor {base} is not a polynomial in x, ξ, τ, res")
            if min(alpha + beta) < 0:
                raise NonTerminatingError(f"negative power in {monomial}")
            key = (tuple(alpha), tuple(beta), m)
            terms[key] = terms.get(key, 0) + coeff
        return cls(ctx, {k: ctx.scalar(v) for k, v in terms.items()}, n=n)

    # ==================== INSPECTION ====================

    @staticmethod
    def homogeneity_of(key: SymbolKey) -> int:
        return sum(key[1]) - 2 * key[2]

    def max_homogeneity(self) -> Optional[int]:
        return max((self.homogeneity_of(k) for k in self.terms), default=None)

    def homogeneities(self) -> List[int]:
        return sorted({self.homogeneity_of(k) for k in self.terms}, reverse=True)

    def homogeneous_part(self, d: int) -> "GradedSymbol":
        return GradedSymbol(self.ctx, {k: c for k, c in self.terms.items() if self.homogeneity_of(k) == d},
                            declared_order=d, n=self.n)

    def truncate(self, min_homogeneity: int) -> "GradedSymbol":
        return GradedSymbol(self.ctx, {k: c for k, c in self.terms.items()
                                       if self.homogeneity_of(k) >= min_homogeneity},
                            declared_order=self.declared_order, n=self.n)

    def is_zero(self) -> bool:
        return not self.terms

    def term_list(self) -> List[SymbolTerm]:
        return [SymbolTerm(c, a, b, m) for (a, b, m), c in sorted(self.terms.items())]

    def map_coefficients(self, f) -> "GradedSymbol":
        return GradedSymbol(self.ctx, {k: f(c) for k, c in self.terms.items()}, n=self.n)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GradedSymbol):
            return NotImplemented
        keys = set(self.terms) | set(other.terms)
        zero = self.ctx.zero()
        return all(self.terms.get(k, zero) == other.terms.get(k, zero) for k in keys)

    __hash__ = None

    # ==================== ARITHMETIC ====================

    def __add__(self, other: "GradedSymbol") -> "GradedSymbol":
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out[k] + c if k in out else c
        return GradedSymbol(self.ctx, out, n=self.n,
                            declared_order=max(self.declared_order, other.declared_order))

    def __neg__(self) -> "GradedSymbol":
        return GradedSymbol(self.ctx, {k: -c for k, c in self.terms.items()},
                            declared_order=self.declared_order, n=self.n)

    def __sub__(self, other: "GradedSymbol") -> "GradedSymbol":
        return self + (-other)

    def scale(self, factor) -> "GradedSymbol":
        return GradedSymbol(self.ctx, {k: c.scale(factor) for k, c in self.terms.items()},
                            declared_order=self.declared_order, n=self.n)

    def left_multiply(self, coeff: GradedElement) -> "GradedSymbol":
        return GradedSymbol(self.ctx, {k: coeff * c for k, c in self.terms.items()},
                            declared_order=self.declared_order, n=self.n)

    # ==================== SERIALIZATION ====================

    def to_text(self) -> str:
        """One term per line: `coeff | x^α | ξ^β | τ^k | res^m`."""
        lines = []
        for term in self.term_list():
            coeff = " + ".join(f"({c})·{BasisMask.from_bits(b, self.ctx).label(term.coeff.exterior)}"
                               for b, c in sorted(term.coeff.terms.items()))
            lines.append(f"{coeff} | x^{term.alpha} | ξ^{term.beta} | τ^{term.k} | res^{term.m}")
        return "\n".join(lines) if lines else "0"

    def __repr__(self) -> str:
        return f"GradedSymbol(order={self.declared_order}, terms={len(self.terms)})"


def dump_symbol(q: GradedSymbol) -> str:
    return q.to_text()


def symbol_variables(n: int):
    """sympy variables (x, ξ, τ, res) used by GradedSymbol.from_expr."""
    xs = list(sympy.symbols(f"x1:{n + 1}"))
    xis = list(sympy.symbols(f"xi1:{n + 1}"))
    return xs, xis, sympy.Symbol("tau"), sympy.Symbol("res")


def compose(q1: GradedSymbol, q2: GradedSymbol, min_homogeneity: Optional[int] = None) -> GradedSymbol:
    """q1 ∘ q2 = Σ_α (1/α!) ∂_ξ^α q1 · D_x^α q2, exact because q2 is polynomial in x.

    Args:
        q1, q2: symbols over the same algebra and dimension
        min_homogeneity: drop output terms below this homogeneity

    Returns:
        Composite symbol with declared order = sum of the declared orders.
    """
    if q1.ctx != q2.ctx or q1.n != q2.n:
        raise ValueError("composition needs symbols over the same algebra and dimension")
    out: Dict[SymbolKey, GradedElement] = {}
    for (a1, b1, m1), c1 in q1.terms.items():
        for (a2, b2, m2), c2 in q2.terms.items():
            coeff = c1 * c2
            if coeff.is_zero():
                continue
            for alpha in _below(a2):
                order = sum(alpha)
                # D_x^α x^{a2} = (-i)^{|α|} a2!/(a2-α)! x^{a2-α}
                factor = (-sympy.I) ** order * sympy.Rational(_falling(a2, alpha), _factorial(alpha))
                x_exp = _add(a1, _sub(a2, alpha))
                for beta, m, s in _xi_derivative(b1, m1, alpha):
                    key = (x_exp, _add(beta, b2), m + m2)
                    if min_homogeneity is not None and GradedSymbol.homogeneity_of(key) < min_homogeneity:
                        continue
                    term = coeff.scale(factor * s)
                    out[key] = out[key] + term if key in out else term
    return GradedSymbol(q1.ctx, out, n=q1.n, declared_order=q1.declared_order + q2.declared_order)


# ==================== DIFFERENTIAL OPERATORS ====================

class DiffOp:
    """Finite sum of coeff · x^α ∂_x^β ∂_t^k (coefficients on the left)."""
    __slots__ = ("ctx", "n", "terms")

    def __init__(self, ctx: AlgebraContext, terms: Optional[Dict[OperatorKey, GradedElement]] = None,
                 n: Optional[int] = None):
        n = ctx.n if n is None else n
        clean: Dict[OperatorKey, GradedElement] = {}
        for (alpha, beta, k), coeff in (terms or {}).items():
            alpha, beta = tuple(alpha), tuple(beta)
            if len(alpha) != n or len(beta) != n or min(alpha + beta, default=0) < 0 or k < 0:
                raise ValueError(f"bad operator term {(alpha, beta, k)} for dimension {n}")
            if not isinstance(coeff, GradedElement):
                coeff = ctx.scalar(coeff)
            if not coeff.is_zero():
                clean[(alpha, beta, k)] = coeff
        self.ctx = ctx
        self.n = n
        self.terms = clean

    @classmethod
    def term(cls, ctx: AlgebraContext, alpha=None, beta=None, k: int = 0, coeff=1,
             n: Optional[int] = None) -> "DiffOp":
        n = ctx.n if n is None else n
        return cls(ctx, {(tuple(alpha or _zero(n)), tuple(beta or _zero(n)), k): coeff}, n=n)

    @classmethod
    def identity(cls, ctx: AlgebraContext, n: Optional[int] = None) -> "DiffOp":
        return cls.term(ctx, n=n)

    @classmethod
    def multiplier(cls, ctx: AlgebraContext, coeff: GradedElement, n: Optional[int] = None) -> "DiffOp":
        return cls.term(ctx, coeff=coeff, n=n)

    @classmethod
    def coordinate(cls, ctx: AlgebraContext, i: int, n: Optional[int] = None) -> "DiffOp":
        """Multiplication by x_i (1-based)."""
        n = ctx.n if n is None else n
        return cls.term(ctx, alpha=_unit(n, i - 1), n=n)

    @classmethod
    def partial(cls, ctx: AlgebraContext, i: int, n: Optional[int] = None) -> "DiffOp":
        n = ctx.n if n is None else n
        return cls.term(ctx, beta=_unit(n, i - 1), n=n)

    @classmethod
    def dt(cls, ctx: AlgebraContext, n: Optional[int] = None) -> "DiffOp":
        return cls.term(ctx, k=1, n=n)

    @classmethod
    def laplacian(cls, ctx: AlgebraContext, n: Optional[int] = None) -> "DiffOp":
        """-Δ = -Σ ∂_i²."""
        n = ctx.n if n is None else n
        return cls(ctx, {(_zero(n), tuple(2 * u for u in _unit(n, j)), 0): -1 for j in range(n)}, n=n)

    @classmethod
    def polynomial(cls, ctx: AlgebraContext, coefficients: Dict[MultiIndex, object],
                   n: Optional[int] = None) -> "DiffOp":
        """Multiplication by Σ c_α x^α."""
        n = ctx.n if n is None else n
        return cls(ctx, {(tuple(a), _zero(n), 0): c for a, c in coefficients.items()}, n=n)

    def is_zero(self) -> bool:
        return not self.terms

    def __add__(self, other: "DiffOp") -> "DiffOp":
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out[k] + c if k in out else c
        return DiffOp(self.ctx, out, n=self.n)

    def __neg__(self) -> "DiffOp":
        return DiffOp(self.ctx, {k: -c for k, c in self.terms.items()}, n=self.n)

    def __sub__(self, other: "DiffOp") -> "DiffOp":
        return self + (-other)

    def scale(self, factor) -> "DiffOp":
        return DiffOp(self.ctx, {k: c.scale(factor) for k, c in self.terms.items()}, n=self.n)

    def __mul__(self, other):
        if isinstance(other, DiffOp):
            return self.compose(other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def compose(self, other: "DiffOp") -> "DiffOp":
        """Leibniz rule: ∂^β (x^{α'} ·) = Σ_γ C(β,γ) (∂^γ x^{α'}) ∂^{β-γ}."""
        out: Dict[OperatorKey, GradedElement] = {}
        for (a1, b1, k1), c1 in self.terms.items():
            for (a2, b2, k2), c2 in other.terms.items():
                coeff = c1 * c2
                if coeff.is_zero():
                    continue
                for gamma in _below(b1):
                    if any(g > a for g, a in zip(gamma, a2)):
                        continue
                    binom = _falling(b1, gamma) // _factorial(gamma)
                    factor = binom * _falling(a2, gamma)
                    key = (_add(a1, _sub(a2, gamma)), _add(_sub(b1, gamma), b2), k1 + k2)
                    term = coeff.scale(factor)
                    out[key] = out[key] + term if key in out else term
        return DiffOp(self.ctx, out, n=self.n)

    def map_coefficients(self, f) -> "DiffOp":
        return DiffOp(self.ctx, {k: f(c) for k, c in self.terms.items()}, n=self.n)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiffOp):
            return NotImplemented
        keys = set(self.terms) | set(other.terms)
        zero = self.ctx.zero()
        return all(self.terms.get(k, zero) == other.terms.get(k, zero) for k in keys)

    __hash__ = None

    def __repr__(self) -> str:
        return f"DiffOp(terms={len(self.terms)})"


def symbol_of(P: DiffOp) -> GradedSymbol:
    """x^α ∂^β ∂_t^k ↦ x^α (iξ)^β (iτ)^k, with iτ = R - |ξ|² expanded."""
    n = P.n
    out: Dict[SymbolKey, GradedElement] = {}
    for (alpha, beta, k), coeff in P.terms.items():
        base = coeff.scale(sympy.I ** sum(beta))
        for j in range(k + 1):
            # (iτ)^k = Σ_j C(k,j) R^j (-|ξ|²)^{k-j}
            scalar = math.comb(k, j) * (-1) ** (k - j)
            for gamma, mult in _xi_norm_power(k - j, n):
                key = (alpha, _add(beta, gamma), -j)
                term = base.scale(scalar * mult)
                out[key] = out[key] + term if key in out else term
    return GradedSymbol(P.ctx, out, n=n)


# ==================== PARAMETRIX ====================

def _split_form_degree(L: GradedSymbol) -> Tuple[GradedSymbol, GradedSymbol]:
    """(form-degree-zero part, nilpotent part carrying base/aux generators)."""
    form = L.ctx.form_bits
    free = L.map_coefficients(lambda c: c.project(lambda bits: not bits & form))
    nil = L.map_coefficients(lambda c: c.project(lambda bits: bool(bits & form)))
    return free, nil


def family_correction(Q0: GradedSymbol, W: GradedSymbol, min_homogeneity: Optional[int] = None,
                      max_k: Optional[int] = None) -> GradedSymbol:
    """Q̃ = Q0 + Σ_{k≥1} (-1)^k Q0 (W Q0)^k; terminates by nilpotency of W."""
    result = Q0
    term = Q0
    limit = max_k if max_k is not None else Q0.ctx.q_bar + len(Q0.ctx.aux)
    for k in range(1, limit + 1):
        term = compose(compose(term, W, min_homogeneity), Q0, min_homogeneity).scale(-1)
        if term.is_zero():
            break
        result = result + term
    return GradedSymbol(result.ctx, result.terms, declared_order=Q0.declared_order, n=Q0.n)


def parametrix(P: DiffOp, depth: int) -> GradedSymbol:
    """Symbol Q of (∂_t + P)^{-1} with σ(∂_t + P) ∘ Q = 1 + O(homogeneity < -depth).

    The form-free part is inverted by the Neumann series in homogeneity; the
    part carrying base/aux generators enters through the finite family series.
    """
    L = symbol_of(DiffOp.dt(P.ctx, P.n) + P)
    top = L.max_homogeneity()
    free, nil = _split_form_degree(L)
    principal = GradedSymbol.monomial(P.ctx, m=-1, n=P.n)
    if top is None or top > 2 or free.homogeneous_part(2) != principal:
        raise NonParabolicError("principal symbol of ∂_t + P must be exactly iτ + |ξ|²")
    if nil.max_homogeneity() is not None and nil.max_homogeneity() > 2:
        raise NonParabolicError("nilpotent perturbation exceeds order 2")

    cutoff = -2 - depth
    q0 = GradedSymbol.resolvent(P.ctx, 1, n=P.n)
    remainder = free - principal
    error = compose(remainder, q0, cutoff).scale(-1)

    result = q0
    term = q0
    for k in range(1, depth + 1):
        term = compose(term, error, cutoff)
        if term.is_zero():
            break
        result = result + term
    result = GradedSymbol(P.ctx, result.terms, declared_order=-2, n=P.n)
    if not nil.is_zero():
        result = family_correction(result, nil, cutoff)
    logger.debug("[Parametrix] depth %d: %d terms", depth, len(result.terms))
    return result.truncate(cutoff)


def parametrix_residual(P: DiffOp, Q: GradedSymbol) -> GradedSymbol:
    """σ(∂_t + P) ∘ Q - 1."""
    L = symbol_of(DiffOp.dt(P.ctx, P.n) + P)
    return compose(L, Q) - GradedSymbol.one(P.ctx, P.n)


# ==================== KERNEL DIAGONAL ====================

def _gaussian_moment(beta: MultiIndex) -> Optional[sympy.Expr]:
    """∏ (2k_j-1)!!/2^{k_j} for β = 2k, None for odd β."""
    if any(b % 2 for b in beta):
        return None
    return sympy.Mul(*[sympy.Rational(sympy.factorial2(b - 1), 2 ** (b // 2)) for b in beta])


def kernel_diagonal(q: GradedSymbol, n: Optional[int] = None, point: Optional[Sequence] = None, t=1) -> GradedElement:
    """q̌(x, 0, t): inverse transform of the symbol at the diagonal.

    R^{-m} transforms to t^{m-1}/(m-1)! e^{-t|ξ|²}; the ξ-integral is a
    Gaussian moment, giving (4π)^{-n/2} ∏(2k_j-1)!!/2^{k_j} t^{m-1-n/2-|β|/2}/(m-1)!.
    """
    n = q.n if n is None else n
    point = list(point) if point is not None else [0] * q.n
    total = q.ctx.zero()
    for (alpha, beta, m), coeff in q.terms.items():
        if m <= 0:
            raise DistributionalDiagonalError(f"term with resolvent power {m} has a distributional diagonal")
        moment = _gaussian_moment(beta)
        if moment is None:
            continue
        x_value = sympy.Mul(*[sympy.sympify(p) ** a for p, a in zip(point, alpha)])
        if x_value == 0:
            continue
        exponent = m - 1 - sympy.Rational(n, 2) - sympy.Rational(sum(beta), 2)
        value = ((4 * sympy.pi) ** sympy.Rational(-n, 2) * moment * sympy.sympify(t) ** exponent
                 / sympy.factorial(m - 1) * x_value)
        total = total + coeff.scale(value)
    return total


def heat_coefficients(P: DiffOp, l_max: int, point: Optional[Sequence] = None) -> List[GradedElement]:
    """a_0..a_{l_max} of k_t(x,x) ~ t^{-n/2} Σ t^l a_l(x), from the homogeneity -2-2l pieces."""
    Q = parametrix(P, 2 * l_max)
    return [kernel_diagonal(Q.homogeneous_part(-2 - 2 * l), point=point) for l in range(l_max + 1)]


# ==================== GETZLER GRADING ====================

@dataclass(frozen=True)
class GetzlerDegree:
    """Degree assignment: ∂_j, c(dx_j), c(dy_j) count 1, ∂_t counts 2, x^j counts -1."""
    partial: int = 1
    dt: int = 2
    clifford: int = 1
    base: int = 1
    aux: int = 0
    x: int = -1

    def of_mask(self, ctx: AlgebraContext, bits: int) -> int:
        return (self.clifford * popcount(bits & ctx.clifford_bits)
                + self.base * popcount(bits & ctx.base_bits)
                + self.aux * popcount(bits & ctx.aux_bits))

    def of_operator(self, alpha: MultiIndex, beta: MultiIndex, k: int) -> int:
        return self.partial * sum(beta) + self.dt * k + self.x * sum(alpha)

    def of_symbol(self, alpha: MultiIndex, beta: MultiIndex, m: int) -> int:
        # ξ_j ~ ∂_j, (iτ+|ξ|²) ~ ∂_t
        return self.partial * sum(beta) - self.dt * m + self.x * sum(alpha)


DEFAULT_DEGREE = GetzlerDegree()


def _graded_pieces(x, degree: GetzlerDegree):
    """Yield (getzler degree, key, mask, coefficient) for every monomial of a DiffOp or GradedSymbol."""
    for key, coeff in x.terms.items():
        base = degree.of_operator(*key) if isinstance(x, DiffOp) else degree.of_symbol(*key)
        for bits, c in coeff.terms.items():
            yield base + degree.of_mask(x.ctx, bits), key, bits, c


def getzler_order(x, degree: GetzlerDegree = DEFAULT_DEGREE) -> Optional[int]:
    """Highest Getzler degree among the monomials of x (None for zero)."""
    return max((d for d, _, _, _ in _graded_pieces(x, degree)), default=None)


def getzler_part(x: DiffOp, order: int, degree: GetzlerDegree = DEFAULT_DEGREE) -> DiffOp:
    """Monomials of Getzler degree exactly `order`, coefficients moved to the symbol side."""
    out: Dict[OperatorKey, Dict[int, object]] = {}
    for d, key, bits, c in _graded_pieces(x, degree):
        if d == order:
            out.setdefault(key, {})[bits] = c
    terms = {}
    for key, data in out.items():
        coeff = GradedElement(x.ctx, data, x.terms[key].exterior)
        terms[key] = coeff if coeff.exterior else symbol_map(coeff)
    return DiffOp(x.ctx, terms, n=x.n)


def model_operator(x: DiffOp, degree: GetzlerDegree = DEFAULT_DEGREE) -> DiffOp:
    """Top Getzler-degree part of x with c(e^i) replaced by exterior multiplication e^i∧."""
    order = getzler_order(x, degree)
    if order is None:
        return DiffOp(x.ctx, {}, n=x.n)
    return getzler_part(x, order, degree)


def model_compose_check(Q1: DiffOp, Q2: DiffOp, degree: GetzlerDegree = DEFAULT_DEGREE) -> bool:
    """Model of Q1∘Q2 equals model(Q1)·model(Q2) whenever the right side is non-zero."""
    m1, m2 = getzler_order(Q1, degree), getzler_order(Q2, degree)
    if m1 is None or m2 is None:
        return True
    rhs = model_operator(Q1, degree).compose(model_operator(Q2, degree))
    if rhs.is_zero():
        return True
    product = Q1.compose(Q2)
    order = getzler_order(product, degree)
    if order != m1 + m2:
        logger.debug("[Getzler] orders do not add: %s + %s -> %s", m1, m2, order)
        return False
    return getzler_part(product, m1 + m2, degree) == rhs


def connection_laplacian(a: Sequence[Sequence[GradedElement]], potential: Optional[GradedElement] = None,
                         quantized: bool = True) -> DiffOp:
    """-Σ_i (∂_i + ω_i)² + V with ω_i = -¼ Σ_j x_j a_ij.

    With ``quantized`` the 2-form entries a_ij act through Clifford
    multiplication c(a_ij); otherwise they stay exterior (the model operator).
    """
    n = len(a)
    ctx = a[0][0].ctx
    result = DiffOp(ctx, {}, n=n)
    for i in range(n):
        shifted = DiffOp.partial(ctx, i + 1, n=n)
        for j in range(n):
            entry = quantize(a[i][j]) if quantized else a[i][j]
            if entry.is_zero():
                continue
            shifted = shifted + DiffOp.term(ctx, alpha=_unit(n, j), coeff=entry.scale(sympy.Rational(-1, 4)), n=n)
        result = result - shifted.compose(shifted)
    if potential is not None:
        result = result + DiffOp.multiplier(ctx, potential, n=n)
    return result


def mehler_operator(A: Sequence[Sequence[GradedElement]]) -> DiffOp:
    """Model operator -Σ_i (∂_i - ¼ Σ_j A_ij x_j)² with exterior form coefficients."""
    return connection_laplacian(A, quantized=False)


# ==================== RESCALED PARITY ====================

@dataclass
class ParityEntry:
    exponent: sympy.Rational        # t-power of the rescaled diagonal, read off the kernel
    base_degree: int
    clifford_degree: int
    homogeneity: int
    getzler_degree: int             # homogeneity + Clifford degree + base degree at x = 0
    coefficient: object
    order_bound: sympy.Rational     # (j - n - M - 2)/2 for Clifford degree j, Getzler bound M


@dataclass
class ParityViolation:
    rule: str
    entry: ParityEntry


@dataclass
class ParityReport:
    """Rescaled diagonal of a symbol of Getzler order at most M.

    Every t-power sits at or above (j - n - M - 2)/2 in the degree-j component,
    and half-integer powers carry odd base-form degree, integer powers even
    (n even).
    """
    n: int
    getzler_bound: int
    getzler_order: Optional[int] = None
    entries: List[ParityEntry] = field(default_factory=list)
    violations: List[ParityViolation] = field(default_factory=list)

    @property
    def within_bound(self) -> bool:
        return self.getzler_order is None or self.getzler_order <= self.getzler_bound

    @property
    def passed(self) -> bool:
        return self.within_bound and not self.violations

    def rules_broken(self) -> List[str]:
        return sorted({v.rule for v in self.violations})

    def to_dict(self) -> Dict:
        return {
            "n": self.n,
            "getzler_bound": self.getzler_bound,
            "getzler_order": self.getzler_order,
            "passed": self.passed,
            "entries": [
                {"exponent": str(e.exponent), "base_degree": e.base_degree,
                 "clifford_degree": e.clifford_degree, "homogeneity": e.homogeneity,
                 "getzler_degree": e.getzler_degree, "order_bound": str(e.order_bound)}
                for e in self.entries
            ],
            "violations": [{"rule": v.rule, "exponent": str(v.entry.exponent),
                            "base_degree": v.entry.base_degree,
                            "clifford_degree": v.entry.clifford_degree} for v in self.violations],
        }


def _diagonal_exponent(at_one, at_four) -> sympy.Rational:
    """Half-integer e with at_four = 4^e · at_one."""
    doubled = 2 * math.log(abs(complex(at_four) / complex(at_one))) / math.log(4)
    if abs(doubled - round(doubled)) > 1e-9:
        raise ValueError(f"diagonal coefficient does not scale as a power of t^(1/2): ratio exponent {doubled / 2}")
    return sympy.Rational(round(doubled), 2)


def rescaled_parity_check(q: GradedSymbol, n: Optional[int] = None, getzler_bound: Optional[int] = None,
                          degree: GetzlerDegree = DEFAULT_DEGREE) -> ParityReport:
    """Tabulate the rescaled diagonal expansion of q and check it against its Getzler order.

    The t-power of every homogeneous part is measured from kernel_diagonal at
    t = 1 and t = 4; the base-form degree l component is then rescaled by
    t^{-l/2}. The bound M defaults to the declared order of q.
    """
    n = q.n if n is None else n
    bound = q.declared_order if getzler_bound is None else getzler_bound
    report = ParityReport(n, bound, getzler_order(q, degree))
    ctx = q.ctx

    diagonal = GradedSymbol(ctx, {k: c for k, c in q.terms.items() if k[2] > 0}, declared_order=q.declared_order, n=q.n)
    for d in sorted(diagonal.homogeneities(), reverse=True):
        part = diagonal.homogeneous_part(d)
        at_one = kernel_diagonal(part, n=n, t=1)
        at_four = kernel_diagonal(part, n=n, t=4)
        for bits, value in sorted(at_one.terms.items()):
            l = popcount(bits & ctx.base_bits)
            j = popcount(bits & ctx.clifford_bits)
            entry = ParityEntry(
                exponent=_diagonal_exponent(value, at_four.coefficient(bits)) - sympy.Rational(l, 2),
                base_degree=l,
                clifford_degree=j,
                homogeneity=d,
                getzler_degree=d + degree.of_mask(ctx, bits),
                coefficient=value,
                order_bound=sympy.Rational(j - n - bound - 2, 2),
            )
            report.entries.append(entry)
            if entry.exponent < entry.order_bound:
                report.violations.append(ParityViolation("getzler-order", entry))
            if entry.exponent.is_integer != ((n + l) % 2 == 0):
                report.violations.append(ParityViolation("parity", entry))
    logger.debug("[Parity] Getzler order %s (bound %s), %d entries, %d violations",
                 report.getzler_order, bound, len(report.entries), len(report.violations))
    return report
