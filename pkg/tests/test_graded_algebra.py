import random

import numpy as np
import pytest
import sympy

from graded_algebra import (
    FLOAT,
    STAR_ZERO,
    AlgebraContext,
    BerezinRangeError,
    ContextMismatchError,
    DegenerateActionError,
    GradedElement,
    ParityError,
    SpinorRep,
    berezin,
    equivariant_supertrace,
    equivariant_trace_odd,
    mul,
    quantize,
    spinor_lift,
    supercommutator,
    supertrace,
    symbol_map,
    trace_odd,
)


def same(x: GradedElement, y: GradedElement) -> bool:
    keys = set(x.terms) | set(y.terms)
    return all(sympy.simplify(x.coefficient(k) - y.coefficient(k)) == 0 for k in keys)


def random_element(ctx, rng, terms=4, parity=None):
    top = 1 << ctx.generator_count
    data = {}
    while len(data) < terms:
        bits = rng.randrange(top)
        if parity is not None and bin(bits).count("1") % 2 != parity:
            continue
        data[bits] = sympy.Rational(rng.randint(-5, 5), rng.randint(1, 3)) + sympy.I * rng.randint(-2, 2)
    return GradedElement(ctx, data)


# ==================== PRODUCT ====================

def test_clifford_square_is_minus_one():
    ctx = AlgebraContext(2)
    assert ctx.clifford(1) * ctx.clifford(1) == -1


@pytest.mark.parametrize("n", [2, 3, 4])
def test_clifford_relations(n):
    ctx = AlgebraContext(n)
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            anti = ctx.clifford(i) * ctx.clifford(j) + ctx.clifford(j) * ctx.clifford(i)
            assert anti == (-2 if i == j else 0)


def test_base_generators_square_to_zero_and_anticommute():
    ctx = AlgebraContext(2, q_bar=2, aux=("z",))
    dy1, dy2, z = ctx.base(1), ctx.base(2), ctx.aux_generator("z")
    assert (dy1 * dy1).is_zero()
    assert (z * z).is_zero()
    assert dy1 * dy2 == -(dy2 * dy1)
    assert dy1 * ctx.clifford(1) == -(ctx.clifford(1) * dy1)
    assert dy1 * ctx.clifford(1) * ctx.clifford(2) == ctx.clifford(1) * ctx.clifford(2) * dy1


def test_koszul_sign_matches_tensor_representation():
    ctx = AlgebraContext(2, q_bar=2)
    rep = SpinorRep(2)
    a = ctx.base(1) * ctx.clifford(1)
    b = ctx.base(2) * ctx.clifford(2)
    product = a * b
    expected = ctx.monomial(clifford=(1, 2), base=(1, 2))
    assert product == expected or product == -expected
    assert np.allclose(rep.tensor_matrix(product), rep.tensor_matrix(a) @ rep.tensor_matrix(b))


def test_tensor_representation_is_multiplicative_on_random_elements():
    ctx = AlgebraContext(4, q_bar=1, aux=("z",))
    rep = SpinorRep(4)
    rng = random.Random(3)
    for _ in range(10):
        a, b = random_element(ctx, rng), random_element(ctx, rng)
        assert np.allclose(rep.matrix(a * b), rep.matrix(a) @ rep.matrix(b))


def test_associativity_and_distributivity():
    ctx = AlgebraContext(3, q_bar=1, aux=("z",))
    rng = random.Random(11)
    for _ in range(200):
        a, b, c = (random_element(ctx, rng, terms=3) for _ in range(3))
        assert (a * b) * c == a * (b * c)
        assert a * (b + c) == a * b + a * c


def test_context_mismatch_rejected():
    with pytest.raises(ContextMismatchError):
        mul(AlgebraContext(2).clifford(1), AlgebraContext(3).clifford(1))


def test_context_validation():
    with pytest.raises(ValueError):
        AlgebraContext(0)
    with pytest.raises(ValueError):
        AlgebraContext(2, aux=("z", "z"))


# ==================== SYMBOL MAP ====================

def test_symbol_map_examples():
    ctx = AlgebraContext(2)
    c1, c2 = ctx.clifford(1), ctx.clifford(2)
    assert symbol_map(c1 * c2) == ctx.fiber_form(1) * ctx.fiber_form(2)
    assert symbol_map(c1 * c1) == -1


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_symbol_map_inverse_on_basis(n):
    ctx = AlgebraContext(n)
    for bits in ctx.basis():
        x = GradedElement(ctx, {bits: 1})
        assert quantize(symbol_map(x)) == x
        assert symbol_map(quantize(symbol_map(x))) == symbol_map(x)


def test_dump_format():
    ctx = AlgebraContext(2, q_bar=1)
    text = (ctx.clifford(1) * ctx.clifford(2) * ctx.base(1)).dump()
    assert text == "c(e1)c(e2)·dy1 → 1"


# ==================== TRACES ====================

def test_supertrace_examples_n2():
    ctx = AlgebraContext(2)
    assert supertrace(ctx.one()).is_zero()
    assert supertrace(ctx.clifford(1) * ctx.clifford(2)) == -2 * sympy.I


@pytest.mark.parametrize("n", [2, 4, 6])
def test_supertrace_matches_matrices(n):
    ctx = AlgebraContext(n)
    rep = SpinorRep(n)
    for bits in ctx.basis():
        formula = complex(supertrace(GradedElement(ctx, {bits: 1})).scalar_part())
        assert formula == pytest.approx(rep.matrix_supertrace(rep.clifford_matrix(bits)), abs=1e-12)


@pytest.mark.parametrize("n", [3, 5])
def test_trace_odd_matches_matrices(n):
    ctx = AlgebraContext(n)
    rep = SpinorRep(n)
    for bits in ctx.basis():
        formula = complex(trace_odd(GradedElement(ctx, {bits: 1})).scalar_part())
        assert formula == pytest.approx(rep.matrix_trace(rep.clifford_matrix(bits)), abs=1e-12)


def test_trace_odd_examples_n3():
    ctx = AlgebraContext(3)
    assert trace_odd(ctx.one()) == 2
    assert trace_odd(ctx.clifford(1)).is_zero()
    assert trace_odd(ctx.monomial(clifford=(1, 2, 3))) == -2


def test_trace_parity_guards():
    with pytest.raises(ParityError):
        supertrace(AlgebraContext(3).one())
    with pytest.raises(ParityError):
        trace_odd(AlgebraContext(2).one())


def test_supertrace_keeps_form_factors():
    ctx = AlgebraContext(2, q_bar=1)
    x = ctx.clifford(1) * ctx.clifford(2) * ctx.base(1)
    assert supertrace(x) == ctx.base(1).scale(-2 * sympy.I)


def test_supertrace_of_supercommutator_vanishes():
    ctx = AlgebraContext(4, q_bar=1)
    rng = random.Random(5)
    for _ in range(30):
        a = random_element(ctx, rng, parity=rng.randint(0, 1))
        b = random_element(ctx, rng, parity=rng.randint(0, 1))
        assert supertrace(supercommutator(a, b)).is_zero()


# ==================== BEREZIN ====================

def test_berezin_examples():
    ctx = AlgebraContext(3)
    e = ctx.fiber_form
    assert berezin(e(1) * e(2), 2) == 1
    assert berezin(e(1), 2).is_zero()
    assert berezin(e(1) * e(3), 1, STAR_ZERO).is_zero()


def test_berezin_range_and_input_checks():
    ctx = AlgebraContext(2)
    with pytest.raises(BerezinRangeError):
        berezin(ctx.fiber_form(1), 3)
    with pytest.raises(ValueError):
        berezin(ctx.clifford(1), 1)


# ==================== EQUIVARIANT SUPERTRACE ====================

def test_equivariant_supertrace_reflection_n2():
    ctx = AlgebraContext(2)
    lift = spinor_lift(ctx, [(1, 2, sympy.pi)])
    trace = equivariant_supertrace(lift, ctx.one(), 0)
    rep = SpinorRep(2)
    assert trace.total == -2 * sympy.I
    assert complex(trace.total.scalar_part()) == pytest.approx(
        rep.matrix_supertrace(rep.matrix(lift.element)), abs=1e-12)


def test_equivariant_supertrace_identity_reduces_to_supertrace():
    ctx = AlgebraContext(4, q_bar=1)
    lift = spinor_lift(ctx, [])
    A = ctx.monomial(clifford=(1, 2, 3, 4), base=(1,), coeff=3) + ctx.clifford(1)
    assert equivariant_supertrace(lift, A, 4).total == supertrace(A)


def test_equivariant_supertrace_quarter_turn_n4():
    ctx = AlgebraContext(4)
    lift = spinor_lift(ctx, [(3, 4, sympy.pi / 2)])
    A = ctx.clifford(1) * ctx.clifford(2)
    trace = equivariant_supertrace(lift, A, 2)
    assert same(trace.total, supertrace(lift.element * A))
    assert trace.corrections.is_zero()

    fctx = ctx.with_mode(FLOAT)
    flift = spinor_lift(fctx, [(3, 4, np.pi / 2)])
    ftrace = equivariant_supertrace(flift, A.to_float(), 2)
    rep = SpinorRep(4)
    direct = rep.matrix_supertrace(rep.matrix(flift.element) @ rep.matrix(A.to_float()))
    assert complex(ftrace.total.scalar_part()) == pytest.approx(direct, abs=1e-12)


def test_equivariant_supertrace_with_corrections():
    ctx = AlgebraContext(4, q_bar=2)
    lift = spinor_lift(ctx, [(3, 4, 2 * sympy.pi / 3)])
    A = (ctx.monomial(clifford=(1, 2, 3, 4), base=(1, 2), coeff=5)
         + ctx.monomial(clifford=(1, 2), base=(1,), coeff=2)
         + ctx.monomial(clifford=(1, 3), coeff=7))
    trace = equivariant_supertrace(lift, A, 2)
    assert not trace.corrections.is_zero()
    assert same(trace.total, supertrace(lift.element * A))


def test_equivariant_trace_odd_matches_trace():
    ctx = AlgebraContext(3, q_bar=1)
    lift = spinor_lift(ctx, [(2, 3, sympy.pi / 2)])
    A = ctx.clifford(1) * ctx.base(1) + ctx.clifford(1) + ctx.monomial(clifford=(1, 2, 3), coeff=4)
    trace = equivariant_trace_odd(lift, A, 1)
    assert same(trace.total, trace_odd(lift.element * A))


def test_degenerate_actions_rejected():
    ctx = AlgebraContext(4)
    with pytest.raises(DegenerateActionError):
        equivariant_supertrace(spinor_lift(ctx, [(3, 4, 2 * sympy.pi)]), ctx.one(), 2)
    with pytest.raises(DegenerateActionError):
        equivariant_supertrace(spinor_lift(ctx, [(3, 4, sympy.pi)]), ctx.one(), 0)


def test_spinor_lift_sign_metadata():
    ctx = AlgebraContext(2)
    assert spinor_lift(ctx, [(1, 2, sympy.pi / 2)]).lift_sign == 1
    assert spinor_lift(ctx, [(2, 1, sympy.pi / 2)]).lift_sign == -1
    assert spinor_lift(ctx, [(2, 1, sympy.pi / 2)]).planes == ((1, 2),)


def test_spinor_rep_relations():
    for n in (2, 3, 4, 5):
        rep = SpinorRep(n)
        eye = np.eye(rep.dim)
        for i, gi in enumerate(rep.matrices):
            for j, gj in enumerate(rep.matrices):
                assert np.allclose(gi @ gj + gj @ gi, -2 * eye * (i == j))
            if rep.chirality is not None:
                assert np.allclose(rep.chirality @ gi, -gi @ rep.chirality)
