import math
import random

import numpy as np
import pytest
import sympy
from scipy import linalg

from char_forms import (
    X,
    ConvergenceError,
    CurvatureMatrix,
    DimensionMismatchError,
    IsometryNormalAction,
    a_hat,
    chern_character,
    det_sqrt,
    determinant,
    equivariant_index_density,
    identity,
    index_density,
    mat_mul,
    matrix_function,
    nu_phi,
    prefactor_consistency,
    scalar_function,
)
from graded_algebra import EXACT, FLOAT, AlgebraContext, DegenerateActionError, GradedElement


def same(x: GradedElement, y: GradedElement) -> bool:
    keys = set(x.terms) | set(y.terms)
    return all(sympy.simplify(x.coefficient(k) - y.coefficient(k)) == 0 for k in keys)


def pairs_form(ctx, count, offset=0):
    """dy1dy2 + dy3dy4 + ... with `count` pairs."""
    u = ctx.zero(True)
    for k in range(count):
        u = u + ctx.base(offset + 2 * k + 1, True) * ctx.base(offset + 2 * k + 2, True)
    return u


def random_two_form(ctx, rng):
    out = ctx.zero(True)
    gens = [ctx.fiber_form(i) for i in range(1, ctx.n + 1)] + [ctx.base(a, True) for a in range(1, ctx.q_bar + 1)]
    for _ in range(2):
        i, j = rng.sample(range(len(gens)), 2)
        out = out + (gens[i] * gens[j]).scale(sympy.Rational(rng.randint(-4, 4), rng.randint(1, 3)))
    return out


def random_curvature(ctx, k, rng):
    rows = [[ctx.zero(True) for _ in range(k)] for _ in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            rows[i][j] = random_two_form(ctx, rng)
            rows[j][i] = -rows[i][j]
    return CurvatureMatrix.from_rows(ctx, rows)


# ==================== MATRIX FUNCTIONS ====================

def test_exp_of_zero_is_identity():
    ctx = AlgebraContext(2, q_bar=2)
    result = matrix_function(sympy.exp(X), CurvatureMatrix.zero(ctx, 3))
    assert result == identity(ctx, 3)


def test_exp_inverse_on_nilpotent_matrix():
    ctx = AlgebraContext(2, q_bar=4)
    R = random_curvature(ctx, 3, random.Random(2))
    forward = matrix_function(sympy.exp(X), R)
    backward = matrix_function(sympy.exp(-X), R)
    assert mat_mul(forward, backward) == identity(ctx, 3)


def test_log_then_exp_recovers_one_plus_m():
    ctx = AlgebraContext(1, q_bar=4)
    m = pairs_form(ctx, 2).scale(3)
    log = scalar_function(sympy.log(1 + X), m)
    assert scalar_function(sympy.exp(X), log) == 1 + m


def test_series_outside_domain_rejected():
    ctx = AlgebraContext(1, q_bar=2)
    with pytest.raises(ConvergenceError):
        scalar_function(sympy.log(X), ctx.zero(True) + pairs_form(ctx, 1))


def numeric_plus_form(ctx, numeric, form=None, perturbation=None):
    rows = []
    for i, row in enumerate(numeric):
        out = []
        for j, value in enumerate(row):
            entry = ctx.scalar(value, exterior=True)
            if form is not None and perturbation[i][j]:
                entry = entry + form.scale(perturbation[i][j])
            out.append(entry)
        rows.append(out)
    return rows


def test_exp_of_rotation_generator_matches_expm():
    ctx = AlgebraContext(1, q_bar=2)
    N = [[0, 1], [-1, 0]]
    result = matrix_function(sympy.exp(X), numeric_plus_form(ctx, N))
    expected = linalg.expm(np.array(N, dtype=float))
    for i in range(2):
        for j in range(2):
            assert complex(result[i][j].scalar_part()) == pytest.approx(expected[i, j], abs=1e-12)
            assert set(result[i][j].terms) <= {0}


@pytest.mark.parametrize("mode", [EXACT, FLOAT])
def test_exp_with_noncommuting_nilpotent_part_matches_frechet(mode):
    ctx = AlgebraContext(1, q_bar=2, scalar_mode=mode)
    omega = ctx.base(1, True) * ctx.base(2, True)
    (bits, sign), = omega.terms.items()
    N = [[1, 2], [0, 3]]
    E = [[0, 1], [2, -1]]
    result = matrix_function(sympy.exp(X), numeric_plus_form(ctx, N, omega, E))
    expm, frechet = linalg.expm_frechet(np.array(N, dtype=float), np.array(E, dtype=float))
    for i in range(2):
        for j in range(2):
            assert complex(result[i][j].scalar_part()) == pytest.approx(expm[i, j], rel=1e-10, abs=1e-10)
            first_order = complex(result[i][j].coefficient(bits)) / complex(sign)
            assert first_order == pytest.approx(frechet[i, j], rel=1e-10, abs=1e-10)


def test_exp_inverse_with_noncommuting_numeric_part():
    ctx = AlgebraContext(1, q_bar=4)
    u = pairs_form(ctx, 2)
    N, E = [[1, 2], [0, 3]], [[1, 2], [5, -1]]
    forward = matrix_function(sympy.exp(X), numeric_plus_form(ctx, N, u, E))
    backward = matrix_function(sympy.exp(-X), numeric_plus_form(ctx, N, u, E))
    product = mat_mul(forward, backward)
    assert any(e.max_degree() == 4 for row in forward for e in row)
    for got, want in zip(sum(product, []), sum(identity(ctx, 2), [])):
        assert same(got, want)


def test_spectrum_outside_domain_rejected():
    ctx = AlgebraContext(1, q_bar=2)
    with pytest.raises(ConvergenceError):
        matrix_function(sympy.log(X), numeric_plus_form(ctx, [[1, 0], [0, 0]]))


def test_defective_numeric_part_rejected():
    ctx = AlgebraContext(1, q_bar=2)
    with pytest.raises(ConvergenceError):
        matrix_function(sympy.exp(X), numeric_plus_form(ctx, [[1, 1], [0, 1]]))


# ==================== Â ====================

def test_a_hat_of_zero_curvature():
    ctx = AlgebraContext(2, q_bar=2)
    assert a_hat(CurvatureMatrix.zero(ctx, 2)) == 1


def test_a_hat_single_block_series():
    ctx = AlgebraContext(1, q_bar=8)
    u = pairs_form(ctx, 4)
    expected = 1 + (u * u).scale(sympy.Rational(1, 24)) + (u * u * u * u).scale(sympy.Rational(7, 5760))
    assert a_hat(CurvatureMatrix.block(u)) == expected


def test_a_hat_block_sum_multiplies():
    ctx = AlgebraContext(1, q_bar=8)
    u, w = pairs_form(ctx, 2), pairs_form(ctx, 2, offset=4)
    R1, R2 = CurvatureMatrix.block(u), CurvatureMatrix.block(w.scale(2))
    assert a_hat(CurvatureMatrix.direct_sum(R1, R2)) == a_hat(R1) * a_hat(R2)


def test_a_hat_degrees_are_multiples_of_four():
    ctx = AlgebraContext(4, q_bar=2)
    rng = random.Random(7)
    for _ in range(3):
        value = a_hat(random_curvature(ctx, 4, rng))
        assert value.scalar_part() == 1
        assert all(bin(bits).count("1") % 4 == 0 for bits in value.terms)


def test_degree_cap_truncates():
    ctx = AlgebraContext(1, q_bar=8)
    u = pairs_form(ctx, 4)
    capped = a_hat(CurvatureMatrix.block(u), degree_cap=4)
    assert capped == 1 + (u * u).scale(sympy.Rational(1, 24))


# ==================== ν_φ ====================

def test_nu_phi_reflection():
    ctx = AlgebraContext(2, q_bar=2)
    assert nu_phi(IsometryNormalAction.reflection(), CurvatureMatrix.zero(ctx, 2)) == sympy.Rational(1, 2)


def test_nu_phi_quarter_turn():
    ctx = AlgebraContext(2, q_bar=2)
    value = nu_phi(IsometryNormalAction((sympy.pi / 2,)), CurvatureMatrix.zero(ctx, 2))
    assert sympy.simplify(value.scalar_part() - 1 / sympy.sqrt(2)) == 0


def test_nu_phi_reflection_with_curvature_matches_series():
    ctx = AlgebraContext(1, q_bar=4)
    u = pairs_form(ctx, 2)
    value = nu_phi(IsometryNormalAction.reflection(), CurvatureMatrix.block(u))
    t = sympy.Symbol("t")
    brute = sympy.series((2 + 2 * sympy.cos(t)) ** sympy.Rational(-1, 2), t, 0, 4).removeO()
    expected = sympy.Rational(1, 2) + (u * u).scale(brute.coeff(t, 2))
    assert value == expected


@pytest.mark.parametrize("angles", [(0.7,), (2.1, 3.0), (math.pi / 3, 5.5, 1.2), (-1.0,)])
def test_nu_phi_flat_normal_bundle(angles):
    ctx = AlgebraContext(2, q_bar=0, scalar_mode=FLOAT)
    action = IsometryNormalAction(angles)
    value = nu_phi(action, CurvatureMatrix.zero(ctx, action.dim))
    expected = 1.0
    for theta in angles:
        expected /= 2 * math.sin(theta / 2)
    assert complex(value.scalar_part()) == pytest.approx(expected, abs=1e-12)


def test_degenerate_action_rejected():
    with pytest.raises(DegenerateActionError):
        IsometryNormalAction((2 * sympy.pi,))


# ==================== DETERMINANTS ====================

def test_det_sqrt_squares_to_det():
    ctx = AlgebraContext(1, q_bar=4)
    rng = random.Random(13)
    forms = [pairs_form(ctx, 1), pairs_form(ctx, 1, offset=2), pairs_form(ctx, 2)]
    for _ in range(20):
        rows = []
        for i in range(3):
            row = []
            for j in range(3):
                numeric = rng.randint(-2, 2) + (10 if i == j else 0)
                row.append(ctx.scalar(numeric, True) + rng.choice(forms).scale(rng.randint(-3, 3)))
            rows.append(row)
        root = det_sqrt(rows)
        assert same(root * root, determinant(rows))


# ==================== CHERN CHARACTER ====================

def test_chern_character_of_zero_is_rank():
    ctx = AlgebraContext(1, q_bar=2)
    assert chern_character([[ctx.zero(True)] * 3 for _ in range(3)]) == 3


def test_chern_character_rank_one():
    ctx = AlgebraContext(1, q_bar=4)
    c = pairs_form(ctx, 2)
    assert chern_character([[c]]) == 1 - c + (c * c).scale(sympy.Rational(1, 2))


def test_chern_character_block_diagonal_adds():
    ctx = AlgebraContext(1, q_bar=4)
    c1, c2 = pairs_form(ctx, 1), pairs_form(ctx, 1, offset=2)
    zero = ctx.zero(True)
    combined = chern_character([[c1, zero], [zero, c2]])
    assert combined == chern_character([[c1]]) + chern_character([[c2]])


# ==================== DENSITIES ====================

def test_equivariant_density_isolated_reflection():
    ctx = AlgebraContext(2)
    density = equivariant_index_density(CurvatureMatrix.zero(ctx, 0), IsometryNormalAction.reflection(),
                                        CurvatureMatrix.zero(ctx, 2), a=0, n=2)
    assert density.value == -sympy.I / 2


def test_trivial_action_matches_family_density():
    ctx = AlgebraContext(4, q_bar=2)
    rng = random.Random(21)
    for _ in range(10):
        R = random_curvature(ctx, 4, rng)
        equivariant = equivariant_index_density(R, IsometryNormalAction(), CurvatureMatrix.zero(ctx, 0), a=4, n=4)
        assert same(equivariant.value, index_density(R, 4).value)


def test_family_density_picks_a_hat_top_coefficient():
    ctx = AlgebraContext(2, q_bar=4)
    w = pairs_form(ctx, 2)
    u = ctx.fiber_form(1) * ctx.fiber_form(2) + w
    density = index_density(CurvatureMatrix.block(u), 2)
    expected = w.scale(sympy.Rational(1, 12) / (2 * sympy.I * sympy.pi))
    assert same(density.value, expected)


def test_twisted_density_includes_chern_character():
    ctx = AlgebraContext(2, q_bar=2)
    c = ctx.fiber_form(1) * ctx.fiber_form(2) + pairs_form(ctx, 1)
    density = index_density(CurvatureMatrix.zero(ctx, 2), 2, twist=[[c]])
    assert same(density.value, (pairs_form(ctx, 1) - 1).scale(1 / (2 * sympy.I * sympy.pi)))


@pytest.mark.parametrize("n", [2, 4, 6])
def test_prefactors_agree(n):
    assert prefactor_consistency(n) == 1


def test_dimension_mismatch_rejected():
    ctx = AlgebraContext(4)
    with pytest.raises(DimensionMismatchError):
        equivariant_index_density(CurvatureMatrix.zero(ctx, 2), IsometryNormalAction.reflection(),
                                  CurvatureMatrix.zero(ctx, 2), a=2, n=6)
