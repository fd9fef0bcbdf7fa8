import math

import numpy as np
import pytest
import sympy
from scipy import integrate

from char_forms import (
    CurvatureMatrix,
    DimensionMismatchError,
    IsometryNormalAction,
    a_hat,
    equivariant_index_density,
    index_density,
    nu_phi,
)
from graded_algebra import FLOAT, AlgebraContext, DegenerateActionError, GradedElement, spinor_lift
from model_heat import (
    FixedPointGeometry,
    MehlerData,
    NonPositiveTimeError,
    convolution_check,
    density_residual,
    equivariant_model_density,
    fixed_point_integral,
    getzler_rescale,
    mehler_expansion,
    mehler_kernel,
    numeric_kernel,
    planar_diagonal,
    semigroup_oracle,
)
from volterra_getzler import heat_coefficients, mehler_operator


def same(x: GradedElement, y: GradedElement) -> bool:
    keys = set(x.terms) | set(y.terms)
    return all(sympy.simplify(x.coefficient(k) - y.coefficient(k)) == 0 for k in keys)


def two_form(ctx, *pairs):
    """Sum of e^i∧e^j (fiber, 'e') and dy_a∧dy_b (base, 'y') products."""
    out = ctx.zero(True)
    for kind, i, j in pairs:
        if kind == "e":
            out = out + ctx.fiber_form(i) * ctx.fiber_form(j)
        else:
            out = out + ctx.base(i, True) * ctx.base(j, True)
    return out


# ==================== NUMERIC KERNEL ====================

def test_zero_matrix_gives_free_kernel():
    data = MehlerData.numeric(np.zeros((3, 3)))
    x, y, t = [0.3, -0.1, 0.5], [0.0, 0.4, -0.2], 0.7
    d2 = sum((a - b) ** 2 for a, b in zip(x, y))
    expected = (4 * math.pi * t) ** -1.5 * math.exp(-d2 / (4 * t))
    assert mehler_kernel(data, x, y, t) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("b", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("t", [0.05, 0.1, 1.0])
def test_planar_diagonal(b, t):
    assert mehler_kernel(MehlerData.planar(b), t=t) == pytest.approx(planar_diagonal(b, t), rel=1e-12)


def test_kernel_reverses_under_sign_flip():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(3, 3))
    A = M - M.T
    x, y = rng.normal(size=3), rng.normal(size=3)
    forward = numeric_kernel(A, x, y, 0.4)
    assert numeric_kernel(-A, y, x, 0.4) == pytest.approx(forward, rel=1e-12)


@pytest.mark.parametrize("b", [0.5, 1.0])
def test_semigroup_convolution(b):
    data = MehlerData.planar(b)
    convolved, direct = convolution_check(data, [0.3, -0.2], [-0.4, 0.5], 0.1, 0.1)
    assert convolved == pytest.approx(direct, rel=1e-3)


@pytest.mark.slow
@pytest.mark.parametrize("b", [0.5, 1.0])
@pytest.mark.parametrize("t", [0.05, 0.1])
def test_grid_semigroup_oracle(b, t):
    result = semigroup_oracle(b, t)
    assert result.rel_error <= 1e-3
    assert mehler_kernel(MehlerData.planar(b), t=t) == pytest.approx(result.extrapolated, rel=1e-3)


def test_oracle_rejects_bad_mesh_pair():
    with pytest.raises(ValueError):
        semigroup_oracle(1.0, 0.1, points=(64, 100))


def test_non_positive_time_rejected():
    with pytest.raises(NonPositiveTimeError):
        mehler_kernel(MehlerData.planar(1.0), t=0)
    with pytest.raises(NonPositiveTimeError):
        mehler_kernel(MehlerData.planar(1.0), t=-0.5)


def test_non_antisymmetric_rejected():
    with pytest.raises(ValueError):
        MehlerData.numeric([[0.0, 1.0], [1.0, 0.0]])


# ==================== EXACT KERNEL ====================

def test_exact_free_kernel_off_diagonal():
    ctx = AlgebraContext(2)
    data = MehlerData.from_rows(ctx, [[ctx.zero(True)] * 2 for _ in range(2)])
    value = mehler_kernel(data, [1, 0], [0, 0], 1)
    assert sympy.simplify(value.scalar_part() - sympy.exp(sympy.Rational(-1, 4)) / (4 * sympy.pi)) == 0


def test_diagonal_is_a_hat_in_two_dimensions():
    ctx = AlgebraContext(2, q_bar=4)
    R = CurvatureMatrix.block(two_form(ctx, ("e", 1, 2), ("y", 1, 2), ("y", 3, 4)))
    value = mehler_kernel(MehlerData.from_curvature(R), t=1)
    assert same(value, a_hat(R).scale(1 / (4 * sympy.pi)))


def test_diagonal_is_a_hat_in_four_dimensions():
    ctx = AlgebraContext(4, q_bar=2)
    zero = ctx.zero(True)
    r12 = two_form(ctx, ("e", 1, 2), ("y", 1, 2))
    r13 = two_form(ctx, ("e", 1, 3))
    r34 = two_form(ctx, ("e", 3, 4)) - two_form(ctx, ("y", 1, 2))
    rows = [[zero, r12, r13, zero],
            [-r12, zero, zero, zero],
            [-r13, zero, zero, r34],
            [zero, zero, -r34, zero]]
    R = CurvatureMatrix.from_rows(ctx, rows)
    value = mehler_kernel(MehlerData.from_curvature(R), t=1)
    assert same(value, a_hat(R).scale(1 / (16 * sympy.pi ** 2)))


def test_expansion_matches_parametrix_coefficients():
    ctx = AlgebraContext(2, q_bar=2)
    A = CurvatureMatrix.block(two_form(ctx, ("e", 1, 2), ("y", 1, 2)))
    data = MehlerData.from_rows(ctx, A.rows())
    expansion = mehler_expansion(data, 2)
    coefficients = heat_coefficients(mehler_operator(data.rows()), 2)
    for a_l, b_l in zip(expansion, coefficients):
        assert same(a_l, b_l)
    assert expansion[1].is_zero()


def test_expansion_needs_exact_data():
    with pytest.raises(ValueError):
        mehler_expansion(MehlerData.planar(1.0), 2)


# ==================== FIXED-POINT INTEGRAL ====================

def test_reflection_integral_is_one_quarter():
    geom = FixedPointGeometry(0, IsometryNormalAction.reflection())
    value = fixed_point_integral(geom, MehlerData.numeric(np.zeros((2, 2))), 1.0)
    assert value == pytest.approx(0.25, rel=1e-12)


def test_fixed_point_integral_against_quadrature():
    theta = 2 * math.pi / 3
    geom = FixedPointGeometry(0, IsometryNormalAction((theta,)))
    data = MehlerData.planar(0.7)
    c, s = math.cos(theta), math.sin(theta)

    def integrand(v2, v1):
        v = np.array([v1, v2])
        return numeric_kernel(data.A, v, np.array([c * v1 - s * v2, s * v1 + c * v2]), 1.0)

    numeric, _ = integrate.dblquad(integrand, -12, 12, -12, 12, epsabs=1e-13, epsrel=1e-12)
    assert fixed_point_integral(geom, data, 1.0) == pytest.approx(numeric, rel=1e-8)


def test_normal_block_reproduces_nu_phi():
    ctx = AlgebraContext(2, q_bar=2)
    w = two_form(ctx, ("y", 1, 2))
    R_N = CurvatureMatrix.block(w)
    action = IsometryNormalAction((sympy.pi / 2,))
    value = fixed_point_integral(FixedPointGeometry(0, action), MehlerData.from_curvature(R_N))
    nu = nu_phi(action, R_N)
    assert same(value.scale(action.det_sqrt()), nu)
    bits = ctx.base_bit(1) | ctx.base_bit(2)
    assert sympy.simplify(nu.coefficient(bits) + sympy.sqrt(2) / 4) == 0


def test_geometry_mismatch_rejected():
    geom = FixedPointGeometry(0, IsometryNormalAction.reflection())
    with pytest.raises(DimensionMismatchError):
        fixed_point_integral(geom, MehlerData.numeric(np.zeros((4, 4))))


def test_coupled_blocks_rejected():
    geom = FixedPointGeometry(2, IsometryNormalAction.reflection())
    A = np.zeros((4, 4))
    A[0, 3], A[3, 0] = 1.0, -1.0
    with pytest.raises(ValueError):
        fixed_point_integral(geom, MehlerData.numeric(A))


def test_degenerate_normal_action_rejected():
    with pytest.raises(DegenerateActionError):
        FixedPointGeometry(0, IsometryNormalAction((0,)))


# ==================== TWO-PATH DENSITY ====================

@pytest.mark.parametrize("theta", [sympy.pi / 2, 2 * sympy.pi / 3, sympy.pi])
def test_isolated_fixed_point_two_paths(theta):
    action = IsometryNormalAction((theta,))
    float_ctx = AlgebraContext(2, scalar_mode=FLOAT)
    model = equivariant_model_density(FixedPointGeometry(0, action), MehlerData.numeric(np.zeros((2, 2))),
                                      spinor_lift(float_ctx, [(1, 2, theta)]))
    exact = AlgebraContext(2)
    reference = equivariant_index_density(CurvatureMatrix.zero(exact, 0), action,
                                          CurvatureMatrix.zero(exact, 2), a=0, n=2)
    assert density_residual(model, reference) <= 1e-6
    expected = -1j / (2 * math.sin(float(theta) / 2))
    assert complex(model.value.scalar_part()) == pytest.approx(expected, abs=1e-12)


def test_tangential_and_normal_curvature_two_paths():
    ctx = AlgebraContext(4, q_bar=2)
    u = two_form(ctx, ("e", 1, 2), ("y", 1, 2))
    R_T, R_N = CurvatureMatrix.block(u), CurvatureMatrix.block(u)
    action = IsometryNormalAction((sympy.pi / 2,))
    data = MehlerData.block_diagonal(MehlerData.from_curvature(R_T), MehlerData.from_curvature(R_N))
    model = equivariant_model_density(FixedPointGeometry(2, action), data)
    reference = equivariant_index_density(R_T, action, R_N, a=2, n=4)
    assert same(model.value, reference.value)
    dy12 = ctx.base_bit(1) | ctx.base_bit(2)
    root2 = sympy.sqrt(2)
    assert sympy.simplify(model.value.scalar_part() - root2 / (8 * sympy.pi)) == 0
    assert sympy.simplify(model.value.coefficient(dy12) + 5 * root2 / (24 * sympy.pi)) == 0


def test_trivial_action_reduces_to_family_density():
    ctx = AlgebraContext(2, q_bar=2)
    R = CurvatureMatrix.block(two_form(ctx, ("e", 1, 2), ("y", 1, 2)))
    model = equivariant_model_density(FixedPointGeometry(2, IsometryNormalAction()), MehlerData.from_curvature(R))
    assert same(model.value, index_density(R, 2).value)


@pytest.mark.parametrize("t", [sympy.Rational(1, 2), 2])
def test_rescaled_density_is_time_independent(t):
    ctx = AlgebraContext(2, q_bar=2)
    R_N = CurvatureMatrix.block(two_form(ctx, ("y", 1, 2)))
    geom = FixedPointGeometry(0, IsometryNormalAction((sympy.pi / 2,)))
    data = MehlerData.from_curvature(R_N)
    assert same(equivariant_model_density(geom, data, t=t).value, equivariant_model_density(geom, data).value)


def test_getzler_rescale_weights():
    ctx = AlgebraContext(2, q_bar=1)
    element = ctx.fiber_form(1) + ctx.base(1, True) * ctx.fiber_form(2) + ctx.one(True)
    scaled = getzler_rescale(element, 4)
    assert scaled.coefficient(ctx.clifford_bit(1)) == sympy.Rational(1, 2)
    assert scaled.coefficient(ctx.clifford_bit(2) | ctx.base_bit(1)) == sympy.Rational(-1, 4)
    assert scaled.scalar_part() == 1
