import cmath
import math

import numpy as np
import pytest

from graded_algebra import DegenerateActionError
from spectral_models import (
    FAIL,
    INVERTIBLE,
    PASS,
    SKIP,
    ZERO_MODES_EXCLUDED,
    DegenerateFitError,
    HeatTraceSeries,
    SpectralError,
    SpectralLine,
    build_model,
    circle_dirac,
    circle_theta,
    equivariant_circle_eta,
    eta_integrand,
    eta_integrand_series,
    eta_invariant,
    fit_exponent,
    heat_trace,
    heat_trace_series,
    hurwitz_eta,
    large_t_exponent,
    large_t_grid,
    poisson_circle_trace,
    small_t_exponent,
    small_t_grid,
    sphere_dirac,
    sphere_fixed_point_sum,
    sphere_lefschetz,
    sphere_weyl_deviation,
    torus_dirac,
    validate_sphere_table,
)


# ==================== MODELS ====================

def test_half_twist_spectrum_is_symmetric():
    lam = np.sort(circle_dirac(0.5).modes(10.0)[0])
    assert np.allclose(lam, -lam[::-1])


def test_quarter_twist_smallest_eigenvalue():
    assert circle_dirac(0.25).smallest_eigenvalue() == pytest.approx(0.25)


def test_circle_kernel_flag():
    assert circle_dirac(0.0).kernel_dimension == 1
    assert circle_dirac(1.0).kernel_dimension == 1
    assert circle_dirac(0.3).kernel_dimension == 0


def test_twist_out_of_range_rejected():
    with pytest.raises(SpectralError):
        circle_dirac(1.5)
    with pytest.raises(SpectralError):
        torus_dirac(0.0, 1.0)


def test_unknown_model_rejected():
    with pytest.raises(SpectralError):
        build_model("lens")
    assert build_model("circle", a=0.25).parameters == {"a": 0.25}


def test_line_character():
    line = SpectralLine(1.0, (-0.5, 0.5))
    assert line.multiplicity == 2
    assert line.character() == 2
    assert line.character(math.pi / 3) == pytest.approx(2 * math.cos(math.pi / 6), abs=1e-14)


def test_sphere_lines_have_expected_multiplicity():
    lines = sphere_dirac().lines(4.5)
    assert len(lines) == 8
    for line in lines:
        assert line.multiplicity == 2 * int(line.eigenvalue)
        assert line.chirality in (1, -1)


def test_model_to_dict():
    payload = torus_dirac(0.5, 0.0).to_dict(cutoff=7.0)
    assert payload["model"] == "torus"
    assert payload["graded"] is True
    assert payload["kernel_dimension"] == 0
    assert all(line["multiplicity"] >= 1 for line in payload["lines"])


# ==================== HEAT TRACES ====================

def test_circle_partition_function_matches_theta_series():
    value = heat_trace(circle_dirac(0.25), 1.0).value
    assert value.real == pytest.approx(circle_theta(0.25, 1.0), rel=1e-12)
    assert value.imag == 0


@pytest.mark.parametrize("t", [0.05, 0.5, 2.0])
def test_equivariant_circle_trace_matches_poisson_resummation(t):
    value = heat_trace(circle_dirac(0.25), t, alpha=math.pi / 3).value
    assert abs(value - poisson_circle_trace(0.25, t, math.pi / 3)) <= 1e-12


def test_equivariant_circle_trace_vanishes_at_small_t():
    model = circle_dirac(0.25)
    values = [abs(heat_trace(model, t, alpha=math.pi / 3).value) for t in (0.1, 0.03, 0.01)]
    assert values[0] > values[1] > values[2]
    assert values[2] < 1e-9


@pytest.mark.parametrize("model", [circle_dirac(0.25), torus_dirac(0.5, 0.5), sphere_dirac()],
                         ids=["circle", "torus", "sphere"])
@pytest.mark.parametrize("t", [0.01, 1.0])
def test_doubling_cutoff_changes_nothing(model, t):
    base = heat_trace(model, t, alpha=0.9)
    doubled = heat_trace(model, t, alpha=0.9, cutoff=2 * base.cutoff)
    assert abs(base.value - doubled.value) < 1e-12
    assert base.truncation_bound < 1e-12


@pytest.mark.parametrize("twist", [(0.0, 0.0), (0.5, 0.0), (0.5, 0.5)])
@pytest.mark.parametrize("t", [0.01, 0.3, 1.0, 3.0])
def test_flat_torus_signed_trace_is_zero(twist, t):
    assert abs(heat_trace(torus_dirac(*twist), t, signed=True).value) <= 1e-12


def test_torus_unsigned_trace_tends_to_kernel():
    assert heat_trace(torus_dirac(), 10.0).value.real == pytest.approx(2.0, abs=1e-12)
    assert heat_trace(torus_dirac(0.5, 0.5), 10.0).value.real == pytest.approx(0.0, abs=1e-12)


def test_torus_weyl_law():
    t = 0.01
    assert heat_trace(torus_dirac(), t).value.real == pytest.approx(2 / (4 * math.pi * t), rel=1e-9)


def test_signed_trace_needs_grading():
    with pytest.raises(SpectralError):
        heat_trace(circle_dirac(0.25), 1.0, signed=True)


def test_non_positive_time_rejected():
    with pytest.raises(SpectralError):
        heat_trace(circle_dirac(0.25), 0.0)
    with pytest.raises(SpectralError):
        eta_integrand(circle_dirac(0.25), -1.0)


def test_sampling_is_independent_of_worker_count():
    model = sphere_dirac()
    grid = np.geomspace(0.05, 5.0, 6)
    serial = heat_trace_series(model, grid, alpha=1.1, workers=1)
    pooled = heat_trace_series(model, grid, alpha=1.1, workers=4)
    assert np.array_equal(serial.values, pooled.values)


# ==================== ETA ====================

def test_hurwitz_oracle():
    assert hurwitz_eta(0.25) == pytest.approx(0.5, abs=1e-12)
    assert hurwitz_eta(0.1) == pytest.approx(0.8, abs=1e-12)


def test_equivariant_oracle_closed_form():
    a, alpha = 0.25, 2 * math.pi / 5
    expected = 2 * cmath.exp(1j * alpha * a) / (1 - cmath.exp(1j * alpha))
    assert abs(equivariant_circle_eta(a, alpha) - expected) <= 1e-12


def test_eta_quarter_twist():
    result = eta_invariant(circle_dirac(0.25))
    assert result.value.real == pytest.approx(0.5, abs=1e-6)
    assert abs(result.value.imag) <= 1e-12
    assert result.convention == INVERTIBLE
    assert result.endpoint_bound < 1e-9


def test_eta_half_twist_vanishes():
    assert abs(eta_invariant(circle_dirac(0.5)).value) <= 1e-9


def test_eta_with_zero_mode_reports_kernel():
    result = eta_invariant(circle_dirac(0.0))
    assert result.kernel_dimension == 1
    assert result.convention == ZERO_MODES_EXCLUDED
    assert abs(result.value) <= 1e-9


@pytest.mark.slow
@pytest.mark.parametrize("a", [0.1, 0.25, 0.4])
def test_eta_reflection(a):
    forward = eta_invariant(circle_dirac(a)).value
    backward = eta_invariant(circle_dirac(1 - a)).value
    assert abs(forward + backward) <= 1e-8
    assert forward.real == pytest.approx(hurwitz_eta(a), abs=1e-6)


def test_equivariant_eta_matches_series_oracle():
    a, alpha = 0.25, 2 * math.pi / 5
    result = eta_invariant(circle_dirac(a), alpha=alpha)
    assert abs(result.value - equivariant_circle_eta(a, alpha)) <= 1e-6


def test_eta_needs_ungraded_model():
    with pytest.raises(SpectralError):
        eta_invariant(torus_dirac(0.5, 0.5))


# ==================== EXPONENT FITS ====================

def power_series(power, grid, **kwargs):
    grid = np.asarray(grid)
    return HeatTraceSeries(grid, grid ** power, **kwargs)


def test_fit_recovers_power_law():
    slope, mask = fit_exponent(power_series(0.5, np.geomspace(1e-3, 1e-1, 12)))
    assert slope == pytest.approx(0.5, abs=1e-10)
    assert mask.all()


def test_small_t_thresholds():
    grid = np.geomspace(1e-3, 1e-1, 12)
    assert small_t_exponent(power_series(0.5, grid)).status == PASS
    assert small_t_exponent(power_series(0.0, grid)).status == FAIL


def test_large_t_thresholds():
    grid = np.geomspace(10, 1000, 12)
    assert large_t_exponent(power_series(-2.0, grid)).status == PASS
    assert large_t_exponent(power_series(-1.0, grid)).status == FAIL
    assert large_t_exponent(power_series(-2.0, grid, kernel_dimension=1)).status == SKIP


def test_values_below_floor_pass():
    grid = np.geomspace(1e-3, 1e-1, 12)
    fit = small_t_exponent(HeatTraceSeries(grid, np.full(12, 1e-16)))
    assert fit.status == PASS
    assert fit.slope is None


def test_degenerate_window_rejected():
    with pytest.raises(DegenerateFitError):
        fit_exponent(power_series(1.0, np.geomspace(1e-3, 1e-1, 5)))
    with pytest.raises(DegenerateFitError):
        fit_exponent(power_series(1.0, np.geomspace(1e-3, 1e-2, 12)))


def test_series_grid_must_increase():
    with pytest.raises(ValueError):
        HeatTraceSeries([1.0, 0.5, 2.0], [1.0, 1.0, 1.0])


@pytest.mark.parametrize("a", [0.25, 0.5])
def test_circle_eta_integrand_small_t(a):
    series = eta_integrand_series(circle_dirac(a), small_t_grid())
    assert small_t_exponent(series).passed


def test_rotated_circle_decays_exponentially():
    series = eta_integrand_series(circle_dirac(0.25), small_t_grid(), alpha=math.pi / 2)
    fit = small_t_exponent(series)
    assert fit.passed
    assert fit.slope is not None and fit.slope > 5


def test_circle_eta_integrand_large_t():
    assert large_t_exponent(eta_integrand_series(circle_dirac(0.25), large_t_grid())).passed


def test_zero_mode_large_t_skipped():
    fit = large_t_exponent(eta_integrand_series(circle_dirac(0.0), large_t_grid()))
    assert fit.status == SKIP
    assert "zero modes" in fit.reason


# ==================== SPHERE ====================

def test_sphere_table_matches_spin_matrices():
    check = validate_sphere_table(levels=8)
    assert check.levels == 8
    assert check.passed(1e-10)


@pytest.mark.parametrize("t", [0.01, 0.05])
def test_sphere_weyl_law(t):
    assert abs(sphere_weyl_deviation(t)) <= t * t


@pytest.mark.parametrize("alpha", [math.pi, math.pi / 2, 2.3])
def test_sphere_lefschetz_is_time_independent(alpha):
    values = [sphere_lefschetz(alpha, t).value for t in (0.3, 1.0, 3.0)]
    assert max(abs(v - values[0]) for v in values) <= 1e-10


def test_sphere_lefschetz_matches_fixed_point_sum():
    alpha = math.pi / 2
    fixed = sphere_fixed_point_sum(alpha)
    north = fixed.contributions["north"]
    assert north == pytest.approx(-1j / (2 * math.sin(alpha / 2)), abs=1e-12)
    assert abs(sphere_lefschetz(alpha, 1.0).value - fixed.total) <= 1e-8


def test_twisted_sphere_kernel_carries_the_index():
    model = sphere_dirac(3)
    (kernel,) = [line for line in model.lines(0.5) if line.eigenvalue == 0.0]
    assert kernel.chirality == 1
    assert kernel.weights == (-1.0, 0.0, 1.0)
    assert model.kernel_dimension == 3
    for t in (0.2, 1.0, 4.0):
        assert heat_trace(model, t, signed=True).value == pytest.approx(3.0, abs=1e-10)


@pytest.mark.parametrize("twist", [1, 2, 3])
@pytest.mark.parametrize("alpha", [math.pi / 2, 2.3])
def test_twisted_sphere_lefschetz_matches_fixed_point_sum(twist, alpha):
    closed = math.sin(twist * alpha / 2) / math.sin(alpha / 2)
    assert abs(closed) > 0.3
    values = [sphere_lefschetz(alpha, t, twist).value for t in (0.3, 1.0, 3.0)]
    fixed = sphere_fixed_point_sum(alpha, twist)
    for value in values:
        assert value == pytest.approx(closed, abs=1e-10)
    assert fixed.total == pytest.approx(closed, abs=1e-10)
    assert fixed.to_dict()["twist"] == twist


def test_fixed_point_sum_detects_wrong_twist():
    alpha = math.pi / 2
    assert abs(sphere_lefschetz(alpha, 1.0, 2).value - sphere_fixed_point_sum(alpha, 1).total) > 0.1


def test_twisted_sphere_table_matches_spin_matrices():
    check = validate_sphere_table(levels=6, twist=2)
    assert check.levels >= 6
    assert check.passed(1e-10)


@pytest.mark.parametrize("twist", [-1, 1.5])
def test_sphere_twist_must_be_a_degree(twist):
    with pytest.raises(SpectralError):
        sphere_dirac(twist)


@pytest.mark.parametrize("alpha", [0.0, 2 * math.pi])
def test_sphere_rotation_without_fixed_points_rejected(alpha):
    with pytest.raises(DegenerateActionError):
        sphere_lefschetz(alpha, 1.0)
    with pytest.raises(DegenerateActionError):
        sphere_fixed_point_sum(alpha)
