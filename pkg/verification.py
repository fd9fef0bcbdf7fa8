"""
Verification Module

Acceptance checks for every engine module, run as one suite or per module.
Each check produces a row with its anchor, status, measured value, target,
tolerance and runtime; a failing computation becomes a FAIL row instead of
an exception so the report is always complete.
"""
import json
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np
import sympy

from char_forms import (
    CurvatureMatrix,
    IsometryNormalAction,
    a_hat,
    equivariant_index_density,
    index_density,
    prefactor_consistency,
)
from graded_algebra import (
    FLOAT,
    AlgebraContext,
    GradedElement,
    SpinorRep,
    format_scalar,
    spinor_lift,
    supertrace,
    trace_odd,
)
from model_heat import (
    FixedPointGeometry,
    MehlerData,
    density_residual,
    equivariant_model_density,
    mehler_expansion,
    mehler_kernel,
    semigroup_oracle,
)
from run_config import RunConfig, get_run_config
from spectral_models import (
    FAIL,
    circle_dirac,
    eta_form_series,
    eta_integrand_series,
    eta_invariant,
    hurwitz_eta,
    large_t_exponent,
    large_t_grid,
    small_t_exponent,
    small_t_grid,
    sphere_fixed_point_sum,
    sphere_lefschetz,
    validate_sphere_table,
)
from superconnection_jlo import (
    FormMatrix,
    Superconnection,
    chern_form,
    curvature,
    duhamel_exp,
    duhamel_term,
    grassmann_exp_identity,
    heat_exp,
    heat_residual,
    jlo_cochain,
    random_superconnection,
    toy_family,
    transgression_defect,
)
from volterra_getzler import DiffOp, GradedSymbol, heat_coefficients, mehler_operator, parametrix, rescaled_parity_check

logger = logging.getLogger(__name__)

SUITES = (
    "graded_algebra",
    "char_forms",
    "volterra_getzler",
    "model_heat",
    "superconnection_jlo",
    "spectral_models",
)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
GRADING = (1, -1)
SPHERE_TWISTS = (0, 1, 3)


class CheckStatus(Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    SKIP = "SKIP"


@dataclass
class Measurement:
    """What a check saw. ``passed`` overrides the |measured - target| ≤ tolerance rule."""
    measured: float
    target: float
    tolerance: float
    detail: Dict = field(default_factory=dict)
    passed: Optional[bool] = None

    def status(self) -> CheckStatus:
        ok = self.passed if self.passed is not None else abs(self.measured - self.target) <= self.tolerance
        return CheckStatus.PASS if ok else CheckStatus.FAIL


@dataclass
class CheckResult:
    check_id: str
    suite: str
    anchor: str
    status: CheckStatus
    measured: float
    target: float
    tolerance: float
    runtime: float
    detail: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "check_id": self.check_id,
            "suite": self.suite,
            "anchor": self.anchor,
            "status": self.status.value,
            "measured": self.measured,
            "target": self.target,
            "tolerance": self.tolerance,
            "runtime": round(self.runtime, 3),
            "detail": self.detail,
        }


@dataclass
class VerificationReport:
    suite: str
    config: Dict
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.status != CheckStatus.FAIL for r in self.results)

    def counts(self) -> Dict[str, int]:
        return {s.value: sum(r.status == s for r in self.results) for s in CheckStatus}

    def rows(self) -> List[Dict]:
        return [{k: v for k, v in r.to_dict().items() if k != "detail"} for r in self.results]

    def to_dict(self) -> Dict:
        return {
            "suite": self.suite,
            "config": self.config,
            "passed": self.passed,
            "counts": self.counts(),
            "results": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str)


@dataclass(frozen=True)
class Check:
    check_id: str
    suite: str
    anchor: str
    run: Callable[[RunConfig], Measurement]


CHECKS: List[Check] = []


def check(check_id: str, suite: str, anchor: str):
    def register(fn: Callable[[RunConfig], Measurement]) -> Callable[[RunConfig], Measurement]:
        CHECKS.append(Check(check_id, suite, anchor, fn))
        return fn
    return register


def _mismatches(x: GradedElement, y: GradedElement) -> int:
    keys = set(x.terms) | set(y.terms)
    return sum(sympy.simplify(x.coefficient(k) - y.coefficient(k)) != 0 for k in keys)


def _two_form(ctx: AlgebraContext, *pairs) -> GradedElement:
    out = ctx.zero(True)
    for kind, i, j in pairs:
        if kind == "e":
            out = out + ctx.fiber_form(i) * ctx.fiber_form(j)
        else:
            out = out + ctx.base(i, True) * ctx.base(j, True)
    return out


# ==================== GRADED ALGEBRA ====================

@check("supertrace-identities", "graded_algebra", "closed supertrace formula vs spinor-matrix supertrace")
def _supertrace_identities(config: RunConfig) -> Measurement:
    worst, count = 0.0, 0
    for n in (2, 4, 6):
        ctx, rep = AlgebraContext(n), SpinorRep(n)
        for bits in ctx.basis():
            formula = complex(supertrace(GradedElement(ctx, {bits: 1})).scalar_part())
            worst = max(worst, abs(formula - rep.matrix_supertrace(rep.clifford_matrix(bits))))
            count += 1
    return Measurement(worst, 0.0, 1e-12, {"dimensions": [2, 4, 6], "monomials": count})


@check("odd-trace-identities", "graded_algebra", "odd-dimensional trace formula vs spinor-matrix trace")
def _odd_trace_identities(config: RunConfig) -> Measurement:
    worst, count = 0.0, 0
    for n in (3, 5):
        ctx, rep = AlgebraContext(n), SpinorRep(n)
        for bits in ctx.basis():
            formula = complex(trace_odd(GradedElement(ctx, {bits: 1})).scalar_part())
            worst = max(worst, abs(formula - rep.matrix_trace(rep.clifford_matrix(bits))))
            count += 1
    return Measurement(worst, 0.0, 1e-12, {"dimensions": [3, 5], "monomials": count})


# ==================== CHARACTERISTIC FORMS ====================

@check("a-hat-cross-check", "char_forms", "Mehler diagonal at the origin equals (4π)^{-n/2} Â of the curvature")
def _a_hat_cross_check(config: RunConfig) -> Measurement:
    ctx2 = AlgebraContext(2, q_bar=4)
    R2 = CurvatureMatrix.block(_two_form(ctx2, ("e", 1, 2), ("y", 1, 2), ("y", 3, 4)))
    two = _mismatches(mehler_kernel(MehlerData.from_curvature(R2), t=1), a_hat(R2).scale(1 / (4 * sympy.pi)))

    ctx4 = AlgebraContext(4, q_bar=2)
    zero = ctx4.zero(True)
    r12 = _two_form(ctx4, ("e", 1, 2), ("y", 1, 2))
    r13 = _two_form(ctx4, ("e", 1, 3))
    r34 = _two_form(ctx4, ("e", 3, 4)) - _two_form(ctx4, ("y", 1, 2))
    R4 = CurvatureMatrix.from_rows(ctx4, [[zero, r12, r13, zero],
                                          [-r12, zero, zero, zero],
                                          [-r13, zero, zero, r34],
                                          [zero, zero, -r34, zero]])
    four = _mismatches(mehler_kernel(MehlerData.from_curvature(R4), t=1),
                       a_hat(R4).scale(1 / (16 * sympy.pi ** 2)))
    return Measurement(two + four, 0, 0, {"n2_mismatches": two, "n4_mismatches": four})


# ==================== VOLTERRA / GETZLER ====================

@check("parametrix-mehler", "volterra_getzler", "parametrix heat coefficients vs Mehler t-expansion through t²")
def _parametrix_mehler(config: RunConfig) -> Measurement:
    ctx = AlgebraContext(2, q_bar=2)
    A = CurvatureMatrix.block(_two_form(ctx, ("e", 1, 2), ("y", 1, 2)))
    data = MehlerData.from_rows(ctx, A.rows())
    expansion = mehler_expansion(data, 2)
    coefficients = heat_coefficients(mehler_operator(data.rows()), 2)
    bad = sum(_mismatches(a, b) for a, b in zip(expansion, coefficients))
    return Measurement(bad, 0, 0, {"orders": len(expansion)})


@check("rescaled-parity", "volterra_getzler", "half-integer t-powers carry odd base degree after rescaling")
def _rescaled_parity(config: RunConfig) -> Measurement:
    ctx = AlgebraContext(2, q_bar=4)
    u = _two_form(ctx, ("y", 1, 2), ("y", 3, 4))
    family = mehler_operator(CurvatureMatrix.block(u).rows()) + DiffOp.multiplier(ctx, ctx.base(1) * ctx.base(3))
    even_report = rescaled_parity_check(parametrix(family, 4))

    odd_ctx = AlgebraContext(2, q_bar=1)
    nilpotent = DiffOp.laplacian(odd_ctx) + DiffOp.multiplier(odd_ctx, odd_ctx.base(1))
    odd_report = rescaled_parity_check(parametrix(nilpotent, 4))

    # Clifford degree 2 over R^{-1} has Getzler order 0 and must be rejected at bound -2
    too_high = GradedSymbol(odd_ctx, {((0, 0), (0, 0), 1): odd_ctx.clifford(1) * odd_ctx.clifford(2)}, declared_order=-2)
    control = rescaled_parity_check(too_high)

    violations = len(even_report.violations) + len(odd_report.violations)
    degrees = sorted({e.base_degree for e in even_report.entries + odd_report.entries})
    return Measurement(violations, 0, 0, {
        "entries": len(even_report.entries) + len(odd_report.entries),
        "base_degrees": degrees,
        "getzler_orders": [even_report.getzler_order, odd_report.getzler_order],
        "control_rules": control.rules_broken(),
    }, passed=(violations == 0 and even_report.passed and odd_report.passed
               and {0, 1, 2}.issubset(degrees) and not control.passed))


# ==================== MODEL HEAT KERNELS ====================

@check("mehler-numeric", "model_heat", "planar Mehler diagonal vs grid semigroup oracle")
def _mehler_numeric(config: RunConfig) -> Measurement:
    errors = {}
    for b in (0.5, 1.0):
        for t in (0.05, 0.1):
            oracle = semigroup_oracle(b, t)
            closed = mehler_kernel(MehlerData.planar(b), t=t)
            errors[f"b={b},t={t}"] = abs(closed - oracle.extrapolated) / abs(oracle.extrapolated)
    return Measurement(max(errors.values()), 0.0, 1e-3, {"rel_errors": errors})


@check("equivariant-two-path", "model_heat", "model-operator density vs characteristic-form density")
def _equivariant_two_path(config: RunConfig) -> Measurement:
    residuals = {}
    float_ctx, exact = AlgebraContext(2, scalar_mode=FLOAT), AlgebraContext(2)
    for theta in (sympy.pi / 2, 2 * sympy.pi / 3, sympy.pi):
        action = IsometryNormalAction((theta,))
        model = equivariant_model_density(FixedPointGeometry(0, action), MehlerData.numeric(np.zeros((2, 2))),
                                          spinor_lift(float_ctx, [(1, 2, theta)]))
        reference = equivariant_index_density(CurvatureMatrix.zero(exact, 0), action,
                                              CurvatureMatrix.zero(exact, 2), a=0, n=2)
        residuals[str(theta)] = density_residual(model, reference)

    ctx = AlgebraContext(4, q_bar=2)
    u = _two_form(ctx, ("e", 1, 2), ("y", 1, 2))
    R_T, R_N = CurvatureMatrix.block(u), CurvatureMatrix.block(u)
    action = IsometryNormalAction((sympy.pi / 2,))
    data = MehlerData.block_diagonal(MehlerData.from_curvature(R_T), MehlerData.from_curvature(R_N))
    symbolic = _mismatches(equivariant_model_density(FixedPointGeometry(2, action), data).value,
                           equivariant_index_density(R_T, action, R_N, a=2, n=4).value)

    id_ctx = AlgebraContext(2, q_bar=2)
    R = CurvatureMatrix.block(_two_form(id_ctx, ("e", 1, 2), ("y", 1, 2)))
    identity = _mismatches(
        equivariant_model_density(FixedPointGeometry(2, IsometryNormalAction()), MehlerData.from_curvature(R)).value,
        index_density(R, 2).value)

    worst = max(residuals.values())
    return Measurement(worst, 0.0, 1e-6, {
        "isolated_residuals": residuals,
        "n4_mismatches": symbolic,
        "identity_mismatches": identity,
        "prefactor_residual": format_scalar(prefactor_consistency(2)),
    }, passed=worst <= 1e-6 and symbolic == 0 and identity == 0)


# ==================== SUPERCONNECTIONS ====================

@check("duhamel-finiteness", "superconnection_jlo", "finite Duhamel series, simplex vs exact, heat residual")
def _duhamel_finiteness(config: RunConfig) -> Measurement:
    F = curvature(random_superconnection(np.random.default_rng(config.seed), q_bar=2))
    vanishes = duhamel_term(F, 1.0, 3).is_zero()
    gaps = []
    for i in range(10):
        Fi = curvature(random_superconnection(np.random.default_rng(config.seed + 100 + i), size=4, q_bar=2))
        exact = duhamel_exp(Fi, 1.0)
        simplex = duhamel_exp(Fi, 1.0, quadrature="simplex", order=config.quadrature_order)
        gaps.append((exact - simplex).max_abs())
    residual = max(heat_residual(F, 1.0, quadrature=q) for q in ("exact", "simplex"))
    worst = max(max(gaps), residual)
    return Measurement(worst, 0.0, 1e-8, {
        "term_beyond_q_bar_vanishes": vanishes,
        "simplex_gap": max(gaps),
        "heat_residual": residual,
        "order": config.quadrature_order,
    }, passed=vanishes and worst <= 1e-8)


@check("chern-closedness", "superconnection_jlo", "rescaled Chern form closed; t-variation exact")
def _chern_closedness(config: RunConfig) -> Measurement:
    B = toy_family()
    half = sympy.Rational(1, 2)
    open_forms = [str(t) for t in (half, 1, 2) if not chern_form(B, t).exterior_derivative(B.coords).vanishes()]
    defects = [f"{t1}->{t2}" for t1, t2 in ((half, 1), (1, 2)) if not transgression_defect(B, t1, t2).vanishes()]
    failures = len(open_forms) + len(defects)
    return Measurement(failures, 0, 0, {"not_closed": open_forms, "not_exact": defects})


@check("jlo-cochain", "superconnection_jlo", "JLO degree-zero reduction, commuting closed form, saturation")
def _jlo_cochain(config: RunConfig) -> Measurement:
    B = random_superconnection(np.random.default_rng(config.seed + 13))
    reduction = jlo_cochain(B, 0.8, [B.D.identity()]).value.max_abs_difference(
        heat_exp(curvature(B), 0.8).rescale(0.8).supertrace())

    lam, t = 0.9, 0.6
    scalar = Superconnection.from_dirac(lam * SIGMA_X, 0, GRADING)
    rng = np.random.default_rng(config.seed + 20)
    commuting = 0.0
    for k in (1, 2):
        inputs = [FormMatrix.constant(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)), 0, GRADING)
                  for _ in range(2 * k + 1)]
        product = inputs[0]
        for a in inputs[1:]:
            product = product * scalar.bracket(a)
        expected = t ** k / math.factorial(2 * k) * complex(product.supertrace().coefficient()) * math.exp(-t * lam ** 2)
        value = complex(jlo_cochain(scalar, t, inputs, order=8).value.coefficient())
        commuting = max(commuting, abs(value - expected))

    top = Superconnection.from_dirac(SIGMA_X, 1, GRADING)
    a = FormMatrix.from_blocks(1, {(1,): SIGMA_X}, GRADING)
    saturated = jlo_cochain(top, 1.0, [a, a, a], order=4).value.terms == {}

    worst = max(reduction, commuting)
    return Measurement(worst, 0.0, 1e-8, {
        "degree_zero_gap": reduction,
        "commuting_gap": commuting,
        "saturated_vanishes": saturated,
    }, passed=worst <= 1e-8 and saturated)


@check("grassmann-identity", "superconnection_jlo", "Grassmann-variable heat exponential vs direct integrand")
def _grassmann_identity(config: RunConfig) -> Measurement:
    M = np.random.default_rng(config.seed).normal(size=(6, 6))
    report = grassmann_exp_identity((M + M.T) / 2, 0.5)
    return Measurement(report.deviation, 0.0, 1e-10, report.to_dict())


# ==================== SPECTRAL MODELS ====================

@check("eta-circle", "spectral_models", "circle eta invariant vs Hurwitz zeta; reflection a ↔ 1 - a")
def _eta_circle(config: RunConfig) -> Measurement:
    quarter = eta_invariant(circle_dirac(0.25)).value.real
    half = abs(eta_invariant(circle_dirac(0.5)).value)
    reflection = {}
    for a in (0.1, 0.25, 0.4):
        reflection[a] = abs(eta_invariant(circle_dirac(a)).value + eta_invariant(circle_dirac(1 - a)).value)
    gap = abs(quarter - hurwitz_eta(0.25))
    return Measurement(quarter, 0.5, 1e-6, {
        "oracle_gap": gap,
        "half_twist": half,
        "reflection": reflection,
    }, passed=gap <= 1e-6 and half <= 1e-9 and max(reflection.values()) <= 1e-8)


def _eta_form_model() -> Superconnection:
    rng = np.random.default_rng(30)
    A_plus = FormMatrix(2, 2, {0b01: rng.normal(size=(2, 2)), 0b10: rng.normal(size=(2, 2))})
    return Superconnection.from_dirac(np.diag([1.0, -1.0]), 2, None, A_plus)


@check("regularity-exponents", "spectral_models", "small-t t^{1/2} and large-t t^{-3/2} decay of eta integrands")
def _regularity_exponents(config: RunConfig) -> Measurement:
    small, large = small_t_grid(), large_t_grid()
    fits = {}
    for a, alpha in ((0.25, None), (0.5, None), (0.25, math.pi / 2), (0.25, 2 * math.pi / 5)):
        model = circle_dirac(a)
        fits[f"circle a={a} alpha={alpha} small"] = small_t_exponent(eta_integrand_series(model, small, alpha))
        fits[f"circle a={a} alpha={alpha} large"] = large_t_exponent(eta_integrand_series(model, large, alpha))
    fits["eta form large"] = large_t_exponent(eta_form_series(_eta_form_model(), large))
    failing = [name for name, fit in fits.items() if fit.status == FAIL]
    return Measurement(len(failing), 0, 0, {
        "fits": {name: fit.to_dict() for name, fit in fits.items()},
        "failing": failing,
    })


@check("sphere-lefschetz", "spectral_models", "equivariant signed heat trace constant in t; fixed-point sum")
def _sphere_lefschetz(config: RunConfig) -> Measurement:
    tables = {twist: validate_sphere_table(twist=twist) for twist in SPHERE_TWISTS}
    spread = gap = 0.0
    values = {}
    for twist in SPHERE_TWISTS:
        for alpha in (math.pi, math.pi / 2, 2.3):
            sums = [sphere_lefschetz(alpha, t, twist).value for t in (0.3, 1.0, 3.0)]
            spread = max(spread, max(abs(v - sums[0]) for v in sums))
            closed = math.sin(twist * alpha / 2) / math.sin(alpha / 2)
            gap = max(gap, abs(sums[1] - sphere_fixed_point_sum(alpha, twist).total), abs(sums[1] - closed))
            values[f"twist={twist},alpha={alpha:.4f}"] = sums[1].real
    tables_ok = all(table.passed() for table in tables.values())
    return Measurement(spread, 0.0, 1e-10, {
        "fixed_point_gap": gap,
        "lefschetz_numbers": values,
        "table_validated": tables_ok,
    }, passed=spread <= 1e-10 and gap <= 1e-8 and tables_ok)


# ==================== RUNNER ====================

def checks_for(suite: str) -> List[Check]:
    if suite == "all":
        return list(CHECKS)
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from all, {', '.join(SUITES)}")
    return [c for c in CHECKS if c.suite == suite]


def run_check(item: Check, config: RunConfig) -> CheckResult:
    start = time.perf_counter()
    try:
        measurement = item.run(config)
        status = measurement.status()
        result = CheckResult(item.check_id, item.suite, item.anchor, status, float(measurement.measured),
                             float(measurement.target), float(measurement.tolerance),
                             time.perf_counter() - start, measurement.detail)
    except Exception as exc:
        logger.exception("[Verify] %s raised", item.check_id)
        result = CheckResult(item.check_id, item.suite, item.anchor, CheckStatus.FAIL, float("nan"),
                             float("nan"), float("nan"), time.perf_counter() - start,
                             {"error": f"{type(exc).__name__}: {exc}"})
    log = logger.info if result.status != CheckStatus.FAIL else logger.warning
    log("[Verify] %s: %s measured=%.3g (%.2fs) [%s]",
        result.check_id, result.status.value, result.measured, result.runtime, result.anchor)
    return result


def run_suite(suite: str = "all", config: Optional[RunConfig] = None) -> VerificationReport:
    config = config or get_run_config()
    report = VerificationReport(suite, config.model_dump())
    for item in checks_for(suite):
        report.results.append(run_check(item, config))
    logger.info("[Verify] suite %s: %s", suite, report.counts())
    return report
