"""
Index Lab command line

    python index_cli.py ahat --input r.json
    python index_cli.py eta --model circle --a 0.25 --csv sweep.csv
    python index_cli.py verify --suite all --json report.json

Inputs are JSON documents validated by the schemas below. Summaries are JSON
(stdout unless --json names a file); t-sweeps are CSV (--csv, '-' for stdout,
in which case the summary needs --json to be kept). Exit codes: 0 when every
check passes, 1 when a check fails, 2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
from dataclasses import asdict, dataclass, field
from functools import reduce
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Type, TypeVar, Union

import numpy as np
import sympy
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from sympy.parsing.sympy_parser import parse_expr

from char_forms import CurvatureMatrix, IsometryNormalAction, a_hat, nu_phi
from graded_algebra import AlgebraContext, GradedElement
from model_heat import MehlerData, mehler_kernel, semigroup_oracle
from run_config import RunConfig, get_run_config, parallel_map, set_run_config
from spectral_models import (
    FAIL,
    MODEL_BUILDERS,
    SpectralSum,
    SpectrumModel,
    build_model,
    equivariant_circle_eta,
    eta_form_series,
    eta_integrand,
    eta_integrand_series,
    eta_invariant,
    heat_trace,
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
    BaseForm,
    FormMatrix,
    Superconnection,
    chern_form,
    eta_form,
    eta_form_integrand,
    jlo_cochain,
    label_of,
)
from verification import SUITES, run_suite
from volterra_getzler import DiffOp, dump_symbol, heat_coefficients, mehler_operator, parametrix, parametrix_residual

logger = logging.getLogger("index_cli")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

SWEEP_COLUMNS = ("t", "value_re", "value_im", "truncation_bound")
ORACLE_TOLERANCE = 1e-3
ETA_ORACLE_TOLERANCE = 1e-6

_SCALAR_NAMES = {
    "pi": sympy.pi, "I": sympy.I, "E": sympy.E, "sqrt": sympy.sqrt,
    "sin": sympy.sin, "cos": sympy.cos, "exp": sympy.exp, "Rational": sympy.Rational,
}
# only what the number and symbol transformations emit
_PARSER_GLOBALS = {
    "__builtins__": {}, "Integer": sympy.Integer, "Float": sympy.Float,
    "Rational": sympy.Rational, "Symbol": sympy.Symbol,
}
_ATTRIBUTE = re.compile(r"__|\.\s*(?![eE][+-]?\d)[A-Za-z_]")

Spec = TypeVar("Spec", bound=BaseModel)
Scalar = Union[int, float, str]


def parse_scalar(value: Scalar):
    """Exact scalar from JSON; strings may use integers, pi, I, E, sqrt and trig."""
    if isinstance(value, bool):
        raise ValueError(f"booleans are not scalars: {value!r}")
    if isinstance(value, int):
        return sympy.Integer(value)
    if isinstance(value, float):
        return sympy.Float(value)
    if _ATTRIBUTE.search(value):
        raise ValueError(f"attribute access is not allowed in scalar {value!r}")
    unknown = set(re.findall(r"(?<![\d.])[A-Za-z_]\w*", value)) - set(_SCALAR_NAMES)
    if unknown:
        raise ValueError(f"unsupported names {sorted(unknown)} in scalar {value!r}")
    try:
        return parse_expr(value, local_dict=dict(_SCALAR_NAMES), global_dict=dict(_PARSER_GLOBALS))
    except Exception as e:
        raise ValueError(f"cannot parse scalar {value!r}: {e}") from e


# ==================== INPUT SCHEMAS ====================

class InputModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FormTermSpec(InputModel):
    """coefficient · e^{fiber} ∧ dy^{base}; indices strictly ascending."""
    coefficient: Scalar = 1
    fiber: List[int] = Field(default_factory=list)
    base: List[int] = Field(default_factory=list)

    @field_validator("fiber", "base")
    @classmethod
    def _ascending(cls, indices: List[int]) -> List[int]:
        if indices != sorted(set(indices)):
            raise ValueError(f"generator indices must be strictly ascending, got {indices}")
        return indices

    def element(self, ctx: AlgebraContext, exterior: bool = True) -> GradedElement:
        return ctx.monomial(self.fiber, self.base, coeff=parse_scalar(self.coefficient), exterior=exterior)


def _element(ctx: AlgebraContext, terms: Sequence[FormTermSpec], exterior: bool = True) -> GradedElement:
    return reduce(lambda acc, term: acc + term.element(ctx, exterior), terms, ctx.zero(exterior))


def _curvature(ctx: AlgebraContext, blocks: Sequence[Sequence[FormTermSpec]]) -> CurvatureMatrix:
    """One skew 2×2 block per entry of blocks."""
    return CurvatureMatrix.direct_sum(*(CurvatureMatrix.block(_element(ctx, block)) for block in blocks))


class AlgebraSpec(InputModel):
    n: int = Field(ge=1)
    q_bar: int = Field(default=0, ge=0)
    scalar_mode: Literal["exact", "float"] = "exact"
    degree_cap: Optional[int] = Field(default=None, ge=0)

    def context(self) -> AlgebraContext:
        return AlgebraContext(self.n, self.q_bar, scalar_mode=self.scalar_mode)

    def cap(self) -> int:
        return self.degree_cap if self.degree_cap is not None else get_run_config().truncation_cap


class CurvatureSpec(AlgebraSpec):
    blocks: List[List[FormTermSpec]] = Field(min_length=1)


class NuPhiSpec(AlgebraSpec):
    angles: List[Scalar] = Field(min_length=1)
    blocks: List[List[FormTermSpec]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _matching_blocks(self) -> "NuPhiSpec":
        if self.blocks and len(self.blocks) != len(self.angles):
            raise ValueError(f"{len(self.angles)} rotation planes but {len(self.blocks)} curvature blocks")
        return self


class MehlerSpec(InputModel):
    b: Optional[float] = None
    A: Optional[List[List[float]]] = None
    t: List[float] = Field(min_length=1)
    x: Optional[List[float]] = None
    y: Optional[List[float]] = None
    oracle: bool = True

    @model_validator(mode="after")
    def _one_source(self) -> "MehlerSpec":
        if (self.b is None) == (self.A is None):
            raise ValueError("give exactly one of b (planar model) or A (matrix)")
        if any(t <= 0 for t in self.t):
            raise ValueError("t values must be positive")
        return self

    def data(self) -> MehlerData:
        return MehlerData.planar(self.b) if self.b is not None else MehlerData.numeric(self.A)

    @property
    def has_oracle(self) -> bool:
        at_origin = not any(self.x or ()) and not any(self.y or ())
        return self.oracle and self.b is not None and at_origin


class PotentialTerm(InputModel):
    coefficient: Scalar
    powers: List[int]

    @field_validator("powers")
    @classmethod
    def _non_negative(cls, powers: List[int]) -> List[int]:
        if any(p < 0 for p in powers):
            raise ValueError(f"monomial powers must be non-negative, got {powers}")
        return powers


class OperatorSpec(AlgebraSpec):
    """Mehler model operator when curvature is given, the flat -Δ otherwise, plus lower-order terms."""
    curvature: List[List[FormTermSpec]] = Field(default_factory=list)
    potential: List[PotentialTerm] = Field(default_factory=list)
    endomorphism: List[FormTermSpec] = Field(default_factory=list)
    depth: int = Field(default=3, ge=1)
    l_max: int = Field(default=1, ge=0)
    point: Optional[List[Scalar]] = None

    def operator(self, ctx: AlgebraContext) -> DiffOp:
        if self.curvature:
            R = _curvature(ctx, self.curvature)
            if R.size != self.n:
                raise ValueError(f"curvature blocks span {R.size} directions, operator lives in {self.n}")
            P = mehler_operator(MehlerData.from_curvature(R).rows())
        else:
            P = DiffOp.laplacian(ctx)
        if self.potential:
            coefficients = {}
            for term in self.potential:
                if len(term.powers) != self.n:
                    raise ValueError(f"potential powers {term.powers} need {self.n} entries")
                key = tuple(term.powers)
                coefficients[key] = coefficients.get(key, 0) + parse_scalar(term.coefficient)
            P = P + DiffOp.polynomial(ctx, coefficients)
        if self.endomorphism:
            P = P + DiffOp.multiplier(ctx, _element(ctx, self.endomorphism, exterior=False))
        return P

    def sample_point(self) -> Optional[List]:
        return None if self.point is None else [parse_scalar(v) for v in self.point]


class ComplexMatrix(InputModel):
    re: List[List[float]]
    im: Optional[List[List[float]]] = None


MatrixInput = Union[List[List[float]], ComplexMatrix]


def _matrix(value: MatrixInput) -> np.ndarray:
    if isinstance(value, ComplexMatrix):
        real = np.asarray(value.re, dtype=float)
        imag = np.zeros_like(real) if value.im is None else np.asarray(value.im, dtype=float)
        if imag.shape != real.shape:
            raise ValueError(f"re and im parts disagree in shape: {real.shape} vs {imag.shape}")
        out = real + 1j * imag
    else:
        out = np.asarray(value, dtype=complex)
    if out.ndim != 2 or out.shape[0] != out.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {out.shape}")
    return out


class SuperconnectionSpec(InputModel):
    """B = d + D + A_+ with A_+ given as {"dy1": M, "dy1^dy2": M, ...}."""
    D: MatrixInput
    q_bar: int = Field(default=0, ge=0)
    grading: Optional[List[int]] = None
    A_plus: Dict[str, MatrixInput] = Field(default_factory=dict)
    phi: Optional[MatrixInput] = None
    t: List[float] = Field(default_factory=lambda: [1.0], min_length=1)
    inputs: List[Dict[str, MatrixInput]] = Field(default_factory=list)
    order: Optional[int] = Field(default=None, ge=2)

    @field_validator("t")
    @classmethod
    def _positive(cls, values: List[float]) -> List[float]:
        if any(t <= 0 for t in values):
            raise ValueError("t values must be positive")
        return values

    def superconnection(self) -> Superconnection:
        D = _matrix(self.D)
        A_plus = None
        if self.A_plus:
            blocks = {label: _matrix(m) for label, m in self.A_plus.items()}
            A_plus = FormMatrix.from_labels(self.q_bar, blocks, D.shape[0], self.grading)
        return Superconnection.from_dirac(D, self.q_bar, self.grading, A_plus)

    def phi_matrix(self) -> Optional[np.ndarray]:
        return None if self.phi is None else _matrix(self.phi)

    def input_forms(self, B: Superconnection) -> List[FormMatrix]:
        if not self.inputs:
            return [B.D.identity()]
        return [FormMatrix.from_labels(self.q_bar, {k: _matrix(m) for k, m in blocks.items()}, B.size, B.grading)
                for blocks in self.inputs]


def load_input(path: Path, schema: Type[Spec]) -> Spec:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return schema.model_validate(raw)


# ==================== COMMANDS ====================

@dataclass
class CommandOutcome:
    summary: Dict
    rows: List[Dict] = field(default_factory=list)
    failed: bool = False


def _sum_row(s: SpectralSum) -> Dict:
    row = s.to_dict()
    return {key: row[key] for key in SWEEP_COLUMNS}


def _form_rows(t: float, form: BaseForm) -> List[Dict]:
    return [{"t": t, "form": label_of(mask), "value_re": complex(v).real, "value_im": complex(v).imag}
            for mask, v in sorted(form.terms.items())]


def _sweep_grid() -> np.ndarray:
    config = get_run_config()
    return np.geomspace(config.t_min, config.t_max, config.grid_points)


def _model(args: argparse.Namespace) -> SpectrumModel:
    params = {"circle": {"a": args.a}, "torus": {"a1": args.a, "a2": args.a2}, "sphere": {"twist": args.degree}}[args.model]
    return build_model(args.model, **params)


def _ahat_command(args: argparse.Namespace) -> CommandOutcome:
    request = load_input(args.input, CurvatureSpec)
    R = _curvature(request.context(), request.blocks)
    series = a_hat(R, request.cap())
    logger.info("[CLI] Â over %d curvature directions: %d terms", R.size, len(series.terms))
    return CommandOutcome({"degree_cap": request.cap(), "curvature": R.to_dict(), "a_hat": series.to_dict()})


def _nuphi_command(args: argparse.Namespace) -> CommandOutcome:
    request = load_input(args.input, NuPhiSpec)
    ctx = request.context()
    action = IsometryNormalAction(tuple(parse_scalar(a) for a in request.angles))
    R_N = _curvature(ctx, request.blocks) if request.blocks else CurvatureMatrix.zero(ctx, action.dim)
    value = nu_phi(action, R_N, request.cap())
    return CommandOutcome({"degree_cap": request.cap(), "action": action.to_dict(), "nu_phi": value.to_dict()})


def _mehler_command(args: argparse.Namespace) -> CommandOutcome:
    request = load_input(args.input, MehlerSpec)
    data = request.data()

    def row(t: float) -> Dict:
        value = mehler_kernel(data, request.x, request.y, t)
        if not request.has_oracle:
            return {"t": t, "value": value, "oracle": None, "rel_err": None}
        oracle = semigroup_oracle(request.b, t).extrapolated
        return {"t": t, "value": value, "oracle": oracle, "rel_err": abs(value - oracle) / abs(oracle)}

    rows = parallel_map(row, list(request.t))
    errors = [r["rel_err"] for r in rows if r["rel_err"] is not None]
    worst = max(errors) if errors else None
    return CommandOutcome({"mehler": data.to_dict(), "oracle_tolerance": ORACLE_TOLERANCE,
                           "max_rel_err": worst}, rows,
                          failed=worst is not None and worst > ORACLE_TOLERANCE)


def _parametrix_command(args: argparse.Namespace) -> CommandOutcome:
    request = load_input(args.input, OperatorSpec)
    P = request.operator(request.context())
    Q = parametrix(P, request.depth)
    residual = parametrix_residual(P, Q)
    return CommandOutcome({
        "depth": request.depth,
        "homogeneities": Q.homogeneities(),
        "residual_max_homogeneity": residual.max_homogeneity(),
        "symbol": dump_symbol(Q),
    })


def _heatcoeffs_command(args: argparse.Namespace) -> CommandOutcome:
    request = load_input(args.input, OperatorSpec)
    P = request.operator(request.context())
    coefficients = heat_coefficients(P, request.l_max, request.sample_point())
    return CommandOutcome({
        "l_max": request.l_max,
        "point": request.point,
        "coefficients": [c.to_dict() for c in coefficients],
    })


def _jlo_command(args: argparse.Namespace) -> CommandOutcome:
    request = load_input(args.input, SuperconnectionSpec)
    B = request.superconnection()
    inputs = request.input_forms(B)
    phi = request.phi_matrix()
    results, rows = [], []
    for t in request.t:
        result = jlo_cochain(B, t, inputs, phi, request.order)
        entry = result.to_dict()
        if result.k == 0:
            entry["chern_form"] = chern_form(B, t, phi).to_dict()
        results.append(entry)
        rows.extend(_form_rows(t, result.value))
    return CommandOutcome({"inputs": len(inputs), "results": results}, rows)


def _etaform_command(args: argparse.Namespace) -> CommandOutcome:
    request = load_input(args.input, SuperconnectionSpec)
    B = request.superconnection()
    phi = request.phi_matrix()
    result = eta_form(B, phi)
    fit = large_t_exponent(eta_form_series(B, large_t_grid(), phi))
    integrands = [eta_form_integrand(B, t, phi) for t in request.t]
    rows = [row for item in integrands for row in _form_rows(item.t, item.definition)]
    return CommandOutcome({
        "eta_form": result.to_dict(),
        "large_t": fit.to_dict(),
        "integrands": [item.to_dict() for item in integrands],
    }, rows, failed=fit.status == FAIL)


def _circle_oracle(model: SpectrumModel, alpha: Optional[float]) -> Optional[complex]:
    a = model.parameters.get("a")
    if model.name != "circle" or not 0 < a < 1:
        return None
    return complex(hurwitz_eta(a)) if alpha is None else equivariant_circle_eta(a, alpha)


def _eta_command(args: argparse.Namespace) -> CommandOutcome:
    model = _model(args)
    result = eta_invariant(model, args.alpha)
    sweep = parallel_map(lambda t: eta_integrand(model, t, args.alpha), list(_sweep_grid()))
    fits = {
        "small_t": small_t_exponent(eta_integrand_series(model, small_t_grid(), args.alpha)),
        "large_t": large_t_exponent(eta_integrand_series(model, large_t_grid(), args.alpha)),
    }
    oracle = _circle_oracle(model, args.alpha)
    gap = None if oracle is None else abs(result.value - oracle)
    failed = any(fit.status == FAIL for fit in fits.values()) or (gap is not None and gap > ETA_ORACLE_TOLERANCE)
    return CommandOutcome({
        "eta": result.to_dict(),
        "oracle": None if oracle is None else [oracle.real, oracle.imag],
        "oracle_gap": gap,
        "oracle_tolerance": ETA_ORACLE_TOLERANCE,
        "fits": {name: fit.to_dict() for name, fit in fits.items()},
    }, [_sum_row(s) for s in sweep], failed)


def _heattrace_command(args: argparse.Namespace) -> CommandOutcome:
    model = _model(args)
    sweep = parallel_map(lambda t: heat_trace(model, t, args.alpha, args.signed), list(_sweep_grid()))
    summary = {"model": model.to_dict(), "alpha": args.alpha, "signed": args.signed}
    if args.signed:
        values = [s.value for s in sweep]
        summary["spread"] = max(abs(v - values[0]) for v in values)
    return CommandOutcome(summary, [_sum_row(s) for s in sweep])


def _lefschetz_command(args: argparse.Namespace) -> CommandOutcome:
    tolerance = get_run_config().tolerance
    sums = [sphere_lefschetz(args.alpha, t, args.degree) for t in args.times]
    spread = max(abs(s.value - sums[0].value) for s in sums)
    fixed = sphere_fixed_point_sum(args.alpha, args.degree)
    gap = abs(sums[0].value - fixed.total)
    table = validate_sphere_table(twist=args.degree)
    return CommandOutcome({
        "alpha": args.alpha,
        "degree": args.degree,
        "spread": spread,
        "fixed_point_sum": fixed.to_dict(),
        "fixed_point_gap": gap,
        "table_check": asdict(table),
    }, [_sum_row(s) for s in sums], failed=spread > tolerance or gap > tolerance or not table.passed())


def _verify_command(args: argparse.Namespace) -> CommandOutcome:
    report = run_suite(args.suite, get_run_config())
    return CommandOutcome(report.to_dict(), report.rows(), failed=not report.passed)


# ==================== PARSER ====================

def _common_args() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--json", type=Path, default=None, help="Write the JSON summary here instead of stdout")
    parser.add_argument("--csv", default=None, help="Write sweep rows as CSV ('-' for stdout)")
    parser.add_argument("--verbose", action="store_true", help="DEBUG logging on stderr")
    parser.add_argument("--seed", type=int, default=None, help="Seed for randomized checks")
    parser.add_argument("--threads", type=int, default=None, help="Worker pool width")
    parser.add_argument("--tolerance", type=float, default=None)
    parser.add_argument("--quadrature-order", type=int, default=None)
    parser.add_argument("--truncation-cap", type=int, default=None, help="Default form-degree cap")
    parser.add_argument("--t-min", type=float, default=None)
    parser.add_argument("--t-max", type=float, default=None)
    parser.add_argument("--points", type=int, default=None, help="Points per t-grid")
    return parser


def _add_input_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", type=Path, required=True, help="JSON model description")


def _add_model_args(parser: argparse.ArgumentParser, models: Sequence[str]) -> None:
    parser.add_argument("--model", choices=list(models), default=models[0])
    parser.add_argument("--a", type=float, default=0.0, help="Twist (first circle factor on the torus)")
    parser.add_argument("--a2", type=float, default=0.0, help="Second torus twist")
    parser.add_argument("--degree", type=int, default=0, help="Degree of the line bundle twisting the sphere")
    parser.add_argument("--alpha", type=float, default=None, help="Rotation angle for equivariant traces")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Local index theorem engine: forms, kernels, spectral checks.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_args()

    for name, func, help_text in (
        ("ahat", _ahat_command, "Â-genus of a block curvature matrix"),
        ("nuphi", _nuphi_command, "Equivariant normal factor ν_φ"),
        ("mehler", _mehler_command, "Mehler kernel values against the grid oracle"),
        ("parametrix", _parametrix_command, "Volterra parametrix symbol of ∂_t + P"),
        ("heatcoeffs", _heatcoeffs_command, "Heat coefficients a_0..a_l on the diagonal"),
        ("jlo", _jlo_command, "JLO cochain of a finite superconnection"),
        ("etaform", _etaform_command, "Eta form of a finite superconnection"),
    ):
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        _add_input_args(sub)
        sub.set_defaults(func=func)

    eta = subparsers.add_parser("eta", parents=[common], help="Eta invariant with integrand sweep and fits")
    _add_model_args(eta, ("circle",) + tuple(m for m in MODEL_BUILDERS if m != "circle"))
    eta.set_defaults(func=_eta_command)

    heat = subparsers.add_parser("heattrace", parents=[common], help="Heat or equivariant supertrace sweep")
    _add_model_args(heat, tuple(MODEL_BUILDERS))
    heat.add_argument("--signed", action="store_true", help="Supertrace over the chirality grading")
    heat.set_defaults(func=_heattrace_command)

    lef = subparsers.add_parser("lefschetz", parents=[common], help="Sphere Lefschetz number against fixed points")
    lef.add_argument("--alpha", type=float, default=math.pi / 2)
    lef.add_argument("--times", type=float, nargs="+", default=[0.3, 1.0, 3.0])
    lef.add_argument("--degree", type=int, default=0, help="Degree of the twisting line bundle")
    lef.set_defaults(func=_lefschetz_command)

    verify = subparsers.add_parser("verify", parents=[common], help="Run the acceptance checks")
    verify.add_argument("--suite", choices=("all",) + tuple(SUITES), default="all")
    verify.set_defaults(func=_verify_command)
    return parser


def build_config(args: argparse.Namespace) -> RunConfig:
    return RunConfig.from_env(
        threads=args.threads,
        seed=args.seed,
        tolerance=args.tolerance,
        quadrature_order=args.quadrature_order,
        truncation_cap=args.truncation_cap,
        t_min=args.t_min,
        t_max=args.t_max,
        grid_points=args.points,
    )


# ==================== OUTPUT ====================

def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(logging.DEBUG if verbose else logging.WARNING)


def dump_json(payload: Dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=str)


def write_rows(rows: List[Dict], target: str) -> None:
    columns = list(rows[0]) if rows else list(SWEEP_COLUMNS)
    if target == "-":
        writer = csv.DictWriter(sys.stdout, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return
    with open(target, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    try:
        config = set_run_config(build_config(args))
        outcome = args.func(args)
    except (ValidationError, json.JSONDecodeError, ValueError, OSError) as e:
        print(f"[CLI] {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE

    status = EXIT_FAIL if outcome.failed else EXIT_OK
    summary = {
        "command": args.command,
        "config": config.model_dump(),
        "status": "FAIL" if outcome.failed else "PASS",
        **outcome.summary,
    }
    try:
        if args.csv is not None:
            write_rows(outcome.rows, args.csv)
        if args.json is not None:
            args.json.write_text(dump_json(summary) + "\n", encoding="utf-8")
        elif args.csv != "-":
            print(dump_json(summary))
    except OSError as e:
        print(f"[CLI] {args.command}: cannot write output: {e}", file=sys.stderr)
        return EXIT_USAGE

    if outcome.failed:
        logger.warning("[CLI] %s reported a failing check", args.command)
    return status


if __name__ == "__main__":
    sys.exit(main())
