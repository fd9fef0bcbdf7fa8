import json
import math

import pytest

from run_config import RunConfig
from verification import (
    CHECKS,
    SUITES,
    Check,
    CheckStatus,
    Measurement,
    VerificationReport,
    checks_for,
    run_check,
    run_suite,
)


@pytest.fixture(scope="module")
def config():
    return RunConfig(seed=5)


def test_check_ids_are_unique():
    ids = [c.check_id for c in CHECKS]
    assert len(ids) == 14
    assert len(set(ids)) == len(ids)


def test_every_suite_has_checks():
    assert {c.suite for c in CHECKS} == set(SUITES)
    assert all(c.anchor for c in CHECKS)


def test_checks_for_filters_by_suite():
    assert checks_for("all") == CHECKS
    assert [c.check_id for c in checks_for("graded_algebra")] == ["supertrace-identities", "odd-trace-identities"]
    with pytest.raises(ValueError):
        checks_for("plotting")


def test_measurement_status():
    assert Measurement(1.0, 1.0, 0.0).status() == CheckStatus.PASS
    assert Measurement(1.1, 1.0, 0.05).status() == CheckStatus.FAIL
    assert Measurement(5.0, 0.0, 0.0, passed=True).status() == CheckStatus.PASS


def test_raising_check_becomes_fail_row(config):
    def broken(_config):
        raise ZeroDivisionError("boom")

    result = run_check(Check("broken", "graded_algebra", "anchor text", broken), config)
    assert result.status == CheckStatus.FAIL
    assert math.isnan(result.measured)
    assert result.detail["error"] == "ZeroDivisionError: boom"
    assert result.to_dict()["anchor"] == "anchor text"


def test_failing_row_keeps_measurement(config):
    item = Check("off", "char_forms", "off by one", lambda _config: Measurement(2.0, 1.0, 0.5))
    row = run_check(item, config).to_dict()
    assert row["status"] == "FAIL"
    assert row["measured"] == 2.0
    assert row["anchor"] == "off by one"


def test_report_summary():
    report = VerificationReport("all", {"seed": 0})
    assert report.passed
    assert report.counts() == {"PASS": 0, "FAIL": 0, "SKIP": 0}
    payload = json.loads(report.to_json())
    assert payload["suite"] == "all"
    assert payload["results"] == []


def test_graded_algebra_suite_passes(config):
    report = run_suite("graded_algebra", config)
    assert report.passed
    assert report.counts()["PASS"] == 2
    assert report.config["seed"] == 5
    assert all("detail" not in row for row in report.rows())


@pytest.mark.slow
def test_spectral_suite_passes(config):
    report = run_suite("spectral_models", config)
    failing = [r.to_dict() for r in report.results if r.status == CheckStatus.FAIL]
    assert failing == []


@pytest.mark.slow
def test_full_suite_passes(config):
    report = run_suite("all", config)
    failing = [(r.check_id, r.detail) for r in report.results if r.status == CheckStatus.FAIL]
    assert failing == []
    assert len(report.results) == len(CHECKS)
