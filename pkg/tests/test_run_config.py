import logging
import threading

import pytest
from pydantic import ValidationError

import run_config
from run_config import RunConfig, get_run_config, parallel_map, set_run_config


@pytest.fixture(autouse=True)
def fresh_config(monkeypatch):
    monkeypatch.setattr(run_config, "_run_config", None)
    monkeypatch.delenv(run_config.THREADS_ENV, raising=False)
    monkeypatch.delenv(run_config.SEED_ENV, raising=False)


def test_defaults():
    config = RunConfig.from_env()
    assert config.threads == 1
    assert config.seed == 0
    assert config.quadrature_order == 16


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv(run_config.THREADS_ENV, "4")
    monkeypatch.setenv(run_config.SEED_ENV, "17")
    config = RunConfig.from_env()
    assert (config.threads, config.seed) == (4, 17)


def test_explicit_overrides_win(monkeypatch):
    monkeypatch.setenv(run_config.SEED_ENV, "17")
    config = RunConfig.from_env(seed=3, tolerance=None)
    assert config.seed == 3
    assert config.tolerance == 1e-8


def test_bad_environment_value_is_ignored(monkeypatch, caplog):
    monkeypatch.setenv(run_config.THREADS_ENV, "many")
    with caplog.at_level(logging.WARNING, logger="run_config"):
        assert RunConfig.from_env().threads == 1
    record = next(r for r in caplog.records if r.msg.startswith("[Config]"))
    assert record.args == (run_config.THREADS_ENV, "many")
    assert "'many'" in record.getMessage()


def test_config_is_frozen_and_strict():
    config = RunConfig()
    with pytest.raises(ValidationError):
        config.threads = 8
    with pytest.raises(ValidationError):
        RunConfig(colour="red")
    with pytest.raises(ValidationError):
        RunConfig(grid_points=2)


def test_singleton_is_lazy_and_replaceable():
    first = get_run_config()
    assert get_run_config() is first
    installed = set_run_config(RunConfig(threads=2))
    assert get_run_config() is installed


@pytest.mark.parametrize("workers", [1, 4])
def test_parallel_map_keeps_order(workers):
    assert parallel_map(lambda x: x * x, list(range(20)), workers) == [x * x for x in range(20)]


def test_parallel_map_uses_pool():
    seen = set()

    def record(x):
        seen.add(threading.get_ident())
        return x

    set_run_config(RunConfig(threads=3))
    assert parallel_map(record, list(range(6))) == list(range(6))
    assert threading.get_ident() not in seen
