from functools import lru_cache

import numpy as np
import pytest
from hypothesis import settings

from nrhc.config import bundled_scenario, parse_config, to_sim_config, with_override
from nrhc.dynamics import PayloadPerturbation, RobotParams, apply_payload
from nrhc.sim import DivergenceError, run_scenario

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

PAYLOAD = PayloadPerturbation(5.0, 0.5, 1.0 / 6.0)


@pytest.fixture
def benchmark_arm():
    return RobotParams.benchmark_arm()


@pytest.fixture
def heavy():
    return apply_payload(RobotParams.benchmark_arm(), PAYLOAD)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scenario(name: str, **overrides):
    cfg = parse_config(bundled_scenario(name))
    for k, v in overrides.items():
        cfg = with_override(cfg, k.replace("__", "."), v)
    return cfg


@lru_cache(maxsize=None)
def _cached(name: str, items: tuple):
    cfg = scenario(name, **dict(items))
    try:
        return run_scenario(to_sim_config(cfg))
    except DivergenceError as exc:
        return exc


def simulate(name: str, **overrides):
    """Run a shipped scenario once per session; returns a log or a DivergenceError."""
    return _cached(name, tuple(sorted(overrides.items())))


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
