import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> Path:
    from insider_ssm.synth import ScenarioSpec, generate

    out = tmp_path_factory.mktemp("corpus")
    generate(ScenarioSpec(n_users=12, days=20, anomaly_frac=0.25, seed=3), out)
    return out


@pytest.fixture(scope="session")
def small_sessions(small_corpus):
    from insider_ssm.features import featurize_all
    from insider_ssm.logs import load_corpus, sessionize

    return featurize_all(sessionize(load_corpus(small_corpus).events))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS  # populated only when the acceptance module ran

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
