import numpy as np
import pytest

from ltvlab.dataset import GeneratorConfig, generate_synthetic
from ltvlab.labeling import LabelConfig, label_samples


@pytest.fixture(scope="session")
def small_config():
    return GeneratorConfig(n_samples=4000, n_days=6, seed=7, payer_rate=0.2, feature_dim=6)


@pytest.fixture(scope="session")
def small_samples(small_config):
    return label_samples(generate_synthetic(small_config), LabelConfig(24.0, small_config.price_catalog))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion."""
    lines = request.config._acceptance_lines

    def record(criterion: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
