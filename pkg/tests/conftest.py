import numpy as np
import pytest

from vecpr.harness import generate_phase, simulate_stack
from vecpr.optics import build_aperture, diversity_stack


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ap8():
    return build_aperture(8, 0.95)


@pytest.fixture(scope="session")
def ap16():
    return build_aperture(16, 0.95)


@pytest.fixture(scope="session")
def ap32():
    return build_aperture(32, 0.95)


@pytest.fixture(scope="session")
def problem16(ap16):
    """Noiseless consistent problem on a 16 x 16 grid with m = 3."""
    phase = generate_phase(ap16, seed=3)
    div, _ = diversity_stack(ap16, 3)
    return ap16, phase, simulate_stack(ap16, phase, div)


# -- acceptance bookkeeping ------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Record ``(passed, detail)`` per criterion; printed in the terminal summary."""
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


def table2_config(**kw):
    from vecpr.harness import ExperimentConfig

    # desk-scale geometry: see README "Benchmark geometry"
    base = dict(n=64, m=7, na=0.95, snr_db=30.0, noise="gaussian", realizations=10, fill=0.25, seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def table2_report():
    import time

    from vecpr.harness import run_benchmark

    t0 = time.perf_counter()
    report = run_benchmark(table2_config())
    report.elapsed = time.perf_counter() - t0
    return report
