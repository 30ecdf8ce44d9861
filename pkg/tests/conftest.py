import numpy as np
import pytest

from dmdc_bounds import (DiffusionConfig, TruthModel, build_system, collect_snapshots, extract_truth,
                         generate_prbs)


def scalar_data(a=0.9, b=1.0, m=50, seed=0):
    """Snapshots of x' = a x + b u under PRBS input, started from 1."""
    u = generate_prbs(1, m, seed=seed)
    return collect_snapshots(lambda x, v: a * x + b * v, np.array([1.0]), u, m)


def random_stable(n, q, rho=0.8, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A *= rho / max(abs(np.linalg.eigvals(A)))
    return TruthModel(A, rng.standard_normal((n, q)))


def lti_bursts(truth, columns, burst_len=2, seed=0):
    from dmdc_bounds import collect_bursts
    rng = np.random.default_rng(seed)
    n_bursts = -(-columns // burst_len)
    x0s = rng.standard_normal((truth.n, n_bursts))
    u = generate_prbs(truth.q, n_bursts * burst_len, seed=seed)
    return collect_bursts(lambda x, v: truth.A @ x + truth.B @ v, x0s, u, burst_len)


@pytest.fixture(scope="session")
def desk_system():
    return build_system(DiffusionConfig.desk())


@pytest.fixture(scope="session")
def desk_truth(desk_system):
    return extract_truth(desk_system)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
