import numpy as np
import pytest


def crossed_design(rng, v, r, n):
    """One-hot (Z, W) for n distinct cells drawn from a v x r grid."""
    cells = rng.choice(v * r, size=n, replace=False)
    Z = np.zeros((n, v))
    W = np.zeros((n, r))
    Z[np.arange(n), cells // r] = 1.0
    W[np.arange(n), cells % r] = 1.0
    return Z, W


def max_abs(M):
    M = np.asarray(M)
    return float(np.max(np.abs(M))) if M.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# criterion number -> (passed, detail), filled in by test_acceptance
ACCEPTANCE: dict = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
