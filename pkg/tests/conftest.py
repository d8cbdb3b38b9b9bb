import numpy as np
import pytest

from closedloop.qsim import SpinSystem, basis_state, bell_target


def taylor_expm(a, tol=1e-18, max_terms=400):
    """exp(a) by the power series, summed until terms drop below ``tol``."""
    a = np.asarray(a, dtype=np.complex128)
    out = np.eye(a.shape[0], dtype=np.complex128)
    term = out.copy()
    for k in range(1, max_terms):
        term = term @ a / k
        out = out + term
        if np.abs(term).max() < tol:
            break
    return out


def random_hermitian(rng, d=4, scale=1.0):
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (x + x.conj().T) / 2


def random_density(rng, d=4, pure=False):
    if pure:
        psi = rng.normal(size=d) + 1j * rng.normal(size=d)
        psi /= np.linalg.norm(psi)
        return np.outer(psi, psi.conj())
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = x @ x.conj().T
    return rho / np.trace(rho)


@pytest.fixture
def bell_system():
    return SpinSystem(2, ((1, 2, 214.5),), 5e-3, 10)


@pytest.fixture
def rho00():
    return basis_state([0, 0])


@pytest.fixture
def bell():
    return bell_target()


@pytest.fixture
def rng():
    return np.random.default_rng(20201017)


ACCEPTANCE_LINES = {}


def report(criterion: int, ok: bool, detail: str):
    """Record and print one acceptance line; returns ``ok`` for the assert."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
