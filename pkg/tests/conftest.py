import pytest

from spendmax import solve, validate_params

BASE = {"r": 0.05, "mu": 0.1, "sigma": 0.25, "beta": 1.0, "lambda": 0.5}


def make(**changes):
    raw = dict(BASE)
    raw.update(changes)
    params = validate_params(raw)
    if params.rho != params.r:
        return solve(params, allow_rho_general=True, convexity_probe=(1.0, 5.0))
    return solve(params)


@pytest.fixture(scope="session")
def base():
    return make()


@pytest.fixture(scope="session")
def lam0():
    return make(**{"lambda": 0.0})


@pytest.fixture(scope="session")
def lam1():
    return make(**{"lambda": 1.0})


@pytest.fixture(scope="session")
def rho06():
    return make(rho=0.06)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (title, bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n:2d}. {title}: {detail}")
