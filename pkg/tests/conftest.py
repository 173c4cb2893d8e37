import numpy as np
import pytest

from estfun.core import CompactBox, Dataset, EstimatingFunction, ScalingMatrix


def deterministic_function(fn, dfn=None, lower=(-10.0,), upper=(10.0,), space=None, name="toy"):
    """Wrap theta -> fn(theta) as a data-free EstimatingFunction."""
    p = len(lower) if space is None else space.dim
    jac = None if dfn is None else (lambda t, d: np.atleast_2d(dfn(t)))
    return EstimatingFunction(
        name=name,
        dim_param=p,
        lag=1,
        summands=lambda t, d: np.atleast_1d(np.asarray(fn(t), dtype=float)).reshape(1, -1),
        normalizer=lambda d: 1.0,
        domain=space or CompactBox(list(lower), list(upper)),
        scaling=ScalingMatrix.sqrt_n(p),
        jac_sum=jac,
    )


EMPTY = Dataset(np.zeros(2))


@pytest.fixture
def toy():
    return deterministic_function


@pytest.fixture
def empty_data():
    return EMPTY


_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """record(criterion, passed, detail): collected and printed as one line per criterion."""
    store = request.config.stash[_ACCEPTANCE]

    def record(criterion, passed, detail):
        store[criterion] = (bool(passed), detail)
        line = f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
        print(line)
        return line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(store):
        passed, detail = store[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}: {detail}")
