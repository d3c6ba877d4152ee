import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("tvic", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("tvic")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def impulse_case():
    """64x64 phantom with 5% salt & pepper and Gaussian noise, solved once by TV-IC L1-L2."""
    from tvic.noise import NoiseSpec, corrupt
    from tvic.phantom import phantom
    from tvic.solvers import SolverConfig, ssn_l1l2

    truth = phantom(64)
    f, mask = corrupt(truth, NoiseSpec(sp_density=0.05, gauss_var=0.005, seed=1))
    res = ssn_l1l2(f, SolverConfig(max_iter=100).with_weights(80, 800))
    return f, truth, mask, res


# -- acceptance report: one line per criterion, printed after the run ---------

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, title, ok, detail)`` records one part of acceptance criterion ``n``."""
    store = request.config.stash[_ACCEPTANCE]

    def record(n, title, ok, detail=""):
        entry = store.setdefault(n, {"title": title, "parts": []})
        entry["parts"].append((bool(ok), detail))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        e = store[n]
        ok = all(p[0] for p in e["parts"])
        detail = "; ".join(d for _, d in e["parts"] if d)
        terminalreporter.write_line(f"C{n:02d} {'PASS' if ok else 'FAIL'}  {e['title']}: {detail}")
