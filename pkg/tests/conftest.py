import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qtherm import spectral
from qtherm.model import ReservoirSpec, SystemSpec, TimeGrid

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

OMEGA_C = 10.0
ETA_C = 1.0 / OMEGA_C


def ohmic_mode(eta_ratio, T0=0.0, omega_max=None):
    """Unit-frequency mode coupled to an Ohmic bath at ``eta = eta_ratio * eta_c``."""
    sd = spectral.Ohmic(eta_ratio * ETA_C, OMEGA_C, omega_max)
    return SystemSpec("bose", [1.0]), [ReservoirSpec(sd, "bose", T0)]


def set_leads(gamma, T=(3.0, 0.1), mu=(5.0, 2.0), d=10.0):
    """Two-level dot between two Lorentzian leads of total width `gamma`."""
    system = SystemSpec("fermi", [1.0, 3.0])
    leads = [ReservoirSpec(spectral.Lorentzian(gamma / 2, d), "fermi", T[i], mu[i]) for i in range(2)]
    return system, leads


@pytest.fixture
def grid_short():
    return TimeGrid.from_horizon(0.01, 5.0)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per numbered criterion

ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None or rep.when != "call":
        return
    entry = ACCEPTANCE.setdefault(m.args[0], {"title": m.args[1], "details": []})
    entry["passed"] = rep.passed
    if rep.failed and not entry["details"]:
        entry["details"].append(str(call.excinfo.value).splitlines()[0] if call.excinfo else "failed")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        e = ACCEPTANCE[n]
        status = "PASS" if e.get("passed") else "FAIL"
        terminalreporter.write_line(f"{status} criterion {n:2d}: {e['title']} [{'; '.join(e['details'])}]")


class Checks:
    """Collects sub-checks of one criterion so every value is reported
    before the test asserts."""

    def __init__(self, entry):
        self.entry = entry
        self.failed = []

    def _add(self, ok, text):
        self.entry["details"].append(text)
        if not ok:
            self.failed.append(text)

    def below(self, name, value, tol):
        ok = bool(value < tol)
        self._add(ok, f"{name}={value:.3g} {'<' if ok else '>='} {tol:g}")

    def above(self, name, value, tol):
        ok = bool(value > tol)
        self._add(ok, f"{name}={value:.3g} {'>' if ok else '<='} {tol:g}")

    def true(self, name, ok, info=""):
        self._add(bool(ok), f"{name}: {'yes' if ok else 'no'}{' ' + info if info else ''}")

    def done(self):
        assert not self.failed, "; ".join(self.failed)


@pytest.fixture
def checks(request):
    m = request.node.get_closest_marker("criterion")
    entry = ACCEPTANCE.setdefault(m.args[0], {"title": m.args[1], "details": []})
    entry["details"].clear()
    return Checks(entry)
