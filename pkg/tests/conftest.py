import numpy as np
import pytest

from pmefault.modal import ModalModel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def single_mode(freq_hz=400.0, zeta=0.01, prod=1.0):
    """One-mode model on one location with ``phi*phi = prod``."""
    return ModalModel([freq_hz], [zeta], [[np.sqrt(prod)]])


def random_model(rng, n_modes=3, n_locations=4, zeta=None, lo=380.0, hi=4400.0):
    freqs = np.sort(rng.uniform(lo, hi, n_modes))
    while np.any(np.diff(freqs) <= 5.0):
        freqs = np.sort(rng.uniform(lo, hi, n_modes))
    z = np.full(n_modes, zeta) if zeta is not None else rng.uniform(0.005, 0.02, n_modes)
    shapes = rng.normal(size=(n_modes, n_locations))
    return ModalModel(freqs, z, shapes)


# --- acceptance summary: one pass/fail line per criterion -------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False})
    if call.when == "call":
        entry["ran"] = True
    if call.excinfo is not None:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {e['title']}")
