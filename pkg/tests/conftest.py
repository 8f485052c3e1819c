from types import SimpleNamespace

import numpy as np
import pytest

from trippurpose.staypoints import extract_staypoints
from trippurpose.synthetic import SyntheticConfig, generate_synthetic, survey_reference


@pytest.fixture(scope="session")
def small_corpus():
    """Forty agents over two weeks plus a survey reference drawn from an
    independent sample of the same simulated population."""
    pings, pois, truth = generate_synthetic(SyntheticConfig(n_agents=40), seed=3)
    _, _, survey = generate_synthetic(SyntheticConfig(n_agents=400), seed=4, emit_pings=False)
    ref = survey_reference(survey)
    sp = extract_staypoints(pings)
    return SimpleNamespace(pings=pings, pois=pois, truth=truth, ref=ref, sp=sp)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False, "details": []})
    if rep.when == "call":
        entry["ran"] = True
        entry["details"] += [f"{k}={v}" for k, v in item.user_properties]
    if rep.failed or rep.skipped:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        detail = "; ".join(e["details"])
        terminalreporter.write_line(f"{status} criterion {number}: {e['title']}" + (f" ({detail})" if detail else ""))
