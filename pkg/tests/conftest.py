import numpy as np
import pytest

from ddsmpc.controller import synthesize
from ddsmpc.harness import CampaignConfig
from ddsmpc.plant import collect_data


def build_artifact(eb, seed=0, **overrides):
    cfg = CampaignConfig(noise_bounds=[eb], **overrides)
    plant = cfg.plant(eb)
    data = collect_data(plant, cfg.data_length, cfg.horizon, np.random.default_rng(seed),
                        input_set=cfg.input_set())
    return cfg, plant, data, synthesize(data, cfg.controller_config(plant.noise, seed + 1))


@pytest.fixture(scope="session")
def zero_setup():
    """Preset configuration at zero noise: ``(cfg, plant, data, artifact)``."""
    return build_artifact(0.0)


@pytest.fixture(scope="session")
def small_noisy_setup():
    """Noise bound 0.002 with a reduced sample count to keep unit tests quick."""
    return build_artifact(0.002, seed=3, num_samples=200, saa_count=2000)


# one PASS/FAIL line per acceptance criterion at the end of the run

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed and not rep.skipped):
        return
    k = mark.args[0]
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    entry = _CRITERIA.setdefault(k, {})
    if rep.when == "call" or status != "PASS":
        entry[item.name] = (status, getattr(item, "acceptance_detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        tests = _CRITERIA[k]
        statuses = [s for s, _ in tests.values()]
        overall = "FAIL" if "FAIL" in statuses else ("SKIP" if "SKIP" in statuses else "PASS")
        details = "; ".join(d for _, d in tests.values() if d)
        terminalreporter.write_line(f"criterion {k:2d}: {overall}  {details}")
        for name, (s, d) in tests.items():
            if s != "PASS":
                terminalreporter.write_line(f"    {s} {name}")
