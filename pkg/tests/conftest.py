from pathlib import Path

import pytest

from tempoaudio.bank import build_bank, builtin_classes, default_synth_specs
from tempoaudio.simulate import SimConfig, simulate_dataset

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "notes": []})
    if report.failed or report.skipped:
        entry["ok"] = False
    if report.when == "call":
        entry["notes"] += [f"{k}={v}" for k, v in report.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        notes = f" ({', '.join(e['notes'])})" if e["notes"] else ""
        terminalreporter.write_line(f"CRITERION {n} {'PASS' if e['ok'] else 'FAIL'}: {e['title']}{notes}")


@pytest.fixture(scope="session")
def classes():
    return builtin_classes()


@pytest.fixture(scope="session")
def bank(classes):
    return build_bank(default_synth_specs(classes, 5, 0), classes)


@pytest.fixture(scope="session")
def desk_dataset(bank, tmp_path_factory) -> Path:
    """The default desk dataset: 500 train, 40 single-event and 20 multi-event test clips."""
    out = tmp_path_factory.mktemp("desk")
    simulate_dataset(bank, SimConfig(master_seed=0), out)
    return out


@pytest.fixture(scope="session")
def desk_encoded(desk_dataset, classes):
    from tempoaudio.diffusion import encode_records
    from tempoaudio.simulate import read_manifest

    return encode_records(read_manifest(desk_dataset / "train.jsonl"), desk_dataset, classes)
