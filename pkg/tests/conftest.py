import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def data_dir() -> Path:
    return DATA


def write_tsv(path: Path, rows, header=("id", "text", "misogynous", "shaming", "stereotype", "objectification", "violence")):
    lines = ["\t".join(header)] + ["\t".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# one PASS/FAIL line per acceptance criterion in the terminal summary
_ACCEPTANCE: dict[str, bool] = {}


def _criterion(nodeid: str) -> str | None:
    if "test_acceptance.py::test_c" not in nodeid:
        return None
    name = nodeid.split("::test_c", 1)[1]
    number, _, rest = name.partition("_")
    return f"criterion {int(number):2d} ({rest.split('[')[0].replace('_', ' ')})"


def pytest_runtest_logreport(report):
    key = _criterion(report.nodeid)
    if key is None:
        return
    ok = _ACCEPTANCE.get(key, True)
    if report.failed or (report.when == "call" and report.skipped):
        ok = False
    _ACCEPTANCE[key] = ok


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[1])):
        terminalreporter.write_line(f"{'PASS' if _ACCEPTANCE[key] else 'FAIL'}  {key}")
