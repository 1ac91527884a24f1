"""Shared fixtures plus the acceptance-criteria result hook.

Tests marked ``@pytest.mark.criterion("C<n>", "<title>")`` get one
PASS/FAIL/SKIP line each in a terminal section after the run, so the
acceptance status is readable at a glance even in a long -v log.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from tarspot import cli
from tarspot.synth import SynthConfig, generate_leaf

_CRITERIA: dict[str, tuple[str, str, str]] = {}  # id -> (title, status, note)


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(id, title): acceptance criterion this test demonstrates"
    )


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        cid, title = marker.args
        note = getattr(item, "_criterion_note", "")
        if report.when == "call":
            status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
            _CRITERIA[cid] = (title, status, note)
        elif report.when == "setup" and not report.passed:
            status = "SKIP" if report.skipped else "FAIL"
            _CRITERIA[cid] = (title, status, note or f"setup {report.outcome}")
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA):
        title, status, note = _CRITERIA[cid]
        line = f"{status}  [{cid}] {title}"
        if note:
            line += f"  ({note})"
        terminalreporter.write_line(line)


@pytest.fixture
def criterion_note(request):
    """Attach a measurement note to the criterion summary line."""

    def set_note(text: str) -> None:
        request.node._criterion_note = text

    return set_note


# ---------------------------------------------------------------------------
# shared data fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def small_cfg() -> SynthConfig:
    """Quick-to-render leaf geometry for unit tests."""
    return SynthConfig(width=900, height=600, spot_count_range=(8, 20))


@pytest.fixture(scope="session")
def small_leaf(small_cfg):
    """(image, truth instances) pair rendered once per session."""
    return generate_leaf(small_cfg, np.random.default_rng(42))


@pytest.fixture
def run_cli(capsys):
    """Invoke the CLI in-process; returns (exit_code, events, stderr_text)."""

    def run(*argv):
        code = cli.main([str(a) for a in argv])
        cap = capsys.readouterr()
        events = [json.loads(line) for line in cap.out.splitlines() if line.strip()]
        return code, events, cap.err

    return run
