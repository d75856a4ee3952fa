from pathlib import Path

import numpy as np
import pytest

from metric_spectra.graph import MetricGraph, interval_graph, star_graph

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_interval():
    return interval_graph(1.0)


@pytest.fixture
def star3():
    return star_graph([1.0, 1.0, 1.0])


@pytest.fixture
def theta():
    # two parallel edges u-v plus a pendant edge
    return MetricGraph.from_edges([("e1", "u", "v", 1.0), ("e2", "u", "v", 2.0), ("e3", "v", "w", 0.5)])


@pytest.fixture
def configs():
    return CONFIGS


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Print and record one PASS/FAIL line, then assert."""

    def record(criterion: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion:2d}: {detail}"
        print(line)
        _VERDICTS.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
