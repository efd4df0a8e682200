"""Shared fixtures: forged corpora at three scales plus a corpus factory.

Corpora are forged once per session. The acceptance suite prints one
PASS/FAIL line per criterion in the terminal summary.
"""

from __future__ import annotations

import csv
from pathlib import Path

import pytest

from ehrfuse.forge import DEFAULT_EVENT_RATES, ForgeConfig, forge_corpus
from ehrfuse.ingest import load_snapshot
from ehrfuse.schema import DEFAULT_REGISTRY

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): names an acceptance criterion for the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call":
        _ACCEPTANCE_RESULTS.append(
            (marker.args[0], "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{outcome}  {name}")


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    manifest = forge_corpus(ForgeConfig(seed=3, n_subjects=8), root)
    return root, manifest


@pytest.fixture(scope="session")
def tiny_snapshot(tiny_corpus):
    root, _ = tiny_corpus
    return load_snapshot(root)


@pytest.fixture(scope="session")
def corpus200(tmp_path_factory):
    root = tmp_path_factory.mktemp("c200")
    manifest = forge_corpus(ForgeConfig(seed=7, n_subjects=200), root)
    return root, manifest


@pytest.fixture(scope="session")
def corpus200_snapshot(corpus200):
    root, _ = corpus200
    return load_snapshot(root)


@pytest.fixture(scope="session")
def dense_corpus(tmp_path_factory):
    # tuned for volume: >10k notes and >10k medication events
    rates = dict(DEFAULT_EVENT_RATES)
    rates.update({"lab": 3.0, "rr": 2.0, "cxr": 1.0, "med": 8.0, "proc": 1.5,
                  "ecg": 0.5, "waveform": 0.3, "echo": 0.1})
    root = tmp_path_factory.mktemp("dense")
    manifest = forge_corpus(
        ForgeConfig(seed=13, n_subjects=400, event_rates=rates,
                    write_asset_placeholders=False), root)
    return root, manifest


@pytest.fixture(scope="session")
def dense_snapshot(dense_corpus):
    root, _ = dense_corpus
    return load_snapshot(root)


def write_corpus(root: Path, rows_by_table: dict[str, list[list]]) -> Path:
    """Handcrafted corpus: given rows per table, writes every required
    table (header-only when absent) plus any optional tables supplied."""
    root.mkdir(parents=True, exist_ok=True)
    names = set(DEFAULT_REGISTRY.required_tables) | set(rows_by_table)
    for name in names:
        spec = DEFAULT_REGISTRY.table(name)
        with open(root / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(spec.column_names)
            for row in rows_by_table.get(name, []):
                writer.writerow(row)
    return root


@pytest.fixture
def make_corpus(tmp_path):
    def factory(rows_by_table: dict[str, list[list]], name: str = "corpus") -> Path:
        return write_corpus(tmp_path / name, rows_by_table)
    return factory
