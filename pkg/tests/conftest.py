from pathlib import Path

import pytest

from tkgreason.store import Vocab, load_graph_dir, write_graph_dir

HAND_FACTS = [("A", "r", "B", "1"), ("A", "r", "C", "2"), ("B", "r", "C", "2")]


def write_hand_graph(directory: Path, split_facts=None) -> Path:
    """Three-fact store over entities A, B, C and timestamps 1, 2, 3 (3 unused by facts)."""
    split_facts = split_facts or {"train": HAND_FACTS}
    write_graph_dir(directory, split_facts)
    Vocab(["A", "B", "C"]).write(directory / "entities.dict")
    Vocab(["r"]).write(directory / "relations.dict")
    Vocab(["1", "2", "3"]).write(directory / "timestamps.dict")
    return directory


@pytest.fixture
def hand_dir(tmp_path):
    return write_hand_graph(tmp_path / "hand")


@pytest.fixture
def hand_store(hand_dir):
    return load_graph_dir(hand_dir)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
