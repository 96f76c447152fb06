"""In-memory temporal quad store with cumulative train/valid/test layers.

Facts are ``(s, r, o, t)`` with dense integer ids. Every input fact also
contributes its inverse ``(o, r + n_relations, s, t)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
DICT_FILES = {
    "entity": "entities.dict",
    "relation": "relations.dict",
    "timestamp": "timestamps.dict",
}


class DictionaryError(ValueError):
    """A surface string could not be mapped to an id."""


class Vocab:
    """Bidirectional surface <-> id map with contiguous ids."""

    def __init__(self, surfaces: Iterable[str] = ()):
        self._to_id: dict[str, int] = {}
        self._to_str: list[str] = []
        for s in surfaces:
            self.add(s)

    def add(self, surface: str) -> int:
        idx = self._to_id.get(surface)
        if idx is None:
            idx = len(self._to_str)
            self._to_id[surface] = idx
            self._to_str.append(surface)
        return idx

    def id(self, surface: str) -> int:
        return self._to_id[surface]

    def get(self, surface: str):
        return self._to_id.get(surface)

    def surface(self, idx: int) -> str:
        return self._to_str[idx]

    def __contains__(self, surface) -> bool:
        return surface in self._to_id

    def __len__(self) -> int:
        return len(self._to_str)

    def __iter__(self):
        return iter(self._to_str)

    def write(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, s in enumerate(self._to_str):
                fh.write(f"{i}\t{s}\n")

    @classmethod
    def read(cls, path: Path) -> "Vocab":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    idx, surface = line.split("\t", 1)
                    pairs.append((int(idx), surface))
                except ValueError:
                    raise DictionaryError(f"{path}:{lineno}: expected 'id<TAB>surface', got {line!r}")
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise DictionaryError(f"{path}: ids are not contiguous 0..{len(pairs) - 1}")
        vocab = cls(s for _, s in pairs)
        if len(vocab) != len(pairs):
            raise DictionaryError(f"{path}: duplicate surface strings")
        return vocab


def _time_sort_key(surface: str):
    try:
        return (0, float(surface), surface)
    except ValueError:
        return (1, 0.0, surface)


class GraphLayer:
    """One cumulative fact layer (train, valid or test), indexed for projection."""

    def __init__(self, tag: str, quads: np.ndarray, n_entities: int, n_relations: int, n_timestamps: int):
        self.tag = tag
        self.quads = quads
        self.quads.setflags(write=False)
        self.n_entities = n_entities
        self.n_relations = n_relations  # includes inverse relations
        self.n_timestamps = n_timestamps

        srt: dict[tuple, list] = defaultdict(list)
        sro: dict[tuple, list] = defaultdict(list)
        by_rel: dict[int, dict[int, list]] = defaultdict(lambda: defaultdict(list))
        for s, r, o, t in quads.tolist():
            srt[(s, r, t)].append(o)
            sro[(s, r, o)].append(t)
            by_rel[r][s].append((o, t))
        self._srt = {k: tuple(sorted(v)) for k, v in srt.items()}
        self._sro = {k: tuple(sorted(v)) for k, v in sro.items()}
        self._by_rel = {r: dict(d) for r, d in by_rel.items()}

    def __len__(self) -> int:
        return len(self.quads)

    def __repr__(self) -> str:
        return f"GraphLayer({self.tag!r}, {len(self)} facts)"

    def project_entities(self, s: int, r: int, t: int) -> frozenset[int]:
        return frozenset(self._srt.get((s, r, t), ()))

    def project_times(self, s: int, r: int, o: int) -> frozenset[int]:
        return frozenset(self._sro.get((s, r, o), ()))

    def subjects(self, r: int) -> dict[int, list]:
        """Map subject -> [(o, t), ...] for relation ``r``."""
        return self._by_rel.get(r, {})

    def has_fact(self, s: int, r: int, o: int, t: int) -> bool:
        return t in self._sro.get((s, r, o), ())

    @cached_property
    def fact_set(self) -> frozenset[tuple[int, int, int, int]]:
        return frozenset(map(tuple, self.quads.tolist()))

    @cached_property
    def by_object(self) -> dict[int, np.ndarray]:
        return _group_rows(self.quads[:, 2])

    @cached_property
    def by_time(self) -> dict[int, np.ndarray]:
        return _group_rows(self.quads[:, 3])

    @cached_property
    def fact_times(self) -> np.ndarray:
        """Sorted distinct timestamps that carry at least one fact."""
        return np.unique(self.quads[:, 3])


def _group_rows(keys: np.ndarray) -> dict[int, np.ndarray]:
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    bounds = np.flatnonzero(np.diff(sorted_keys)) + 1
    groups = np.split(order, bounds)
    return {int(keys[g[0]]): g for g in groups if len(g)}


@dataclass
class TkgStore:
    entities: Vocab
    relations: Vocab  # base relations only; inverse of r is r + len(relations)
    timestamps: Vocab
    layers: dict[str, GraphLayer]
    stats: dict = field(default_factory=dict)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_base_relations(self) -> int:
        return len(self.relations)

    @property
    def n_relations(self) -> int:
        return 2 * len(self.relations)

    @property
    def n_timestamps(self) -> int:
        return len(self.timestamps)

    def layer(self, tag: str) -> GraphLayer:
        try:
            return self.layers[tag]
        except KeyError:
            raise KeyError(f"unknown layer {tag!r}; expected one of {SPLITS}") from None

    def inverse(self, r: int) -> int:
        n = self.n_base_relations
        return r + n if r < n else r - n

    def relation_surface(self, r: int) -> str:
        n = self.n_base_relations
        return self.relations.surface(r) if r < n else "inv:" + self.relations.surface(r - n)

    def relation_id(self, surface: str) -> int:
        if surface.startswith("inv:") and surface not in self.relations:
            return self.relations.id(surface[4:]) + self.n_base_relations
        return self.relations.id(surface)

    def save_dictionaries(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.entities.write(directory / DICT_FILES["entity"])
        self.relations.write(directory / DICT_FILES["relation"])
        self.timestamps.write(directory / DICT_FILES["timestamp"])


def _read_quads(path: Path):
    if path is None or not Path(path).exists():
        return []
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DictionaryError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            rows.append((lineno, parts))
    return rows


def fingerprint(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).name.encode())
        if p is not None and Path(p).exists():
            h.update(Path(p).read_bytes())
    return h.hexdigest()


def build_layers(id_splits: dict, n_entities: int, n_relations: int, n_timestamps: int):
    """Cumulative, inverse-augmented layers from per-split id quads.

    Returns ``(layers, stats)``; duplicate quads are dropped and counted.
    """
    stats = {"entities": n_entities, "relations": n_relations, "timestamps": n_timestamps}
    seen: set = set()
    cumulative: list[tuple] = []
    layers = {}
    for split in SPLITS:
        rows = id_splits.get(split, [])
        dupes = 0
        for quad in rows:
            s, r, o, t = quad
            if quad in seen:
                dupes += 1
                continue
            seen.add(quad)
            cumulative.append(quad)
            cumulative.append((o, r + n_relations, s, t))
        if dupes:
            log.info("%s: dropped %d duplicate quads", split, dupes)
        arr = np.array(cumulative, dtype=np.int64).reshape(-1, 4)
        layers[split] = GraphLayer(split, arr, n_entities, 2 * n_relations, n_timestamps)
        stats[f"{split}_lines"] = len(rows)
        stats[f"{split}_duplicates"] = dupes
        stats[f"{split}_layer_quads"] = len(arr)
    return layers, stats


def from_quads(id_splits: dict, n_entities: int, n_relations: int, n_timestamps: int) -> TkgStore:
    """Store over integer quads; surface strings are the decimal ids."""
    layers, stats = build_layers(id_splits, n_entities, n_relations, n_timestamps)
    stats["total_lines"] = sum(stats[f"{s}_lines"] for s in SPLITS)
    vocab = lambda n: Vocab(str(i) for i in range(n))  # noqa: E731
    return TkgStore(vocab(n_entities), vocab(n_relations), vocab(n_timestamps), layers, stats)


def load_graph(train_path, valid_path=None, test_path=None, dict_dir=None) -> TkgStore:
    """Load tab-separated quad files into a layered, inverse-augmented store.

    With ``dict_dir`` containing ``entities.dict``, ``relations.dict`` and
    ``timestamps.dict``, every surface string must appear in them. Without
    it, entity and relation ids follow first occurrence across the splits
    and timestamps are sorted (numerically when possible) so id order is
    chronological.
    """
    paths = {"train": train_path, "valid": valid_path, "test": test_path}
    raw = {split: _read_quads(paths[split]) for split in SPLITS}

    dict_dir = Path(dict_dir) if dict_dir is not None else None
    have_dicts = dict_dir is not None and all((dict_dir / f).exists() for f in DICT_FILES.values())
    if have_dicts:
        ents = Vocab.read(dict_dir / DICT_FILES["entity"])
        rels = Vocab.read(dict_dir / DICT_FILES["relation"])
        times = Vocab.read(dict_dir / DICT_FILES["timestamp"])
    else:
        ents, rels = Vocab(), Vocab()
        time_surfaces = set()
        for split in SPLITS:
            for _, (h, r, o, t) in raw[split]:
                ents.add(h)
                rels.add(r)
                ents.add(o)
                time_surfaces.add(t)
        times = Vocab(sorted(time_surfaces, key=_time_sort_key))

    id_splits = {}
    for split in SPLITS:
        rows = []
        for lineno, (h, r, o, t) in raw[split]:
            ids = []
            for vocab, token, kind in ((ents, h, "entity"), (rels, r, "relation"), (ents, o, "entity"), (times, t, "timestamp")):
                idx = vocab.get(token)
                if idx is None:
                    raise DictionaryError(f"{paths[split]}:{lineno}: unknown {kind} {token!r}")
                ids.append(idx)
            rows.append(tuple(ids))
        id_splits[split] = rows
    layers, stats = build_layers(id_splits, len(ents), len(rels), len(times))
    stats["total_lines"] = sum(stats[f"{s}_lines"] for s in SPLITS)
    stats["fingerprint"] = fingerprint([paths[s] for s in SPLITS])

    store = TkgStore(ents, rels, times, layers, stats)
    if dict_dir is not None and not have_dicts:
        store.save_dictionaries(dict_dir)
    return store


def load_graph_dir(directory) -> TkgStore:
    """Load ``train.txt``/``valid.txt``/``test.txt`` (dictionaries optional) from one directory."""
    directory = Path(directory)
    if not (directory / "train.txt").exists():
        raise FileNotFoundError(f"{directory}: no train.txt")
    dict_dir = directory if all((directory / f).exists() for f in DICT_FILES.values()) else None
    return load_graph(directory / "train.txt", directory / "valid.txt", directory / "test.txt", dict_dir)


def write_graph_dir(directory, splits: dict[str, list[tuple[str, str, str, str]]], store_dicts: TkgStore | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        with open(directory / f"{split}.txt", "w", encoding="utf-8") as fh:
            for row in splits.get(split, []):
                fh.write("\t".join(map(str, row)) + "\n")
    if store_dicts is not None:
        store_dicts.save_dictionaries(directory)
    return directory


def stats_report(store: TkgStore) -> str:
    return json.dumps(store.stats, indent=2, sort_keys=True)


def data_dir_default() -> str | None:
    return os.environ.get("TKGREASON_DATA")
