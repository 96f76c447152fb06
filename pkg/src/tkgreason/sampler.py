"""Grounded query datasets: backward instantiation, exact answers, serialization."""

from __future__ import annotations

import json
import logging
import multiprocessing
import shutil
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsl import Anchor, Op, StructureDef, structure
from .oracle import execute
from .store import DICT_FILES, SPLITS, GraphLayer, TkgStore

log = logging.getLogger(__name__)

# split -> layer whose answers count as "easy" for it
EASY_LAYER = {"train": None, "valid": "train", "test": "valid"}


class SamplingExhausted(RuntimeError):
    def __init__(self, name: str, split: str, attempts: int):
        super().__init__(f"could not ground {name!r} on {split} after {attempts} attempts")
        self.structure = name
        self.split = split
        self.attempts = attempts


class DatasetError(ValueError):
    pass


class _Conflict(Exception):
    pass


@dataclass
class GroundedQuery:
    structure: str
    split: str
    binding: dict
    answers: list  # answers on the split's own layer
    easy_answers: list = field(default_factory=list)  # answers on the next-smaller layer

    @property
    def hard_answers(self) -> list:
        easy = set(self.easy_answers)
        return [a for a in self.answers if a not in easy]

    def to_json(self) -> str:
        return json.dumps(
            {
                "structure": self.structure,
                "binding": self.binding,
                "answers": self.answers,
                "easy_answers": self.easy_answers,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str, split: str) -> "GroundedQuery":
        d = json.loads(line)
        return cls(d["structure"], split, {k: int(v) for k, v in d["binding"].items()},
                   [int(a) for a in d["answers"]], [int(a) for a in d.get("easy_answers", [])])


class _Grounder:
    def __init__(self, layer: GraphLayer, rng: np.random.Generator, pool: np.ndarray | None):
        self.layer = layer
        self.quads = layer.quads
        self.rng = rng
        self.pool = pool
        self.binding: dict = {}

    def bind(self, slot: str, value: int) -> None:
        old = self.binding.setdefault(slot, value)
        if old != value:
            raise _Conflict(slot)

    def pick(self, rows: np.ndarray | None, use_pool: bool):
        if use_pool and self.pool is not None and len(self.pool):
            rows = self.pool
        if rows is None:
            return self.quads[self.rng.integers(len(self.quads))]
        if len(rows) == 0:
            raise _Conflict("no fact")
        return self.quads[rows[self.rng.integers(len(rows))]]

    def ground(self, node, target, use_pool=False):
        """Bind slots under ``node`` so that ``target`` (if given) should be among its answers.

        Returns a witness id of the node's answer set, or None when unknown.
        """
        if isinstance(node, Anchor):
            if target is None:
                n = self.layer.n_entities if node.kind == "e" else self.layer.n_timestamps
                target = int(self.rng.integers(n))
            self.bind(node.name, int(target))
            return target
        name, args = node.name, node.args
        if name in ("Pe", "Pt"):
            index = self.layer.by_object if name == "Pe" else self.layer.by_time
            if target is None:
                s, r, o, t = self.pick(None, use_pool)
            else:
                s, r, o, t = self.pick(index.get(int(target), np.empty(0, dtype=np.int64)), False)
            self.bind(args[1].name, int(r))
            self.ground(args[0], int(s))
            self.ground(args[2], int(t) if name == "Pe" else int(o))
            return int(o) if name == "Pe" else int(t)
        if name in ("And", "TimeAnd"):
            negate = "Not" if name == "And" else "TimeNot"
            pos = [a for a in args if not (isinstance(a, Op) and a.name == negate)]
            neg = [a for a in args if isinstance(a, Op) and a.name == negate]
            witness = target
            for i, a in enumerate(pos):
                w = self.ground(a, witness, use_pool and i == 0)
                if witness is None:
                    witness = w
            for a in neg:
                self.ground(a.args[0], None)
            return witness
        if name in ("Or", "TimeOr"):
            chosen = int(self.rng.integers(len(args)))
            witness = None
            for i, a in enumerate(args):
                if i == chosen:
                    witness = self.ground(a, target, use_pool)
                else:
                    self.ground(a, None)
            return witness
        if name in ("Not", "TimeNot"):
            self.ground(args[0], None)
            return None
        if name in ("after", "before"):
            return self._ground_shift(name, args[0], target, use_pool)
        raise ValueError(name)

    def _ground_shift(self, name, inner, target, use_pool):
        # Aim the inner query at a time on the far side of the target (after: earlier,
        # before: later); with no target, answer with a time just past the inner witness.
        # Neither choice is guaranteed, so forward execution still decides.
        if target is not None and not (use_pool and self.pool is not None):
            times = self.layer.fact_times
            cand = times[times < target] if name == "after" else times[times > target]
            if len(cand) == 0:
                raise _Conflict(name)
            self.ground(inner, int(cand[self.rng.integers(len(cand))]))
            return target
        w = self.ground(inner, None, use_pool)
        if w is None:
            return None
        lo, hi = (w + 1, self.layer.n_timestamps) if name == "after" else (0, w)
        if lo >= hi:
            raise _Conflict(name)
        return int(self.rng.integers(lo, hi))


def ground_structure(sdef: StructureDef, layer: GraphLayer, rng_seed, max_attempts: int = 128,
                     pool: np.ndarray | None = None, max_answers: int | None = None, accept=None) -> dict:
    """Return a binding whose forward execution on ``layer`` is non-empty.

    ``pool`` optionally restricts the fact chosen for the outermost projection
    (row indices into ``layer.quads``). ``accept(binding, answers)`` may veto
    a grounding. Raises :class:`SamplingExhausted` after ``max_attempts``.
    """
    if len(layer) == 0:
        raise SamplingExhausted(sdef.name, layer.tag, 0)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    for _ in range(max_attempts):
        g = _Grounder(layer, rng, pool)
        try:
            g.ground(sdef.expr, None, use_pool=True)
        except _Conflict:
            continue
        binding = {slot: g.binding[slot] for slot in sdef.slots}
        answers = execute(sdef.expr, binding, layer)
        if not answers.ids:
            continue
        if max_answers is not None and len(answers) > max_answers:
            continue
        if accept is not None and not accept(binding, answers):
            continue
        return binding
    raise SamplingExhausted(sdef.name, layer.tag, max_attempts)


def record_seed(seed: int, name: str, split: str, index: int) -> list[int]:
    return [int(seed), zlib.crc32(name.encode()), SPLITS.index(split), int(index)]


def sample_record(store: TkgStore, name: str, split: str, index: int, seed: int,
                  max_answers: int | None = None, max_attempts: int = 128) -> GroundedQuery:
    sdef = structure(name)
    layer = store.layer(split)
    easy_tag = EASY_LAYER[split]
    rng = np.random.default_rng(record_seed(seed, name, split, index))
    pool = None
    easy_layer = None
    if easy_tag is not None:
        easy_layer = store.layer(easy_tag)
        pool = np.arange(len(easy_layer), len(layer))
        if len(pool) == 0:
            raise SamplingExhausted(name, split, 0)

    def nontrivial(binding, answers):
        if easy_layer is None:
            return True
        return bool(answers.ids - execute(sdef.expr, binding, easy_layer).ids)

    binding = ground_structure(sdef, layer, rng, max_attempts, pool, max_answers, nontrivial)
    answers = execute(sdef.expr, binding, layer).sorted()
    easy = execute(sdef.expr, binding, easy_layer).sorted() if easy_layer is not None else []
    return GroundedQuery(name, split, binding, answers, easy)


_WORKER_STORE: TkgStore | None = None


def _sample_block(args):
    name, split, count, seed, max_answers, max_attempts = args
    store = _WORKER_STORE
    out = []
    for i in range(count):
        try:
            out.append(sample_record(store, name, split, i, seed, max_answers, max_attempts))
        except SamplingExhausted as exc:
            return out, str(exc)
    return out, None


def sample_dataset(store: TkgStore, plan: dict, seed: int, max_answers: int | None = None,
                   max_attempts: int = 128, workers: int = 1):
    """Sample records for ``plan`` = {structure: {split: count}}.

    Returns ``(records_by_split, manifest)``. Exhaustion on one
    (structure, split) stops that block only; the manifest lists failures.
    """
    for name in plan:
        structure(name)  # raises KeyError on unknown structures
    tasks = []
    for split in SPLITS:
        for name, counts in plan.items():
            n = int(counts.get(split, 0) or 0)
            if n > 0:
                tasks.append((name, split, n, seed, max_answers, max_attempts))

    global _WORKER_STORE
    _WORKER_STORE = store
    try:
        if workers > 1 and len(tasks) > 1 and "fork" in multiprocessing.get_all_start_methods():
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                results = list(pool.map(_sample_block, tasks))
        else:
            results = [_sample_block(t) for t in tasks]
    finally:
        _WORKER_STORE = None

    records = {split: [] for split in SPLITS}
    failures = []
    for task, (recs, err) in zip(tasks, results):
        records[task[1]].extend(recs)
        if err:
            log.warning("%s", err)
            failures.append({"structure": task[0], "split": task[1], "sampled": len(recs),
                             "requested": task[2], "error": err})
    manifest = {
        "seed": seed,
        "max_answers": max_answers,
        "graph_fingerprint": store.stats.get("fingerprint"),
        "plan": plan,
        "structures": dataset_stats(records),
        "failures": failures,
    }
    return records, manifest


def dataset_stats(records: dict) -> dict:
    """Per structure and split: record count and mean answer count."""
    out: dict = {}
    for split, recs in records.items():
        for i, rec in enumerate(recs):
            if not isinstance(rec, GroundedQuery) or not isinstance(rec.answers, list):
                raise DatasetError(f"{split} record {i}: malformed")
            slot = out.setdefault(rec.structure, {}).setdefault(split, {"count": 0, "answers": 0})
            slot["count"] += 1
            slot["answers"] += len(rec.answers)
    for per_split in out.values():
        for s in per_split.values():
            s["avg_answers"] = s.pop("answers") / s["count"]
    return out


def stats_table(stats: dict) -> str:
    lines = [f"{'structure':<18} {'split':<6} {'count':>8} {'avg_answers':>12}"]
    for name in sorted(stats):
        for split in SPLITS:
            s = stats[name].get(split)
            if s:
                lines.append(f"{name:<18} {split:<6} {s['count']:>8} {s['avg_answers']:>12.2f}")
    return "\n".join(lines)


def write_dataset(directory, records: dict, manifest: dict, store: TkgStore | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        with open(directory / f"{split}.jsonl", "w", encoding="utf-8") as fh:
            for rec in records.get(split, []):
                fh.write(rec.to_json() + "\n")
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if store is not None:
        store.save_dictionaries(directory)
    return directory


def read_split(directory, split: str) -> list[GroundedQuery]:
    path = Path(directory) / f"{split}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{path}: split {split!r} missing")
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                out.append(GroundedQuery.from_json(line, split))
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise DatasetError(f"{path}: record {i}: {exc}") from None
    return out


def read_dataset(directory) -> dict[str, list[GroundedQuery]]:
    directory = Path(directory)
    return {s: read_split(directory, s) for s in SPLITS if (directory / f"{s}.jsonl").exists()}


def read_manifest(directory) -> dict:
    with open(Path(directory) / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


def copy_dictionaries(src, dst) -> None:
    for f in DICT_FILES.values():
        if (Path(src) / f).exists():
            shutil.copyfile(Path(src) / f, Path(dst) / f)


def read_plan(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        plan = json.load(fh)
    if not isinstance(plan, dict):
        raise ValueError("plan must map structure name -> {train, valid, test}")
    for name, counts in plan.items():
        if not isinstance(counts, dict) or set(counts) - set(SPLITS):
            raise ValueError(f"plan entry {name!r} must be an object with keys among {SPLITS}")
    return plan


def verify_roundtrip(store: TkgStore, records: dict) -> list[str]:
    """Re-execute every record; return a list of mismatch descriptions (empty when clean)."""
    problems = []
    for split, recs in records.items():
        for i, rec in enumerate(recs):
            sdef = structure(rec.structure)
            got = execute(sdef.expr, rec.binding, store.layer(split)).sorted()
            if got != rec.answers:
                problems.append(f"{split}[{i}] {rec.structure}: answers differ")
            easy_tag = EASY_LAYER[split]
            if easy_tag is not None:
                easy = execute(sdef.expr, rec.binding, store.layer(easy_tag)).sorted()
                if easy != rec.easy_answers:
                    problems.append(f"{split}[{i}] {rec.structure}: easy answers differ")
                if not rec.hard_answers:
                    problems.append(f"{split}[{i}] {rec.structure}: no non-trivial answer")
    return problems
