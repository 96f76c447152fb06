"""Negative-sampling training and filtered-ranking evaluation."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dsl import Sort, structure
from .model import FeatureLogicModel
from .sampler import GroundedQuery
from .store import TkgStore

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class NoNegatives(ValueError):
    pass


@dataclass
class TrainConfig:
    dim: int = 32
    batch_size: int = 64
    negatives: int = 16
    gamma: float = 15.0
    steps: int = 5000
    lr: float = 1e-3
    seed: int = 0
    lambda_logic: float = 1.0
    mix: dict | None = None  # structure -> weight; None means uniform over structures present
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        for k in ("dim", "batch_size", "negatives", "steps"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if self.gamma <= 0 or self.lr <= 0:
            raise ValueError("gamma and lr must be positive")


PRESETS = {
    "icews14": TrainConfig(dim=800, batch_size=512, negatives=128, gamma=15.0, steps=300_000, lr=1e-4),
    "icews05-15": TrainConfig(dim=800, batch_size=512, negatives=128, gamma=30.0, steps=300_000, lr=1e-4),
    "gdelt-500": TrainConfig(dim=800, batch_size=512, negatives=128, gamma=30.0, steps=300_000, lr=1e-4),
    "desk": TrainConfig(dim=32, batch_size=64, negatives=16, gamma=15.0, steps=5000, lr=1e-3),
}


def preset(name: str, **overrides) -> TrainConfig:
    try:
        base = PRESETS[name.lower()]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **{k: v for k, v in overrides.items() if v is not None})


def universe_size(store_or_model, sort: Sort) -> int:
    return store_or_model.n_entities if sort is Sort.ENTITY else store_or_model.n_timestamps


def negative_sample(universe: int, answers, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``k`` ids uniformly from ``range(universe)`` minus ``answers``.

    Without replacement when the complement holds at least ``k`` ids,
    with replacement otherwise.
    """
    answers = set(int(a) for a in answers)
    free = universe - len(answers)
    if free <= 0:
        raise NoNegatives("every candidate is an answer")
    if free < k:
        comp = np.setdiff1d(np.arange(universe), np.fromiter(answers, dtype=np.int64))
        return rng.choice(comp, size=k, replace=True)
    if len(answers) * 2 > universe:
        comp = np.setdiff1d(np.arange(universe), np.fromiter(answers, dtype=np.int64))
        return rng.choice(comp, size=k, replace=False)
    out: list[int] = []
    seen: set = set()
    while len(out) < k:
        for x in rng.integers(universe, size=2 * k).tolist():
            if x not in answers and x not in seen:
                seen.add(x)
                out.append(x)
                if len(out) == k:
                    break
    return np.array(out, dtype=np.int64)


def _binding_columns(records: list[GroundedQuery], slots) -> dict:
    return {s: np.array([r.binding[s] for r in records], dtype=np.int64) for s in slots}


@dataclass
class TrainResult:
    model: FeatureLogicModel
    history: list = field(default_factory=list)  # dicts: step, loss, wall_time


def train(config: TrainConfig, records: list[GroundedQuery], store: TkgStore | None = None,
          model: FeatureLogicModel | None = None, on_log: Callable[[dict], None] | None = None,
          on_checkpoint: Callable[[FeatureLogicModel, int], None] | None = None,
          sizes: tuple[int, int, int] | None = None) -> TrainResult:
    """Train on grounded training queries; one Adam step per batch."""
    if store is not None:
        sizes = (store.n_entities, store.n_relations, store.n_timestamps)
    if model is None:
        if sizes is None:
            raise ValueError("need a store, explicit sizes or a model")
        model = FeatureLogicModel(*sizes, dim=config.dim, gamma=config.gamma,
                                  lambda_logic=config.lambda_logic, seed=config.seed)
    by_structure: dict[str, list[GroundedQuery]] = defaultdict(list)
    for r in records:
        by_structure[r.structure].append(r)
    if not by_structure:
        raise TrainingError("no training records")
    names = sorted(by_structure)
    if config.mix:
        weights = np.array([float(config.mix.get(n, 0.0)) for n in names])
    else:
        weights = np.ones(len(names))
    if weights.sum() <= 0:
        raise TrainingError("structure mix gives zero weight to every structure in the data")
    weights = weights / weights.sum()
    answer_sets = {n: [set(r.answers) for r in by_structure[n]] for n in names}

    rng = np.random.default_rng(config.seed)
    opt = ad.Adam(model.params, lr=config.lr)
    history = []
    start = time.perf_counter()
    for step in range(1, config.steps + 1):
        counts = rng.multinomial(config.batch_size, weights)
        opt.zero_grad()
        with ad.Tape():
            total = None
            for name, c in zip(names, counts):
                if c == 0:
                    continue
                sdef = structure(name)
                pool = by_structure[name]
                idx = rng.integers(len(pool), size=c)
                batch = [pool[i] for i in idx]
                n_univ = universe_size(model, sdef.answer_sort)
                pos = np.array([r.answers[rng.integers(len(r.answers))] for r in batch])
                try:
                    neg = np.stack([negative_sample(n_univ, answer_sets[name][i], config.negatives, rng) for i in idx])
                except NoNegatives:
                    log.warning("step %d: %s record has no negatives; skipped", step, name)
                    continue
                q = model.encode(sdef.expr, _binding_columns(batch, sdef.slots))
                part = ad.scalar_mul(model.loss(q, pos, neg, sdef.answer_sort, config.gamma), c / config.batch_size)
                total = part if total is None else total + part
            if total is None:
                continue
            value = float(total.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step} (batch structures: "
                                    f"{[n for n, c in zip(names, counts) if c]})")
            ad.backward(total)
        opt.step()
        if step == 1 or step % config.log_every == 0 or step == config.steps:
            entry = {"step": step, "loss": value, "wall_time": round(time.perf_counter() - start, 3)}
            history.append(entry)
            if on_log:
                on_log(entry)
        if on_checkpoint and config.checkpoint_every and step % config.checkpoint_every == 0:
            on_checkpoint(model, step)
    return TrainResult(model, history)


# -- evaluation ------------------------------------------------------------

def rank_from_scores(scores: np.ndarray, positive: int, filter_set) -> float:
    """Mean-tie rank of ``positive`` among all ids not in ``filter_set`` (lower score is better)."""
    if positive in filter_set:
        raise ValueError(f"positive {positive} is inside the filter set")
    if not 0 <= positive < len(scores):
        raise IndexError(f"positive {positive} outside the candidate universe")
    keep = np.ones(len(scores), dtype=bool)
    if filter_set:
        keep[np.fromiter(filter_set, dtype=np.int64)] = False
    keep[positive] = False
    others = scores[keep]
    p = scores[positive]
    return 1.0 + float(np.count_nonzero(others < p)) + float(np.count_nonzero(others == p)) / 2.0


def rank(model: FeatureLogicModel, query, positive: int, filter_set, sort: Sort) -> float:
    scores = model.score_all(query, sort)[0]
    return rank_from_scores(scores, positive, filter_set)


@dataclass
class EvalRecord:
    structure: str
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    count: int  # records with at least one ranked answer
    answers: int  # ranked answers

    METRICS = ("mrr", "hits1", "hits3", "hits10")


def query_metrics(ranks) -> dict:
    ranks = np.asarray(ranks, dtype=np.float64)
    return {
        "mrr": float(np.mean(1.0 / ranks)),
        "hits1": float(np.mean(ranks <= 1)),
        "hits3": float(np.mean(ranks <= 3)),
        "hits10": float(np.mean(ranks <= 10)),
    }


def evaluate(model: FeatureLogicModel, records: list[GroundedQuery], chunk: int = 256) -> list[EvalRecord]:
    """Filtered ranking of each record's non-trivial answers, averaged per structure.

    The other answers on the record's own layer are removed from the
    candidates (test records: the test layer; valid records: the valid layer).
    """
    by_structure: dict[str, list[GroundedQuery]] = defaultdict(list)
    for r in records:
        by_structure[r.structure].append(r)
    out = []
    for name in sorted(by_structure):
        sdef = structure(name)
        per_query = []
        n_answers = 0
        recs = by_structure[name]
        for i in range(0, len(recs), chunk):
            batch = recs[i:i + chunk]
            q = model.encode(sdef.expr, _binding_columns(batch, sdef.slots))
            scores = model.score_all(q, sdef.answer_sort)
            for row, rec in zip(scores, batch):
                hard = rec.hard_answers
                if not hard:
                    continue
                answers = set(rec.answers)
                ranks = [rank_from_scores(row, v, answers - {v}) for v in hard]
                n_answers += len(ranks)
                per_query.append(query_metrics(ranks))
        if not per_query:
            continue
        avg = {m: float(np.mean([pq[m] for pq in per_query])) for m in EvalRecord.METRICS}
        out.append(EvalRecord(name, avg["mrr"], avg["hits1"], avg["hits3"], avg["hits10"], len(per_query), n_answers))
    return out


def summarize(results: list[EvalRecord]) -> dict:
    """Macro (mean over structures) and micro (weighted by record count) averages."""
    if not results:
        return {}
    total = sum(r.count for r in results)
    return {
        "macro": {m: float(np.mean([getattr(r, m) for r in results])) for m in EvalRecord.METRICS},
        "micro": {m: float(sum(getattr(r, m) * r.count for r in results) / total) for m in EvalRecord.METRICS},
    }


def metrics_csv(results: list[EvalRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["structure", "metric", "value", "count"])
    for r in results:
        for m in EvalRecord.METRICS:
            w.writerow([r.structure, m, repr(getattr(r, m)), r.count])
    return buf.getvalue()


def metrics_table(results: list[EvalRecord]) -> str:
    lines = [f"{'structure':<18} {'MRR':>7} {'H@1':>7} {'H@3':>7} {'H@10':>7} {'queries':>8}"]
    for r in results:
        lines.append(f"{r.structure:<18} {r.mrr:7.4f} {r.hits1:7.4f} {r.hits3:7.4f} {r.hits10:7.4f} {r.count:>8}")
    for kind, vals in summarize(results).items():
        lines.append(f"{'AVG (' + kind + ')':<18} {vals['mrr']:7.4f} {vals['hits1']:7.4f} "
                     f"{vals['hits3']:7.4f} {vals['hits10']:7.4f}")
    return "\n".join(lines)


def config_dict(config: TrainConfig) -> dict:
    return json.loads(json.dumps(asdict(config)))
