"""Small synthetic temporal KGs with learnable regularities.

Each relation maps subjects through a fixed random permutation of the
entities, and each active (subject, relation) pair holds over one
contiguous run of timestamps, optionally kept ``margin`` steps away from
both ends of the timeline. Held-out facts are therefore predictable from
training facts: the object from the pair's other timestamps, the time from
the neighbouring run.
"""

from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np

from .store import write_graph_dir


def timestamp_surface(i: int) -> str:
    return (dt.date(2014, 1, 1) + dt.timedelta(days=i)).isoformat()


def synthetic_quads(n_entities: int = 100, n_relations: int = 10, n_timestamps: int = 20,
                    n_facts: int = 2000, min_run: int = 3, max_run: int = 6, margin: int = 0,
                    seed: int = 0) -> list[tuple[int, int, int, int]]:
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(n_entities) for _ in range(n_relations)]
    pairs = [(s, r) for s in range(n_entities) for r in range(n_relations)]
    order = rng.permutation(len(pairs))
    quads = []
    for k in order:
        if len(quads) >= n_facts:
            break
        s, r = pairs[k]
        run = int(rng.integers(min_run, max_run + 1))
        lo, hi = margin, n_timestamps - margin - run
        start = int(rng.integers(lo, max(lo, hi) + 1))
        o = int(perms[r][s])
        for t in range(start, min(start + run, n_timestamps)):
            quads.append((s, r, o, t))
    return quads[:n_facts]


def split_quads(quads, valid_frac: float = 0.1, test_frac: float = 0.1, seed: int = 0):
    rng = np.random.default_rng(seed + 1)
    idx = rng.permutation(len(quads))
    n_valid = int(round(len(quads) * valid_frac))
    n_test = int(round(len(quads) * test_frac))
    test = sorted(quads[i] for i in idx[:n_test])
    valid = sorted(quads[i] for i in idx[n_test:n_test + n_valid])
    train = sorted(quads[i] for i in idx[n_test + n_valid:])
    return {"train": train, "valid": valid, "test": test}


def to_surface(quad) -> tuple[str, str, str, str]:
    s, r, o, t = quad
    return (f"ent{s:03d}", f"rel{r:02d}", f"ent{o:03d}", timestamp_surface(t))


def write_synthetic_graph(directory, seed: int = 0, **kwargs) -> Path:
    """Write train/valid/test.txt for a synthetic graph; returns the directory."""
    splits = split_quads(synthetic_quads(seed=seed, **kwargs), seed=seed)
    return write_graph_dir(directory, {k: [to_surface(q) for q in v] for k, v in splits.items()})


def random_tiny_quads(rng: np.random.Generator, max_entities: int = 30, max_relations: int = 5,
                      max_timestamps: int = 10, max_facts: int = 300):
    """Unstructured random quads for differential testing."""
    n_e = int(rng.integers(2, max_entities + 1))
    n_r = int(rng.integers(1, max_relations + 1))
    n_t = int(rng.integers(1, max_timestamps + 1))
    n_f = int(rng.integers(1, max_facts + 1))
    cols = [rng.integers(n, size=n_f) for n in (n_e, n_r, n_e, n_t)]
    return [tuple(int(c[i]) for c in cols) for i in range(n_f)], (n_e, n_r, n_t)
