"""Feature-logic query embeddings over a temporal KG.

A query embedding has four parts, each of width ``d``: entity feature,
entity logic (in [0, 1]), time feature and time logic (in [0, 1]).
Entities embed as ``(feature, 0, 0, 0)`` and timestamps as
``(0, 0, feature, 0)``. Every operator owns its own networks.

All operator methods work on batches: each part has shape ``(B, d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import logic
from .autodiff import Tensor
from .dsl import Anchor, Expr, Sort

CHECKPOINT_FORMAT = "tkgreason-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class QueryEmbedding:
    ef: Tensor  # entity feature
    el: Tensor  # entity logic
    tf: Tensor  # time feature
    tl: Tensor  # time logic

    def parts(self):
        return self.ef, self.el, self.tf, self.tl

    def numpy(self) -> tuple[np.ndarray, ...]:
        return tuple(p.data for p in self.parts())

    def __len__(self):
        return self.ef.shape[0]


# operator -> list of (network name, input width multiplier, output width multiplier)
_NETWORKS = {
    "P_e": [("mlp", 4, 4)],
    "P_t": [("mlp", 4, 4)],
    "I_e": [("att_e", 2, 1), ("att_t", 2, 1)],
    "I_t": [("att_e", 2, 1), ("att_t", 2, 1)],
    "U_e": [("att_e", 2, 1), ("att_t", 2, 1)],
    "U_t": [("att_e", 2, 1), ("att_t", 2, 1)],
    "C_e": [("neg", 2, 1)],
    "C_t": [("neg", 2, 1)],
}


class FeatureLogicModel:
    def __init__(self, n_entities: int, n_relations: int, n_timestamps: int, dim: int,
                 gamma: float = 15.0, lambda_logic: float = 1.0, seed: int = 0):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.n_timestamps = n_timestamps
        self.dim = dim
        self.gamma = float(gamma)
        self.lambda_logic = float(lambda_logic)
        rng = np.random.default_rng(seed)
        scale = (self.gamma + 2.0) / dim
        d = dim
        p: dict[str, Tensor] = {}
        p["entity_feature"] = ad.Parameter(rng.uniform(-scale, scale, (n_entities, d)))
        p["time_feature"] = ad.Parameter(rng.uniform(-scale, scale, (n_timestamps, d)))
        p["relation"] = ad.Parameter(rng.uniform(-scale, scale, (n_relations, 4 * d)))
        for op, nets in _NETWORKS.items():
            for net, k_in, k_out in nets:
                fan_in, width = k_in * d, k_out * d
                b1, b2 = 1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(width)
                p[f"{op}.{net}.W1"] = ad.Parameter(rng.uniform(-b1, b1, (fan_in, width)))
                p[f"{op}.{net}.b1"] = ad.Parameter(rng.uniform(-b1, b1, (width,)))
                p[f"{op}.{net}.W2"] = ad.Parameter(rng.uniform(-b2, b2, (width, width)))
                p[f"{op}.{net}.b2"] = ad.Parameter(rng.uniform(-b2, b2, (width,)))
        for name, t in p.items():
            t.name = name
        self.params = p

    # -- building blocks -------------------------------------------------

    def _mlp(self, key: str, x: Tensor) -> Tensor:
        p = self.params
        h = ad.relu(x @ p[f"{key}.W1"] + p[f"{key}.b1"])
        return h @ p[f"{key}.W2"] + p[f"{key}.b2"]

    def _zeros(self, n: int) -> Tensor:
        return Tensor(np.zeros((n, self.dim)))

    def _check_ids(self, ids, n: int, kind: str) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"{kind} id out of range [0, {n})")
        return ids

    @staticmethod
    def _cat(q: QueryEmbedding) -> Tensor:
        return ad.concat(q.parts())

    def _split(self, x: Tensor) -> QueryEmbedding:
        d = self.dim
        return QueryEmbedding(
            ad.slice_last(x, 0, d),
            ad.sigmoid(ad.slice_last(x, d, 2 * d)),
            ad.slice_last(x, 2 * d, 3 * d),
            ad.sigmoid(ad.slice_last(x, 3 * d, 4 * d)),
        )

    # -- anchors ---------------------------------------------------------

    def embed_entity(self, ids) -> QueryEmbedding:
        ids = self._check_ids(ids, self.n_entities, "entity")
        z = self._zeros(len(ids))
        return QueryEmbedding(ad.take_rows(self.params["entity_feature"], ids), z, z, z)

    def embed_timestamp(self, ids) -> QueryEmbedding:
        ids = self._check_ids(ids, self.n_timestamps, "timestamp")
        z = self._zeros(len(ids))
        return QueryEmbedding(z, z, ad.take_rows(self.params["time_feature"], ids), z)

    def _relation(self, ids) -> Tensor:
        ids = self._check_ids(ids, self.n_relations, "relation")
        return ad.take_rows(self.params["relation"], ids)

    # -- projections -----------------------------------------------------

    def P_e(self, q: QueryEmbedding, rel, t: QueryEmbedding) -> QueryEmbedding:
        x = self._cat(q) + self._relation(rel) + self._cat(t)
        return self._split(self._mlp("P_e.mlp", x))

    def P_t(self, q1: QueryEmbedding, rel, q2: QueryEmbedding) -> QueryEmbedding:
        x = self._cat(q1) + self._relation(rel) + self._cat(q2)
        return self._split(self._mlp("P_t.mlp", x))

    # -- dyadic / n-ary --------------------------------------------------

    def _attend(self, key: str, feats: list, logics: list) -> Tensor:
        logits = [self._mlp(key, ad.concat([f, l])) for f, l in zip(feats, logics)]
        weights = ad.softmax_over_inputs(logits)
        return ad.sum(weights * ad.stack(feats), axis=0)

    def _combine(self, op: str, qs, entity_logic, time_logic) -> QueryEmbedding:
        if len(qs) < 2:
            raise ValueError(f"{op} needs at least 2 inputs, got {len(qs)}")
        ef = self._attend(f"{op}.att_e", [q.ef for q in qs], [q.el for q in qs])
        tf = self._attend(f"{op}.att_t", [q.tf for q in qs], [q.tl for q in qs])
        return QueryEmbedding(ef, entity_logic([q.el for q in qs]), tf, time_logic([q.tl for q in qs]))

    def I_e(self, qs) -> QueryEmbedding:
        return self._combine("I_e", qs, logic.nary_and, logic.nary_and)

    def I_t(self, qs) -> QueryEmbedding:
        return self._combine("I_t", qs, logic.nary_and, logic.nary_and)

    def U_e(self, qs) -> QueryEmbedding:
        return self._combine("U_e", qs, logic.nary_or, logic.nary_and)

    def U_t(self, qs) -> QueryEmbedding:
        return self._combine("U_t", qs, logic.nary_and, logic.nary_or)

    # -- complement ------------------------------------------------------

    def C_e(self, q: QueryEmbedding) -> QueryEmbedding:
        ef = ad.tanh(self._mlp("C_e.neg", ad.concat([q.ef, q.el])))
        return QueryEmbedding(ef, logic.not_(q.el), q.tf, q.tl)

    def C_t(self, q: QueryEmbedding) -> QueryEmbedding:
        tf = ad.tanh(self._mlp("C_t.neg", ad.concat([q.tf, q.tl])))
        return QueryEmbedding(q.ef, q.el, tf, logic.not_(q.tl))

    # -- temporal --------------------------------------------------------

    @staticmethod
    def A_t(q: QueryEmbedding) -> QueryEmbedding:
        shift = ad.scalar_mul(1.0 + q.tl, 0.5)
        return QueryEmbedding(q.ef, q.el, q.tf + shift, ad.scalar_mul(1.0 - q.tl, 0.5))

    @staticmethod
    def B_t(q: QueryEmbedding) -> QueryEmbedding:
        shift = ad.scalar_mul(1.0 + q.tl, 0.5)
        return QueryEmbedding(q.ef, q.el, q.tf - shift, ad.scalar_mul(1.0 - q.tl, 0.5))

    def D_t(self, q1: QueryEmbedding, q2: QueryEmbedding) -> QueryEmbedding:
        return self.I_t([self.A_t(q1), self.B_t(q2)])

    # -- queries ---------------------------------------------------------

    def encode(self, expr: Expr, binding: dict) -> QueryEmbedding:
        """Embed a batch of queries sharing one structure.

        ``binding`` maps every slot to an int array of length B (or a scalar
        for B = 1).
        """
        cols = {k: np.atleast_1d(np.asarray(v, dtype=np.int64)) for k, v in binding.items()}
        return self._encode(expr, cols)

    def _encode(self, node, b) -> QueryEmbedding:
        if isinstance(node, Anchor):
            if node.kind == "e":
                return self.embed_entity(b[node.name])
            if node.kind == "t":
                return self.embed_timestamp(b[node.name])
            raise ValueError("relation slot used as a query")
        name, args = node.name, node.args
        if name == "Pe":
            return self.P_e(self._encode(args[0], b), b[args[1].name], self._encode(args[2], b))
        if name == "Pt":
            return self.P_t(self._encode(args[0], b), b[args[1].name], self._encode(args[2], b))
        if name == "Not":
            return self.C_e(self._encode(args[0], b))
        if name == "TimeNot":
            return self.C_t(self._encode(args[0], b))
        if name == "after":
            return self.A_t(self._encode(args[0], b))
        if name == "before":
            return self.B_t(self._encode(args[0], b))
        children = [self._encode(a, b) for a in args]
        return {"And": self.I_e, "Or": self.U_e, "TimeAnd": self.I_t, "TimeOr": self.U_t}[name](children)

    # -- scoring ---------------------------------------------------------

    def _query_slices(self, q: QueryEmbedding, sort: Sort):
        if sort is Sort.ENTITY:
            return q.ef, q.el, "entity_feature"
        if sort is Sort.TIME:
            return q.tf, q.tl, "time_feature"
        raise ValueError(f"cannot score answers of sort {sort}")

    def distance(self, answer: QueryEmbedding, query: QueryEmbedding, sort: Sort) -> Tensor:
        """L1 feature gap on the answer sort plus ``lambda_logic`` times the summed query logic."""
        qf, ql, _ = self._query_slices(query, sort)
        af = answer.ef if sort is Sort.ENTITY else answer.tf
        return ad.abs_sum(af - qf) + ad.scalar_mul(ad.abs_sum(ql), self.lambda_logic)

    def distance_to_ids(self, query: QueryEmbedding, ids, sort: Sort) -> Tensor:
        """Distances from each of B queries to its own row of candidate ids, shape (B, k)."""
        qf, ql, table = self._query_slices(query, sort)
        ids = np.asarray(ids, dtype=np.int64)
        B, k = ids.shape
        feats = ad.reshape(ad.take_rows(self.params[table], ids.reshape(-1)), (B, k, self.dim))
        gap = ad.abs_sum(feats - ad.reshape(qf, (B, 1, self.dim)), axis=-1)
        return gap + ad.reshape(ad.scalar_mul(ad.abs_sum(ql), self.lambda_logic), (B, 1))

    def loss(self, query: QueryEmbedding, positives, negatives, sort: Sort, gamma: float | None = None) -> Tensor:
        """Mean over the batch of ``-log s(g - d+) - mean_k log s(d- - g)``."""
        gamma = self.gamma if gamma is None else float(gamma)
        positives = np.asarray(positives, dtype=np.int64).reshape(-1, 1)
        negatives = np.asarray(negatives, dtype=np.int64)
        if negatives.ndim == 1:
            negatives = negatives.reshape(1, -1)
        if negatives.shape[1] < 1:
            raise ValueError("need at least one negative")
        d_pos = ad.reshape(self.distance_to_ids(query, positives, sort), (-1,))
        d_neg = self.distance_to_ids(query, negatives, sort)
        pos_term = ad.log_sigmoid(ad.scalar_mul(d_pos, -1.0) + gamma)
        neg_term = ad.mean(ad.log_sigmoid(d_neg - gamma), axis=1)
        return ad.scalar_mul(ad.mean(pos_term + neg_term), -1.0)

    def score_all(self, query: QueryEmbedding, sort: Sort, chunk: int = 64) -> np.ndarray:
        """Distances from each query to every entity (or timestamp), shape (B, N); no gradients."""
        qf, ql, table = self._query_slices(query, sort)
        qf, ql = qf.data, ql.data
        feats = self.params[table].data
        out = np.empty((qf.shape[0], feats.shape[0]))
        for i in range(0, qf.shape[0], chunk):
            gap = np.abs(feats[None, :, :] - qf[i:i + chunk, None, :]).sum(axis=-1)
            out[i:i + chunk] = gap + self.lambda_logic * ql[i:i + chunk].sum(axis=-1, keepdims=True)
        return out

    # -- checkpoints -----------------------------------------------------

    def header(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "dim": self.dim,
            "gamma": self.gamma,
            "lambda_logic": self.lambda_logic,
            "n_entities": self.n_entities,
            "n_relations": self.n_relations,
            "n_timestamps": self.n_timestamps,
            "arrays": [[name, list(t.shape)] for name, t in self.params.items()],
        }

    def save(self, path, extra: dict | None = None) -> None:
        head = self.header()
        head["extra"] = extra or {}
        with open(path, "wb") as fh:
            fh.write(json.dumps(head, sort_keys=True).encode("utf-8") + b"\n")
            for t in self.params.values():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "FeatureLogicModel":
        raw = Path(path).read_bytes()
        nl = raw.index(b"\n")
        head = json.loads(raw[:nl].decode("utf-8"))
        if head.get("format") != CHECKPOINT_FORMAT or head.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
        model = cls(head["n_entities"], head["n_relations"], head["n_timestamps"], head["dim"],
                    head["gamma"], head["lambda_logic"], seed=0)
        offset = nl + 1
        declared = [name for name, _ in head["arrays"]]
        if declared != list(model.params):
            raise ValueError(f"{path}: parameter layout does not match this model version")
        for name, shape in head["arrays"]:
            n = int(np.prod(shape)) * 8
            arr = np.frombuffer(raw[offset:offset + n], dtype="<f8").reshape(shape)
            model.params[name].data = arr.astype(np.float64)
            offset += n
        if offset != len(raw):
            raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
        model.extra = head.get("extra", {})
        return model
