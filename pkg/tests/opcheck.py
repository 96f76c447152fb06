"""Random embeddings and per-operator gradient checks for the model."""

import numpy as np

from fd import check
from tkgreason import autodiff as ad
from tkgreason.dsl import Sort, structure
from tkgreason.model import FeatureLogicModel, QueryEmbedding

OPERATORS = ("P_e", "P_t", "I_e", "I_t", "U_e", "U_t", "C_e", "C_t", "A_t", "B_t", "D_t")


def random_embedding(rng, batch, dim, grad=True) -> QueryEmbedding:
    make = ad.Parameter if grad else ad.Tensor
    return QueryEmbedding(
        make(rng.normal(size=(batch, dim))),
        make(rng.uniform(0.05, 0.95, size=(batch, dim))),
        make(rng.normal(size=(batch, dim))),
        make(rng.uniform(0.05, 0.95, size=(batch, dim))),
    )


def _op_params(model, op):
    prefix = {"D_t": "I_t"}.get(op, op) + "."
    names = [k for k in model.params if k.startswith(prefix)]
    if op in ("P_e", "P_t"):
        names.append("relation")
    return [model.params[k] for k in names]


def operator_check(op, seed, dim=3, batch=2):
    """Relative error of the tape gradient of a random linear read-out of ``op``'s output."""
    rng = np.random.default_rng(seed)
    model = FeatureLogicModel(5, 4, 5, dim, seed=seed)
    n_in = {"I_e": 3, "I_t": 3, "U_e": 3, "U_t": 3, "D_t": 2, "P_e": 2, "P_t": 2}.get(op, 1)
    n_in = int(rng.integers(2, n_in + 1)) if op in ("I_e", "I_t", "U_e", "U_t") else n_in
    inputs = [random_embedding(rng, batch, dim) for _ in range(n_in)]
    rel = rng.integers(model.n_relations, size=batch)
    weights = [rng.normal(size=(batch, dim)) for _ in range(4)]

    def run():
        if op in ("P_e", "P_t"):
            out = getattr(model, op)(inputs[0], rel, inputs[1])
        elif op in ("I_e", "I_t", "U_e", "U_t"):
            out = getattr(model, op)(inputs)
        elif op == "D_t":
            out = model.D_t(inputs[0], inputs[1])
        else:
            out = getattr(model, op)(inputs[0])
        return ad.sum(ad.stack([p * w for p, w in zip(out.parts(), weights)]))

    tensors = [t for q in inputs for t in q.parts()] + _op_params(model, op)
    return check(run, tensors)


def two_hop_loss_check(seed, dim=3, batch=3, k=4):
    rng = np.random.default_rng(seed)
    model = FeatureLogicModel(6, 4, 5, dim, gamma=2.0, seed=seed)
    sdef = structure("Pe2")
    binding = {"e1": rng.integers(6, size=batch), "r1": rng.integers(4, size=batch),
               "t1": rng.integers(5, size=batch), "r2": rng.integers(4, size=batch),
               "t2": rng.integers(5, size=batch)}
    pos = rng.integers(6, size=batch)
    neg = rng.integers(6, size=(batch, k))

    def run():
        return model.loss(model.encode(sdef.expr, binding), pos, neg, Sort.ENTITY)

    names = ["entity_feature", "time_feature", "relation"] + [n for n in model.params if n.startswith("P_e.")]
    return check(run, [model.params[n] for n in names])
