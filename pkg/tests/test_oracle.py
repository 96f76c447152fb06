import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tkgreason import dsl
from tkgreason.dsl import parse
from tkgreason.oracle import brute_force_execute, execute
from tkgreason.sampler import SamplingExhausted, ground_structure
from tkgreason.store import from_quads
from tkgreason.synthetic import random_tiny_quads


def surface_binding(store, **slots):
    out = {}
    for slot, surface in slots.items():
        vocab = {"e": store.entities, "r": store.relations, "t": store.timestamps}[slot[0]]
        out[slot] = vocab.id(surface)
    return out


def surfaces(store, answer):
    vocab = store.entities if answer.sort is dsl.Sort.ENTITY else store.timestamps
    return {vocab.surface(i) for i in answer.ids}


HAND_CASES = [
    ("before(Pt(e1, r1, e2))", dict(e1="A", r1="r", e2="C"), {"1"}),
    ("TimeNot(Pt(e1, r1, e2))", dict(e1="A", r1="r", e2="B"), {"2", "3"}),
    ("And(Pe(e1, r1, t1), Pe(e2, r2, t2))", dict(e1="A", r1="r", t1="2", e2="B", r2="r", t2="2"), {"C"}),
    ("after(Pt(e1, r1, e2))", dict(e1="A", r1="r", e2="B"), {"2", "3"}),
    ("after(Pt(e1, r1, e2))", dict(e1="A", r1="r", e2="A"), set()),
    ("before(Pt(e1, r1, e2))", dict(e1="C", r1="r", e2="A"), set()),
    ("Pe(Pe(e1, r1, t1), r2, t2)", dict(e1="A", r1="r", t1="1", r2="r", t2="2"), {"C"}),
    ("Not(Pe(e1, r1, t1))", dict(e1="A", r1="r", t1="1"), {"A", "C"}),
]


@pytest.mark.parametrize("text,slots,expected", HAND_CASES)
def test_hand_cases(hand_store, text, slots, expected):
    expr = parse(text)
    b = surface_binding(hand_store, **slots)
    layer = hand_store.layer("test")
    assert surfaces(hand_store, execute(expr, b, layer)) == expected
    assert surfaces(hand_store, brute_force_execute(expr, b, layer)) == expected


def test_inverse_projection(hand_store):
    b = surface_binding(hand_store, e1="C", t1="2")
    b["r1"] = hand_store.relation_id("inv:r")
    assert surfaces(hand_store, execute(parse("Pe(e1, r1, t1)"), b, hand_store.layer("train"))) == {"A", "B"}


def test_missing_slot(hand_store):
    with pytest.raises(KeyError, match="t1"):
        execute(parse("Pe(e1, r1, t1)"), {"e1": 0, "r1": 0}, hand_store.layer("train"))


def test_negated_conjunct_subtracted_like_complement(hand_store):
    layer = hand_store.layer("train")
    b = surface_binding(hand_store, e1="A", r1="r", t1="2", e2="B", r2="r", t2="2")
    lazy = execute(parse("And(Pe(e1, r1, t1), Not(Pe(e2, r2, t2)))"), b, layer)
    assert lazy.ids == frozenset()
    # an And whose only children are negations still works
    both_neg = parse("And(Not(Pe(e1, r1, t1)), Not(Pe(e2, r2, t2)))")
    assert execute(both_neg, b, layer) == brute_force_execute(both_neg, b, layer)


def test_grounding_pe_first_attempt(hand_store):
    sdef = dsl.structure("Pe")
    for seed in range(20):
        b = ground_structure(sdef, hand_store.layer("train"), seed, max_attempts=1)
        assert execute(sdef.expr, b, hand_store.layer("train")).ids


def test_grounding_deterministic(hand_store):
    sdef = dsl.structure("Pe2")
    layer = hand_store.layer("train")
    assert ground_structure(sdef, layer, 7) == ground_structure(sdef, layer, 7)


def test_e3i_on_hand_store(hand_store):
    sdef = dsl.structure("e3i")
    layer = hand_store.layer("train")
    limits = {"e": hand_store.n_entities, "r": hand_store.n_relations, "t": hand_store.n_timestamps}
    grounded = {}
    for values in itertools.product(*(range(limits[s[0]]) for s in sdef.slots)):
        b = dict(zip(sdef.slots, values))
        ans = brute_force_execute(sdef.expr, b, layer)
        if ans.ids:
            grounded[values] = ans.ids
    # With the forward relation only, each branch yields {B} (A@1) or {C} (A@2, B@2).
    B, C = hand_store.entities.id("B"), hand_store.entities.id("C")
    r = hand_store.relation_id("r")
    forward = {v: ans for v, ans in grounded.items()
               if all(b == r for s, b in zip(sdef.slots, v) if s[0] == "r")}
    assert set(forward.values()) == {frozenset({B}), frozenset({C})}
    b = ground_structure(sdef, layer, 0)
    assert tuple(b[s] for s in sdef.slots) in grounded


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([s.name for s in dsl.registry()]))
def test_differential_random(seed, name):
    rng = np.random.default_rng(seed)
    quads, (n_e, n_r, n_t) = random_tiny_quads(rng, max_facts=80)
    store = from_quads({"train": quads, "valid": [], "test": []}, n_e, n_r, n_t)
    layer = store.layer("test")
    sdef = dsl.structure(name)
    limits = {"e": n_e, "r": 2 * n_r, "t": n_t}
    bindings = [{s: int(rng.integers(limits[s[0]])) for s in sdef.slots}]
    try:
        bindings.append(ground_structure(sdef, layer, rng, max_attempts=16))
    except SamplingExhausted:
        pass
    for b in bindings:
        assert execute(sdef.expr, b, layer) == brute_force_execute(sdef.expr, b, layer)
