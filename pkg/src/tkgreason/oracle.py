"""Exact set semantics for query expressions over one graph layer."""

from __future__ import annotations

from dataclasses import dataclass

from .dsl import Anchor, Expr, Op, Sort, free_slots
from .store import GraphLayer

Binding = dict  # slot name -> id, e.g. {"e1": 3, "r1": 0, "t1": 7}


@dataclass(frozen=True)
class AnswerSet:
    sort: Sort
    ids: frozenset

    def sorted(self) -> list[int]:
        return sorted(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, x) -> bool:
        return x in self.ids


def check_binding(expr: Expr, binding: Binding) -> None:
    es, rs, ts = free_slots(expr)
    missing = [s for s in es + rs + ts if s not in binding]
    if missing:
        raise KeyError(f"binding misses slots {missing}")


def _before(times, n_timestamps: int) -> set:
    if not times:
        return set()
    return set(range(min(times)))


def _after(times, n_timestamps: int) -> set:
    if not times:
        return set()
    return set(range(max(times) + 1, n_timestamps))


def execute(expr: Expr, binding: Binding, layer: GraphLayer) -> AnswerSet:
    """Evaluate ``expr`` bottom-up against the layer's indexes."""
    check_binding(expr, binding)
    return AnswerSet(expr.sort, frozenset(_eval(expr, binding, layer)))


def _eval(node: Expr, b: Binding, layer: GraphLayer) -> set:
    if isinstance(node, Anchor):
        return {b[node.name]}
    name, args = node.name, node.args
    if name == "Pe":
        subjects = _eval(args[0], b, layer)
        rel = b[args[1].name]
        times = _eval(args[2], b, layer)
        return _project(layer, subjects, rel, times, want_time=False)
    if name == "Pt":
        subjects = _eval(args[0], b, layer)
        rel = b[args[1].name]
        objects = _eval(args[2], b, layer)
        return _project(layer, subjects, rel, objects, want_time=True)
    if name in ("And", "TimeAnd"):
        # Negated children are subtracted rather than materialized.
        negate = "Not" if name == "And" else "TimeNot"
        pos = [a for a in args if not (isinstance(a, Op) and a.name == negate)]
        neg = [a.args[0] for a in args if isinstance(a, Op) and a.name == negate]
        if pos:
            sets = sorted((_eval(a, b, layer) for a in pos), key=len)
            out = set(sets[0])
            for s in sets[1:]:
                out &= s
        else:
            n = layer.n_entities if name == "And" else layer.n_timestamps
            out = set(range(n))
        for a in neg:
            if not out:
                break
            out -= _eval(a, b, layer)
        return out
    if name in ("Or", "TimeOr"):
        out = set()
        for a in args:
            out |= _eval(a, b, layer)
        return out
    if name == "Not":
        inner = _eval(args[0], b, layer)
        return set(range(layer.n_entities)) - inner
    if name == "TimeNot":
        inner = _eval(args[0], b, layer)
        return set(range(layer.n_timestamps)) - inner
    if name == "after":
        return _after(_eval(args[0], b, layer), layer.n_timestamps)
    if name == "before":
        return _before(_eval(args[0], b, layer), layer.n_timestamps)
    raise ValueError(f"unknown operator {name}")


def _project(layer: GraphLayer, subjects: set, rel: int, others: set, want_time: bool) -> set:
    if not subjects or not others:
        return set()
    by_subject = layer.subjects(rel)
    out = set()
    # Walk whichever side is smaller: the query set or the relation's subjects.
    if len(subjects) <= len(by_subject):
        rows = (by_subject[s] for s in subjects if s in by_subject)
    else:
        rows = (v for s, v in by_subject.items() if s in subjects)
    if want_time:
        for pairs in rows:
            out.update(t for o, t in pairs if o in others)
    else:
        for pairs in rows:
            out.update(o for o, t in pairs if t in others)
    return out


def brute_force_execute(expr: Expr, binding: Binding, layer: GraphLayer) -> AnswerSet:
    """Reference evaluator: naive scans over the raw quad list, no indexes."""
    check_binding(expr, binding)
    quads = [tuple(q) for q in layer.quads.tolist()]
    entities = set(range(layer.n_entities))
    times = set(range(layer.n_timestamps))

    def ev(node) -> set:
        if isinstance(node, Anchor):
            return {binding[node.name]}
        a = node.args
        if node.name == "Pe":
            qe, r, qt = ev(a[0]), binding[a[1].name], ev(a[2])
            return {o for (s, rr, o, t) in quads if rr == r and s in qe and t in qt}
        if node.name == "Pt":
            q1, r, q2 = ev(a[0]), binding[a[1].name], ev(a[2])
            return {t for (s, rr, o, t) in quads if rr == r and s in q1 and o in q2}
        if node.name in ("And", "TimeAnd"):
            out = ev(a[0])
            for x in a[1:]:
                out = out & ev(x)
            return out
        if node.name in ("Or", "TimeOr"):
            out = set()
            for x in a:
                out = out | ev(x)
            return out
        if node.name == "Not":
            return entities - ev(a[0])
        if node.name == "TimeNot":
            return times - ev(a[0])
        if node.name == "after":
            inner = ev(a[0])
            return {t for t in times if inner and t > max(inner)}
        if node.name == "before":
            inner = ev(a[0])
            return {t for t in times if inner and t < min(inner)}
        raise ValueError(node.name)

    return AnswerSet(expr.sort, frozenset(ev(expr)))
