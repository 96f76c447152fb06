"""Text form of temporal complex queries: parser, printer and structure registry.

Grammar (whitespace is insignificant)::

    Expr    := Name '(' Expr (',' Expr)* ')' | Anchor | Literal
    Anchor  := ('e' | 'r' | 't') digits
    Literal := ('e' | 'r' | 't') ':' (bare | '"' quoted '"')
    Name    := Pe | Pt | And | Or | Not | TimeAnd | TimeOr | TimeNot
             | after | before | e2i | t2i

``e2i(a, b, c, d, e, f)`` expands to ``And(Pe(a, b, c), Pe(d, e, f))`` and
``t2i(a, b, c, d, e, f)`` to ``TimeAnd(Pt(a, b, c), Pt(d, e, f))``.
Literals (``e:Alice``) name graph elements by surface string and are only
accepted by :func:`parse_with_literals`.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Union


class Sort(enum.Enum):
    ENTITY = "EntitySet"
    TIME = "TimeSet"
    RELATION = "Relation"


class QuerySyntaxError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} at offset {offset}")
        self.offset = offset


class QuerySortError(TypeError):
    pass


@dataclass(frozen=True)
class Anchor:
    kind: str  # 'e', 'r' or 't'
    index: int

    @property
    def name(self) -> str:
        return f"{self.kind}{self.index}"

    @property
    def sort(self) -> Sort:
        return {"e": Sort.ENTITY, "t": Sort.TIME, "r": Sort.RELATION}[self.kind]


@dataclass(frozen=True)
class Op:
    name: str
    args: tuple
    sort: Sort = field(compare=False)


Expr = Union[Anchor, Op]

# name -> (argument sorts or None for n-ary, result sort)
_SIGNATURES = {
    "Pe": ((Sort.ENTITY, Sort.RELATION, Sort.TIME), Sort.ENTITY),
    "Pt": ((Sort.ENTITY, Sort.RELATION, Sort.ENTITY), Sort.TIME),
    "And": (Sort.ENTITY, Sort.ENTITY),
    "Or": (Sort.ENTITY, Sort.ENTITY),
    "Not": ((Sort.ENTITY,), Sort.ENTITY),
    "TimeAnd": (Sort.TIME, Sort.TIME),
    "TimeOr": (Sort.TIME, Sort.TIME),
    "TimeNot": ((Sort.TIME,), Sort.TIME),
    "after": ((Sort.TIME,), Sort.TIME),
    "before": ((Sort.TIME,), Sort.TIME),
}
NARY = ("And", "Or", "TimeAnd", "TimeOr")
_MACROS = {
    "e2i": ("And", "Pe"),
    "t2i": ("TimeAnd", "Pt"),
}
_CANONICAL = {n.lower(): n for n in list(_SIGNATURES) + list(_MACROS)}


def make(name: str, *args: Expr) -> Op:
    """Build a sort-checked node."""
    if name in _MACROS:
        if len(args) != 6:
            raise QuerySortError(f"{name} takes 6 arguments, got {len(args)}")
        outer, inner = _MACROS[name]
        return make(outer, make(inner, *args[:3]), make(inner, *args[3:]))
    if name not in _SIGNATURES:
        raise QuerySortError(f"unknown operator {name!r}")
    sig, result = _SIGNATURES[name]
    if name in NARY:
        if len(args) < 2:
            raise QuerySortError(f"{name} needs at least 2 arguments, got {len(args)}")
        expected = (sig,) * len(args)
    else:
        expected = sig
        if len(args) != len(expected):
            raise QuerySortError(f"{name} takes {len(expected)} arguments, got {len(args)}")
    for i, (arg, want) in enumerate(zip(args, expected)):
        if arg.sort is not want:
            raise QuerySortError(
                f"argument {i + 1} of {name} must be {want.value}, got {arg.sort.value} ({render(arg)})"
            )
    return Op(name, tuple(args), result)


@dataclass(frozen=True)
class Literal:
    kind: str
    surface: str

    @property
    def sort(self) -> Sort:
        return {"e": Sort.ENTITY, "t": Sort.TIME, "r": Sort.RELATION}[self.kind]


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<lit>[ert]:(?:"(?:[^"\\]|\\.)*"|[^\s,()"]+))
  | (?P<anchor>[ert]\d+)(?![\w:])
  | (?P<name>[A-Za-z_]\w*)
  | (?P<punct>[(),])
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, literals: bool):
        self.toks = _tokenize(text)
        self.i = 0
        self.literals = literals

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise QuerySyntaxError(f"expected {value!r}, found {what}", tok[2])
        self.i += 1
        return tok

    def expr(self):
        kind, value, pos = self.take()
        if kind == "anchor":
            return Anchor(value[0], int(value[1:]))
        if kind == "lit":
            if not self.literals:
                raise QuerySyntaxError(f"surface literal {value!r} not allowed here", pos)
            surface = value[2:]
            if surface.startswith('"'):
                surface = re.sub(r"\\(.)", r"\1", surface[1:-1])
            return Literal(value[0], surface)
        if kind == "name":
            name = _CANONICAL.get(value.lower())
            if name is None:
                raise QuerySyntaxError(f"unknown name {value!r}", pos)
            self.take("(")
            args = [self.expr()]
            while self.peek()[1] == ",":
                self.take(",")
                args.append(self.expr())
            self.take(")")
            try:
                return make(name, *args)
            except QuerySortError as exc:
                raise QuerySortError(f"{exc} (node {name} at offset {pos})") from None
        what = "end of input" if kind == "end" else repr(value)
        raise QuerySyntaxError(f"expected expression, found {what}", pos)

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise QuerySyntaxError(f"trailing input {tok[1]!r}", tok[2])
        if isinstance(e, Anchor) and e.kind == "r":
            raise QuerySortError("a relation anchor is not a query")
        return e


def parse(text: str) -> Expr:
    """Parse query text into a sort-checked expression tree."""
    return _Parser(text, literals=False).parse()


def parse_with_literals(text: str) -> tuple[Expr, dict[str, tuple[str, str]]]:
    """Parse a query whose anchors are surface literals (``e:Alice``).

    Returns the expression with literals replaced by fresh slots numbered in
    order of first occurrence, and ``{slot: (kind, surface)}``. Repeated
    literals share a slot.
    """
    parser = _Parser(text, literals=True)
    tree = parser.parse()
    slots: dict[tuple[str, str], Anchor] = {}
    counters = {"e": 0, "r": 0, "t": 0}

    def lift(node):
        if isinstance(node, Literal):
            key = (node.kind, node.surface)
            if key not in slots:
                counters[node.kind] += 1
                slots[key] = Anchor(node.kind, counters[node.kind])
            return slots[key]
        if isinstance(node, Anchor):
            raise QuerySortError(f"slot {node.name} mixed with surface literals")
        return make(node.name, *(lift(a) for a in node.args))

    expr = lift(tree)
    return expr, {a.name: key for key, a in slots.items()}


def render(expr: Expr) -> str:
    if isinstance(expr, Anchor):
        return expr.name
    if isinstance(expr, Literal):
        return f"{expr.kind}:{json.dumps(expr.surface)}"
    return f"{expr.name}({', '.join(render(a) for a in expr.args)})"


def free_slots(expr: Expr) -> tuple[list[str], list[str], list[str]]:
    """Entity, relation and time slot names in first-occurrence order."""
    found: dict[str, list[str]] = {"e": [], "r": [], "t": []}

    def walk(node):
        if isinstance(node, Anchor):
            if node.name not in found[node.kind]:
                found[node.kind].append(node.name)
        else:
            for a in node.args:
                walk(a)

    walk(expr)
    return found["e"], found["r"], found["t"]


def iter_nodes(expr: Expr):
    yield expr
    if isinstance(expr, Op):
        for a in expr.args:
            yield from iter_nodes(a)


def depth(expr: Expr) -> int:
    if isinstance(expr, Anchor):
        return 0
    return 1 + max(depth(a) for a in expr.args)


def negation_lint(expr: Expr) -> list[str]:
    """Report Not/TimeNot nodes that are not direct children of And/TimeAnd."""
    problems = []

    def walk(node, parent):
        if isinstance(node, Op):
            if node.name in ("Not", "TimeNot") and (parent is None or parent.name not in ("And", "TimeAnd")):
                problems.append(render(node))
            for a in node.args:
                walk(a, node)

    walk(expr, None)
    return problems


@dataclass(frozen=True)
class StructureDef:
    name: str
    text: str
    expr: Expr
    entity_slots: tuple[str, ...]
    relation_slots: tuple[str, ...]
    time_slots: tuple[str, ...]
    answer_sort: Sort
    group: str
    trainable: bool

    @property
    def slots(self) -> tuple[str, ...]:
        return self.entity_slots + self.relation_slots + self.time_slots


# (group, name, definition, used for training)
_TABLE = [
    ("base", "Pe", "Pe(e1, r1, t1)", True),
    ("base", "Pt", "Pt(e1, r1, e2)", True),
    ("entity multi-hop", "Pe2", "Pe(Pe(e1, r1, t1), r2, t2)", True),
    ("entity multi-hop", "Pe3", "Pe(Pe(Pe(e1, r1, t1), r2, t2), r3, t3)", True),
    ("entity multi-hop", "Pe_Pt", "Pe(e1, r1, Pt(e2, r2, e3))", True),
    ("entity multi-hop", "e2i", "And(Pe(e1, r1, t1), Pe(e2, r2, t2))", True),
    ("entity multi-hop", "e3i", "And(Pe(e1, r1, t1), Pe(e2, r2, t2), Pe(e3, r3, t3))", True),
    ("entity multi-hop", "e2i_Pe", "And(Pe(Pe(e1, r1, t1), r2, t2), Pe(e2, r3, t3))", False),
    ("entity multi-hop", "Pe_e2i", "Pe(e2i(e1, r1, t1, e2, r2, t2), r3, t3)", False),
    ("entity multi-hop", "Pe_t2i", "Pe(e1, r1, t2i(e2, r2, e3, e4, r3, e5))", False),
    ("entity not", "e2i_NPe", "And(Not(Pe(Pe(e1, r1, t1), r2, t2)), Pe(e2, r3, t3))", True),
    ("entity not", "e2i_PeN", "And(Pe(Pe(e1, r1, t1), r2, t2), Not(Pe(e2, r3, t3)))", True),
    ("entity not", "Pe_e2i_Pe_NPe", "Pe(And(Pe(e1, r1, t1), Not(Pe(e2, r2, t2))), r3, t3)", True),
    ("entity not", "e2i_N", "And(Pe(e1, r1, t1), Not(Pe(e2, r2, t2)))", True),
    ("entity not", "e3i_N", "And(Pe(e1, r1, t1), Pe(e2, r2, t2), Not(Pe(e3, r3, t3)))", True),
    ("entity union", "e2u", "Or(Pe(e1, r1, t1), Pe(e2, r2, t2))", False),
    ("entity union", "Pe_e2u", "Pe(Or(Pe(e1, r1, t1), Pe(e2, r2, t2)), r3, t3)", False),
    ("time multi-hop", "Pt_lPe", "Pt(Pe(e1, r1, t1), r2, e2)", True),
    ("time multi-hop", "Pt_rPe", "Pt(e1, r1, Pe(e2, r2, t1))", True),
    ("time multi-hop", "t2i", "TimeAnd(Pt(e1, r1, e2), Pt(e3, r2, e4))", True),
    ("time multi-hop", "t3i", "TimeAnd(Pt(e1, r1, e2), Pt(e3, r2, e4), Pt(e5, r3, e6))", True),
    ("time multi-hop", "t2i_Pe", "TimeAnd(Pt(Pe(e1, r1, t1), r2, e2), Pt(e3, r3, e4))", False),
    ("time multi-hop", "Pt_le2i", "Pt(e2i(e1, r1, t1, e2, r2, t2), r3, e3)", True),
    ("time multi-hop", "Pt_re2i", "Pt(e1, r1, e2i(e2, r2, t1, e3, r3, t2))", True),
    ("time not", "t2i_NPt", "TimeAnd(TimeNot(Pt(Pe(e1, r1, t1), r2, e2)), Pt(e3, r3, e4))", True),
    ("time not", "t2i_PtN", "TimeAnd(Pt(Pe(e1, r1, t1), r2, e2), TimeNot(Pt(e3, r3, e4)))", True),
    ("time not", "Pe_t2i_PtPe_NPt", "Pe(e1, r1, TimeAnd(Pt(Pe(e2, r2, t1), r3, e3), TimeNot(Pt(e4, r4, e5))))", True),
    ("time not", "t2i_N", "TimeAnd(Pt(e1, r1, e2), TimeNot(Pt(e3, r2, e4)))", True),
    ("time not", "t3i_N", "TimeAnd(Pt(e1, r1, e2), Pt(e3, r2, e4), TimeNot(Pt(e5, r3, e6)))", True),
    ("time union", "t2u", "TimeOr(Pt(e1, r1, e2), Pt(e3, r2, e4))", False),
    ("time union", "Pe_t2u", "Pe(e1, r1, TimeOr(Pt(e2, r2, e3), Pt(e4, r3, e5)))", False),
    ("before, after", "Pe_aPt", "Pe(e1, r1, after(Pt(e2, r2, e3)))", True),
    ("before, after", "Pe_bPt", "Pe(e1, r1, before(Pt(e2, r2, e3)))", True),
    ("before, after", "Pe_at2i", "Pe(e1, r1, after(t2i(e2, r2, e3, e4, r3, e5)))", True),
    ("before, after", "Pe_bt2i", "Pe(e1, r1, before(t2i(e2, r2, e3, e4, r3, e5)))", True),
    ("before, after", "between", "TimeAnd(after(Pt(e1, r1, e2)), before(Pt(e3, r2, e4)))", True),
]


def _build_registry() -> dict[str, StructureDef]:
    out = {}
    for group, name, text, trainable in _TABLE:
        expr = parse(text)
        es, rs, ts = free_slots(expr)
        out[name] = StructureDef(name, text, expr, tuple(es), tuple(rs), tuple(ts), expr.sort, group, trainable)
    return out


_REGISTRY = _build_registry()


def registry() -> list[StructureDef]:
    return list(_REGISTRY.values())


def structure(name: str) -> StructureDef:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown query structure {name!r}") from None


def training_structures() -> list[str]:
    return [s.name for s in _REGISTRY.values() if s.trainable]


def registry_document() -> str:
    """Structure registry as JSON: name -> {expression, answer_sort, group, train}."""
    doc = {
        s.name: {
            "expression": s.text,
            "canonical": render(s.expr),
            "answer_sort": s.answer_sort.value,
            "group": s.group,
            "train": s.trainable,
        }
        for s in _REGISTRY.values()
    }
    return json.dumps(doc, indent=2)
