"""Parser intermediate representation and the parser-spec JSON loader.

A parser spec is a small subset of what a P4 back end emits: header types
(fields, optional affine size expression) and parse states (transition key,
match entries, default).  All offsets and widths are in bits, numbered from
the MSB of the first byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from graphlib import CycleError, TopologicalSorter
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import jsonschema

END = "END"
REJECT = "REJECT"
RESERVED = (END, REJECT)


class SpecError(ValueError):
    """Invalid parser spec. ``path`` is a JSON path into the offending document."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


@dataclass(frozen=True)
class FieldSpec:
    name: str
    width_bits: int  # 0 marks the variable-length remainder
    is_size_field: bool = False

    @property
    def varbit(self) -> bool:
        return self.width_bits == 0


@dataclass(frozen=True)
class SizeExpr:
    """Header size in bits = multiplier * value(field) + addend."""

    field: str
    multiplier: int
    addend: int

    def __call__(self, value: int) -> int:
        return self.multiplier * value + self.addend


@dataclass(frozen=True)
class HeaderTypeSpec:
    name: str
    fields: tuple[FieldSpec, ...]
    max_size_bits: int
    size_expr: SizeExpr | None = None
    valid_size_field_values: frozenset[int] | None = None

    @property
    def variable(self) -> bool:
        return self.size_expr is not None

    @cached_property
    def fixed_bits(self) -> int:
        return sum(f.width_bits for f in self.fields)

    def field_slice(self, name: str) -> tuple[int, int]:
        """(offset, width) of a fixed-width field."""
        off = 0
        for f in self.fields:
            if f.name == name:
                return off, f.width_bits
            off += f.width_bits
        raise KeyError(name)

    @cached_property
    def size_field(self) -> tuple[int, int] | None:
        if self.size_expr is None:
            return None
        return self.field_slice(self.size_expr.field)

    def size_domain(self) -> tuple[int, ...]:
        """Size-field values that yield a legal header, ascending."""
        if self.size_expr is None:
            return ()
        if self.valid_size_field_values is not None:
            return tuple(sorted(self.valid_size_field_values))
        _, width = self.size_field
        return tuple(v for v in range(1 << width)
                     if self.fixed_bits <= self.size_expr(v) <= self.max_size_bits)

    def valid_sizes(self) -> tuple[int, ...]:
        if self.size_expr is None:
            return (self.max_size_bits,)
        return tuple(sorted({self.size_expr(v) for v in self.size_domain()}))


@dataclass(frozen=True)
class TransitionKeySpec:
    offset_bits: int
    width_bits: int


@dataclass(frozen=True)
class TransitionEntry:
    match_value: int
    next_state: str


@dataclass(frozen=True)
class ParseState:
    name: str
    header_type: HeaderTypeSpec
    key: TransitionKeySpec | None = None
    transitions: tuple[TransitionEntry, ...] = ()
    default_transition: str = REJECT

    @property
    def is_accept_path_terminal(self) -> bool:
        return not self.transitions and self.default_transition == END

    def targets(self) -> list[str]:
        """Successor nodes, REJECT excluded, in first-seen order."""
        out = []
        for t in self.transitions:
            if t.next_state not in out:
                out.append(t.next_state)
        if self.default_transition != REJECT and self.default_transition not in out:
            out.append(self.default_transition)
        return out


@dataclass(frozen=True)
class ParseGraph:
    states: Mapping[str, ParseState]
    root: str
    edges: frozenset[tuple[str, str]]
    header_types: Mapping[str, HeaderTypeSpec] = field(default_factory=dict)

    @property
    def nodes(self) -> list[str]:
        return [*self.states, END]

    def successors(self, node: str) -> list[str]:
        return sorted(v for u, v in self.edges if u == node)

    def with_edges(self, edges: Iterable[tuple[str, str]]) -> ParseGraph:
        return ParseGraph(self.states, self.root, frozenset(edges), self.header_types)


def derive_edges(states: Mapping[str, ParseState]) -> frozenset[tuple[str, str]]:
    return frozenset((s.name, t) for s in states.values() for t in s.targets())


def make_graph(states: Iterable[ParseState], root: str,
               header_types: Mapping[str, HeaderTypeSpec] | None = None) -> ParseGraph:
    smap = {s.name: s for s in states}
    if header_types is None:
        header_types = {s.header_type.name: s.header_type for s in smap.values()}
    return ParseGraph(smap, root, derive_edges(smap), dict(header_types))


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    code: str
    message: str
    node: str | None = None


def _find_cycle(g: ParseGraph) -> list[str] | None:
    ts = TopologicalSorter({n: set() for n in g.nodes})
    for u, v in sorted(g.edges):
        ts.add(v, u)
    try:
        ts.prepare()
    except CycleError as exc:
        return list(exc.args[1])
    return None


def _reach(g: ParseGraph, start: str, reverse: bool = False) -> set[str]:
    adj: dict[str, list[str]] = {}
    for u, v in g.edges:
        a, b = (v, u) if reverse else (u, v)
        adj.setdefault(a, []).append(b)
    seen = {start}
    todo = [start]
    while todo:
        for nxt in adj.get(todo.pop(), ()):
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return seen


def validate_graph(g: ParseGraph) -> list[Diagnostic]:
    """Check the graph-level invariants; an empty list means the graph is usable."""
    diags: list[Diagnostic] = []
    nodes = set(g.nodes)
    for u, v in sorted(g.edges):
        if u not in nodes or v not in nodes:
            diags.append(Diagnostic("error", "dangling-edge", f"edge {u} -> {v} leaves the graph", u))
    if g.root not in g.states:
        diags.append(Diagnostic("error", "missing-root", f"root {g.root!r} is not a state"))
        return diags
    cycle = _find_cycle(g)
    if cycle:
        diags.append(Diagnostic("error", "cycle", "cycle detected: " + " -> ".join(cycle), cycle[0]))
    for name in sorted(set(g.states) - _reach(g, g.root)):
        diags.append(Diagnostic("error", "unreachable", f"unreachable state {name!r}", name))
    for name in sorted(set(g.states) - _reach(g, END, reverse=True)):
        diags.append(Diagnostic("error", "no-end", f"END is not reachable from {name!r}", name))
    for s in g.states.values():
        if s.key is None:
            continue
        for t in s.transitions:
            if t.match_value >= 1 << s.key.width_bits:
                diags.append(Diagnostic("error", "key-width",
                                        f"{s.name}: value {t.match_value:#x} exceeds {s.key.width_bits}-bit key",
                                        s.name))
    return diags


# ---------------------------------------------------------------- loading

def _schema() -> dict:
    text = resources.files(__package__).joinpath("parser_spec.schema.json").read_text()
    return json.loads(text)


def _load_header_type(doc: dict, path: str) -> HeaderTypeSpec:
    name = doc["name"]
    if name in RESERVED:
        raise SpecError(f"{path}.name", f"{name!r} is reserved")
    sx = doc.get("size_expr")
    size_field = sx["field"] if sx else None
    fields = []
    seen = set()
    for i, f in enumerate(doc["fields"]):
        fpath = f"{path}.fields[{i}]"
        if f["name"] in seen:
            raise SpecError(f"{fpath}.name", f"duplicate field {f['name']!r}")
        seen.add(f["name"])
        width = 0 if f["width"] == "*" else f["width"]
        if width == 0:
            if sx is None:
                raise SpecError(f"{fpath}.width", "variable-length field in a fixed-size header")
            if i != len(doc["fields"]) - 1:
                raise SpecError(f"{fpath}.width", "variable-length field must be last")
        fields.append(FieldSpec(f["name"], width, f["name"] == size_field))
    fixed = sum(f.width_bits for f in fields)

    if sx is None:
        max_bits = doc.get("max_size_bits", fixed)
        if max_bits != fixed:
            raise SpecError(f"{path}.max_size_bits",
                            f"fixed-size header: {max_bits} != sum of field widths {fixed}")
        if "valid_size_values" in doc:
            raise SpecError(f"{path}.valid_size_values", "only meaningful with size_expr")
        return HeaderTypeSpec(name, tuple(fields), max_bits)

    if "max_size_bits" not in doc:
        raise SpecError(path, "variable-size header needs max_size_bits")
    max_bits = doc["max_size_bits"]
    if fixed > max_bits:
        raise SpecError(f"{path}.max_size_bits", f"fixed fields ({fixed} bits) exceed {max_bits}")
    sf = [f for f in fields if f.is_size_field]
    if not sf:
        raise SpecError(f"{path}.size_expr.field", f"no field named {size_field!r}")
    if sf[0].varbit:
        raise SpecError(f"{path}.size_expr.field", "size field must have a fixed width")
    expr = SizeExpr(size_field, sx["mul"], sx["add"])
    valid = None
    if "valid_size_values" in doc:
        valid = frozenset(doc["valid_size_values"])
        for v in sorted(valid):
            if v >= 1 << sf[0].width_bits:
                raise SpecError(f"{path}.valid_size_values", f"{v} does not fit the size field")
            size = expr(v)
            if not 0 < size <= max_bits or size < fixed:
                raise SpecError(f"{path}.valid_size_values",
                                f"value {v} gives size {size}, outside [{fixed}, {max_bits}]")
    ht = HeaderTypeSpec(name, tuple(fields), max_bits, expr, valid)
    if not ht.size_domain():
        raise SpecError(f"{path}.size_expr", "no size-field value yields a legal size")
    return ht


def _load_state(doc: dict, path: str, types: Mapping[str, HeaderTypeSpec]) -> ParseState:
    name = doc["name"]
    if name in RESERVED:
        raise SpecError(f"{path}.name", f"{name!r} is reserved")
    if doc["header_type"] not in types:
        raise SpecError(f"{path}.header_type", f"unknown header type {doc['header_type']!r}")
    ht = types[doc["header_type"]]
    key = None
    if "key" in doc:
        key = TransitionKeySpec(doc["key"]["offset"], doc["key"]["width"])
        if key.offset_bits + key.width_bits > ht.fixed_bits:
            raise SpecError(f"{path}.key",
                            f"key bits {key.offset_bits}..{key.offset_bits + key.width_bits - 1} "
                            f"fall outside the fixed part of {ht.name} ({ht.fixed_bits} bits)")
    entries = []
    seen = set()
    for i, t in enumerate(doc.get("transitions", [])):
        tpath = f"{path}.transitions[{i}]"
        if key is None:
            raise SpecError(tpath, "transitions need a key")
        if t["value"] >= 1 << key.width_bits:
            raise SpecError(f"{tpath}.value", f"{t['value']:#x} does not fit a {key.width_bits}-bit key")
        if t["value"] in seen:
            raise SpecError(f"{tpath}.value", f"duplicate match value {t['value']:#x}")
        if t["next"] == REJECT:
            raise SpecError(f"{tpath}.next", "REJECT is only allowed as default")
        seen.add(t["value"])
        entries.append(TransitionEntry(t["value"], t["next"]))
    default = doc.get("default", REJECT)
    if not entries and default not in RESERVED:
        raise SpecError(f"{path}.default", "a state without transitions must default to END or REJECT")
    return ParseState(name, ht, key, tuple(entries), default)


def parse_spec_document(doc: dict) -> ParseGraph:
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        raise SpecError(exc.json_path, exc.message) from None

    types: dict[str, HeaderTypeSpec] = {}
    for i, h in enumerate(doc["header_types"]):
        if h["name"] in types:
            raise SpecError(f"$.header_types[{i}].name", f"duplicate header type {h['name']!r}")
        types[h["name"]] = _load_header_type(h, f"$.header_types[{i}]")

    states: dict[str, ParseState] = {}
    for i, s in enumerate(doc["parse_states"]):
        if s["name"] in states:
            raise SpecError(f"$.parse_states[{i}].name", f"duplicate state {s['name']!r}")
        states[s["name"]] = _load_state(s, f"$.parse_states[{i}]", types)

    names = set(states) | {END}
    for i, s in enumerate(doc["parse_states"]):
        st = states[s["name"]]
        for j, t in enumerate(st.transitions):
            if t.next_state not in names:
                raise SpecError(f"$.parse_states[{i}].transitions[{j}].next",
                                f"unknown state {t.next_state!r}")
        if st.default_transition not in names | {REJECT}:
            raise SpecError(f"$.parse_states[{i}].default", f"unknown state {st.default_transition!r}")
    if doc["root"] not in states:
        raise SpecError("$.root", f"unknown state {doc['root']!r}")

    g = ParseGraph(states, doc["root"], derive_edges(states), types)
    diags = validate_graph(g)
    if diags:
        d = diags[0]
        where = "$.root" if d.node is None else _state_path(doc, d.node)
        raise SpecError(where, d.message)
    return g


def _state_path(doc: dict, name: str) -> str:
    for i, s in enumerate(doc["parse_states"]):
        if s["name"] == name:
            return f"$.parse_states[{i}]"
    return "$"


def load_parser_spec(text: str) -> ParseGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError("$", f"not valid JSON: {exc}") from None
    return parse_spec_document(doc)


def load_parser_file(path: str | Path) -> ParseGraph:
    return load_parser_spec(Path(path).read_text())


def fixture_path(name: str) -> Path:
    """Path of a bundled parser spec, e.g. ``fixture_path("simple_parser.json")``."""
    return Path(str(resources.files(__package__).joinpath("fixtures").joinpath(name)))


def spec_to_document(g: ParseGraph) -> dict:
    types = []
    for ht in g.header_types.values():
        d: dict = {"name": ht.name,
                   "fields": [{"name": f.name, "width": "*" if f.varbit else f.width_bits}
                              for f in ht.fields]}
        if ht.size_expr is not None:
            d["max_size_bits"] = ht.max_size_bits
            d["size_expr"] = {"field": ht.size_expr.field, "mul": ht.size_expr.multiplier,
                              "add": ht.size_expr.addend}
            if ht.valid_size_field_values is not None:
                d["valid_size_values"] = sorted(ht.valid_size_field_values)
        types.append(d)
    states = []
    for s in g.states.values():
        d = {"name": s.name, "header_type": s.header_type.name}
        if s.key is not None:
            d["key"] = {"offset": s.key.offset_bits, "width": s.key.width_bits}
        if s.transitions:
            d["transitions"] = [{"value": t.match_value, "next": t.next_state} for t in s.transitions]
        d["default"] = s.default_transition
        states.append(d)
    return {"header_types": types, "parse_states": states, "root": g.root}


def dump_parser_spec(g: ParseGraph) -> str:
    return json.dumps(spec_to_document(g), indent=2) + "\n"
