"""Per-engine header layouts, precomputed shift ROMs and the pipeline plan."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import ceil

from .graph import LeveledGraph, assign_header_ids, transform
from .model import END, REJECT, ParseGraph, ParseState

END_ID = 0xFF
REJECT_ID = 0xFE


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class ShiftRom:
    """Shift amounts stored per header size instead of computed by a dynamic shifter.

    ``align_right[s]`` is ``s mod bus``: where the next header starts inside the
    header's tail word, i.e. how far that word moves toward the MSB.
    ``align_left[s]`` is the complement: how far the following word moves toward
    the LSB to fill the gap.  ``extract_shifts[k]`` places bus word ``k`` of the
    header into the extraction accumulator.
    """

    extract_shifts: dict[int, int]
    align_left: dict[int, int]
    align_right: dict[int, int]


@dataclass(frozen=True)
class HeaderLayout:
    this_header: int
    name: str
    header_type: str
    max_size_bits: int
    key_location_bits: int | None
    key_width: int
    key_mask: int
    key_word_index: int | None
    key_shift: int | None
    match_table: tuple[tuple[int, int], ...]
    default_next: int
    fixed_size_bits: int | None
    size_lut: dict[int, int] | None
    size_field_location: int | None
    size_field_width: int
    size_word_index: int | None
    size_shift: int | None
    last_header: bool
    roms: ShiftRom
    bus_width_bits: int

    @cached_property
    def table(self) -> dict[int, int]:
        return dict(self.match_table)

    @property
    def n_words(self) -> int:
        return len(self.roms.extract_shifts)


def _in_word(offset: int, width: int, bus_width: int) -> tuple[int, int]:
    """(word index, right shift that brings the slice to bit 0 of the word)."""
    word = offset // bus_width
    if (offset + width - 1) // bus_width != word:
        raise ValueError
    return word, bus_width - (offset - word * bus_width) - width


def build_shift_roms(ht, bus_width: int) -> ShiftRom:
    sizes = ht.valid_sizes()
    assert sizes, f"{ht.name}: empty size domain"
    n_words = ceil(ht.max_size_bits / bus_width)
    extract = {k: (n_words - 1 - k) * bus_width for k in range(n_words)}
    right = {s: s % bus_width for s in sizes}
    left = {s: (bus_width - right[s]) % bus_width for s in sizes}
    return ShiftRom(extract, left, right)


def build_header_layout(state: ParseState, bus_width: int, ids: dict[str, int]) -> HeaderLayout:
    ht = state.header_type

    def node_id(name: str) -> int:
        return {END: END_ID, REJECT: REJECT_ID}.get(name, ids.get(name, REJECT_ID))

    key_loc = key_word = key_shift = None
    key_width = key_mask = 0
    if state.key is not None:
        key_loc, key_width = state.key.offset_bits, state.key.width_bits
        key_mask = (1 << key_width) - 1
        try:
            key_word, key_shift = _in_word(key_loc, key_width, bus_width)
        except ValueError:
            raise LayoutError(
                f"{state.name}: key bits {key_loc}..{key_loc + key_width - 1} straddle a "
                f"{bus_width}-bit word boundary; use a wider bus or split the key") from None

    fixed = lut = sf_loc = sf_word = sf_shift = None
    sf_width = 0
    if ht.size_expr is None:
        fixed = ht.max_size_bits
    else:
        lut = {v: ht.size_expr(v) for v in ht.size_domain()}
        sf_loc, sf_width = ht.size_field
        try:
            sf_word, sf_shift = _in_word(sf_loc, sf_width, bus_width)
        except ValueError:
            raise LayoutError(
                f"{state.name}: size field {ht.size_expr.field} straddles a "
                f"{bus_width}-bit word boundary") from None

    return HeaderLayout(
        this_header=ids[state.name],
        name=state.name,
        header_type=ht.name,
        max_size_bits=ht.max_size_bits,
        key_location_bits=key_loc,
        key_width=key_width,
        key_mask=key_mask,
        key_word_index=key_word,
        key_shift=key_shift,
        match_table=tuple((t.match_value, node_id(t.next_state)) for t in state.transitions),
        default_next=node_id(state.default_transition),
        fixed_size_bits=fixed,
        size_lut=lut,
        size_field_location=sf_loc,
        size_field_width=sf_width,
        size_word_index=sf_word,
        size_shift=sf_shift,
        last_header=not state.transitions,
        roms=build_shift_roms(ht, bus_width),
        bus_width_bits=bus_width,
    )


@dataclass(frozen=True)
class PipelinePlan:
    bus_width_bits: int
    root: int
    levels: tuple[tuple[int, ...], ...]
    engines: dict[int, HeaderLayout]
    mux_levels: frozenset[int]
    depth_cycles: int
    names: dict[int, str] = field(default_factory=dict)

    def name_of(self, header_id: int) -> str:
        if header_id == END_ID:
            return END
        if header_id == REJECT_ID:
            return REJECT
        return self.engines[header_id].name

    @property
    def ids(self) -> dict[str, int]:
        return {lay.name: i for i, lay in self.engines.items()}


def build_pipeline_plan(lg: LeveledGraph, layouts: dict[str, HeaderLayout], bus_width: int) -> PipelinePlan:
    by_level: dict[int, list[int]] = {}
    for name, lay in layouts.items():
        by_level.setdefault(lg.level[name], []).append(lay.this_header)
    n_levels = lg.level[END]
    levels = tuple(tuple(sorted(by_level.get(i, ()))) for i in range(n_levels))
    assert all(levels), "every level holds at least one engine"
    engines = {lay.this_header: lay for lay in sorted(layouts.values(), key=lambda x: x.this_header)}
    return PipelinePlan(
        bus_width_bits=bus_width,
        root=layouts[lg.base.root].this_header,
        levels=levels,
        engines=engines,
        mux_levels=frozenset(i for i, lvl in enumerate(levels) if len(lvl) > 1),
        depth_cycles=n_levels + 1,
        names={i: lay.name for i, lay in engines.items()},
    )


def compile_plan(g: ParseGraph, bus_width: int = 320) -> PipelinePlan:
    if bus_width <= 0 or bus_width % 8:
        raise LayoutError(f"bus width must be a positive multiple of 8, got {bus_width}")
    if len(g.states) >= REJECT_ID:
        raise LayoutError(f"at most {REJECT_ID - 1} states fit the header id space")
    _, lg = transform(g)
    ids = assign_header_ids(g)
    layouts = {n: build_header_layout(s, bus_width, ids) for n, s in g.states.items()}
    return build_pipeline_plan(lg, layouts, bus_width)


# ------------------------------------------------------------------ stats

def _fmt(x: Fraction) -> str:
    if x.denominator == 1:
        return str(x.numerator)
    return format(float(x), "g")


def rom_usage(lay: HeaderLayout, bus_width: int) -> dict[str, int]:
    """ROM entry and bit counts of one engine."""
    shift_bits = max(1, (bus_width - 1).bit_length())
    r = lay.roms
    entries = len(r.align_left) + len(r.align_right)
    bits = entries * shift_bits
    ext_bits = max(1, max(r.extract_shifts.values()).bit_length())
    entries += len(r.extract_shifts)
    bits += len(r.extract_shifts) * ext_bits
    if lay.size_lut:
        entries += len(lay.size_lut)
        bits += len(lay.size_lut) * lay.max_size_bits.bit_length()
    return {"entries": entries, "bits": bits}


def plan_stats(plan: PipelinePlan, clock_mhz: float | str | None = None) -> dict[str, str]:
    """Ordered report rows; throughput and latency only when a clock is given."""
    usage = [rom_usage(lay, plan.bus_width_bits) for lay in plan.engines.values()]
    rows = {
        "bus_width_bits": str(plan.bus_width_bits),
        "levels": str(len(plan.levels)),
        "depth_cycles": str(plan.depth_cycles),
        "engines": str(len(plan.engines)),
        "engines_per_level": "/".join(str(len(lvl)) for lvl in plan.levels),
        "mux_levels": "/".join(str(i) for i in sorted(plan.mux_levels)) or "-",
        "match_entries": str(sum(len(lay.match_table) for lay in plan.engines.values())),
        "rom_entries": str(sum(u["entries"] for u in usage)),
        "rom_bits": str(sum(u["bits"] for u in usage)),
    }
    if clock_mhz is not None:
        mhz = Fraction(str(clock_mhz))
        rows["clock_mhz"] = _fmt(mhz)
        rows["latency_ns"] = _fmt(plan.depth_cycles * 1000 / mhz)
        rows["throughput_gbps"] = _fmt(plan.bus_width_bits * mhz / 1000)
    return rows


# ------------------------------------------------------------- plan JSON

def _int_keys(d: dict) -> dict[int, int]:
    return {int(k): v for k, v in d.items()}


def layout_to_dict(lay: HeaderLayout) -> dict:
    return {
        "this_header": lay.this_header,
        "name": lay.name,
        "header_type": lay.header_type,
        "max_size_bits": lay.max_size_bits,
        "key_location_bits": lay.key_location_bits,
        "key_width": lay.key_width,
        "key_mask": lay.key_mask,
        "key_word_index": lay.key_word_index,
        "key_shift": lay.key_shift,
        "match_table": [list(e) for e in lay.match_table],
        "default_next": lay.default_next,
        "fixed_size_bits": lay.fixed_size_bits,
        "size_lut": None if lay.size_lut is None else {str(k): v for k, v in lay.size_lut.items()},
        "size_field_location": lay.size_field_location,
        "size_field_width": lay.size_field_width,
        "size_word_index": lay.size_word_index,
        "size_shift": lay.size_shift,
        "last_header": lay.last_header,
        "roms": {
            "extract_shifts": {str(k): v for k, v in lay.roms.extract_shifts.items()},
            "align_left": {str(k): v for k, v in lay.roms.align_left.items()},
            "align_right": {str(k): v for k, v in lay.roms.align_right.items()},
        },
    }


def layout_from_dict(d: dict, bus_width: int) -> HeaderLayout:
    roms = d["roms"]
    return HeaderLayout(
        this_header=d["this_header"],
        name=d["name"],
        header_type=d["header_type"],
        max_size_bits=d["max_size_bits"],
        key_location_bits=d["key_location_bits"],
        key_width=d["key_width"],
        key_mask=d["key_mask"],
        key_word_index=d["key_word_index"],
        key_shift=d["key_shift"],
        match_table=tuple((v, n) for v, n in d["match_table"]),
        default_next=d["default_next"],
        fixed_size_bits=d["fixed_size_bits"],
        size_lut=None if d["size_lut"] is None else _int_keys(d["size_lut"]),
        size_field_location=d["size_field_location"],
        size_field_width=d["size_field_width"],
        size_word_index=d["size_word_index"],
        size_shift=d["size_shift"],
        last_header=d["last_header"],
        roms=ShiftRom(_int_keys(roms["extract_shifts"]), _int_keys(roms["align_left"]),
                      _int_keys(roms["align_right"])),
        bus_width_bits=bus_width,
    )


def plan_to_json(plan: PipelinePlan) -> str:
    doc = {
        "bus_width": plan.bus_width_bits,
        "root": plan.root,
        "end_id": END_ID,
        "reject_id": REJECT_ID,
        "levels": [list(lvl) for lvl in plan.levels],
        "mux_levels": sorted(plan.mux_levels),
        "depth_cycles": plan.depth_cycles,
        "engines": {str(i): layout_to_dict(lay) for i, lay in plan.engines.items()},
    }
    return json.dumps(doc, indent=1) + "\n"


def plan_from_json(text: str) -> PipelinePlan:
    doc = json.loads(text)
    try:
        engines = {int(k): layout_from_dict(v, doc["bus_width"]) for k, v in doc["engines"].items()}
        return PipelinePlan(
            bus_width_bits=doc["bus_width"],
            root=doc["root"],
            levels=tuple(tuple(lvl) for lvl in doc["levels"]),
            engines=engines,
            mux_levels=frozenset(doc["mux_levels"]),
            depth_cycles=doc["depth_cycles"],
            names={i: lay.name for i, lay in engines.items()},
        )
    except (KeyError, TypeError) as exc:
        raise LayoutError(f"malformed plan document: {exc}") from None
