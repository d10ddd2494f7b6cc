"""Sequential reference parser and test-packet generation.

The reference walks the original (untransformed) parse graph one header at a
time over the packet viewed as a single big integer.  It shares no code with
the pipeline model beyond the parser IR, so agreement between the two is a
meaningful check.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .graph import assign_header_ids
from .model import END, REJECT, HeaderTypeSpec, ParseGraph, ParseState
from .sim import PHV


class PacketSpecError(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    phvs: tuple[PHV, ...]
    trail: tuple[str, ...]
    consumed_bits: int
    exception: tuple[str, str] | None


def _size_ok(ht: HeaderTypeSpec, value: int) -> bool:
    if ht.valid_size_field_values is not None:
        return value in ht.valid_size_field_values
    return ht.fixed_bits <= ht.size_expr(value) <= ht.max_size_bits


def _next_state(s: ParseState, key: int | None) -> str:
    for t in s.transitions:
        if t.match_value == key:
            return t.next_state
    return s.default_transition


def reference_parse(g: ParseGraph, packet: bytes, packet_id: int = 0,
                    ids: dict[str, int] | None = None) -> OracleResult:
    ids = ids if ids is not None else assign_header_ids(g)
    n = 8 * len(packet)
    value = int.from_bytes(packet, "big")

    def bits(pos: int, width: int) -> int:
        return (value >> (n - pos - width)) & ((1 << width) - 1)

    pos, state = 0, g.root
    phvs: list[PHV] = []
    trail: list[str] = []
    exception = None

    def fail(reason: str) -> None:
        nonlocal exception
        phvs.append(PHV(ids[state], packet_id, 0, 0, False, state, reason))
        exception = (state, reason)

    while state != END:
        s = g.states[state]
        ht = s.header_type
        trail.append(state)
        if ht.size_expr is not None:
            off, width = ht.field_slice(ht.size_expr.field)
            if pos + off + width > n:
                fail("truncated")
                break
            field_value = bits(pos + off, width)
            if not _size_ok(ht, field_value):
                fail("invalid_size")
                break
            size = ht.size_expr(field_value)
        else:
            size = ht.max_size_bits
        if pos + size > n:
            fail("truncated")
            break
        key = bits(pos + s.key.offset_bits, s.key.width_bits) if s.key is not None else None
        nxt = _next_state(s, key)
        reason = None
        if nxt == REJECT:
            reason = "no_match" if s.key is not None else "reject"
        phvs.append(PHV(ids[state], packet_id, bits(pos, size), size, True, state, reason))
        pos += size
        if reason is not None:
            exception = (state, reason)
            break
        state = nxt
    return OracleResult(tuple(phvs), tuple(trail), pos, exception)


# ------------------------------------------------------------ generation

@dataclass(frozen=True)
class PacketSpec:
    header_sequence: tuple[tuple[str, dict[str, int]], ...]
    payload_len_bytes: int = 0

    @classmethod
    def of(cls, *names: str, payload: int = 0, **overrides: dict[str, int]) -> PacketSpec:
        return cls(tuple((n, dict(overrides.get(n, {}))) for n in names), payload)

    def to_dict(self) -> dict:
        return {"headers": [{"state": n, "fields": dict(f)} for n, f in self.header_sequence],
                "payload_len_bytes": self.payload_len_bytes}

    @classmethod
    def from_dict(cls, doc: dict) -> PacketSpec:
        try:
            seq = tuple((h["state"], {k: int(v) for k, v in h.get("fields", {}).items()})
                        for h in doc["headers"])
            return cls(seq, int(doc.get("payload_len_bytes", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise PacketSpecError(f"malformed packet spec: {exc}") from None


def load_packet_specs(text: str) -> list[PacketSpec]:
    """A JSON list of packet specs, or a single one."""
    doc = json.loads(text)
    docs = doc if isinstance(doc, list) else [doc]
    return [PacketSpec.from_dict(d) for d in docs]


def _set(value: int, size: int, off: int, width: int, v: int) -> int:
    shift = size - off - width
    mask = ((1 << width) - 1) << shift
    return (value & ~mask) | (v << shift)


@dataclass
class _Built:
    value: int = 0
    nbits: int = 0
    headers: list[tuple[str, int, int]] = field(default_factory=list)  # (state, offset, size)


def _key_for(s: ParseState, nxt: str, rng: random.Random) -> int | None:
    if s.key is None:
        if s.default_transition != nxt:
            raise PacketSpecError(f"{s.name} cannot be followed by {nxt}")
        return None
    hits = [t.match_value for t in s.transitions if t.next_state == nxt]
    if hits:
        return rng.choice(hits)
    if s.default_transition != nxt:
        raise PacketSpecError(f"{s.name} cannot be followed by {nxt}")
    used = {t.match_value for t in s.transitions}
    if len(used) >= 1 << s.key.width_bits:
        raise PacketSpecError(f"{s.name}: every key value is taken, {nxt} is unreachable")
    while True:
        k = rng.getrandbits(s.key.width_bits)
        if k not in used:
            return k


def _build(g: ParseGraph, spec: PacketSpec, rng: random.Random) -> tuple[bytes, _Built]:
    seq = spec.header_sequence
    if not seq or seq[0][0] != g.root:
        raise PacketSpecError(f"a packet must start with {g.root}")
    b = _Built()
    for i, (name, overrides) in enumerate(seq):
        if name not in g.states:
            raise PacketSpecError(f"unknown state {name!r}")
        s = g.states[name]
        ht = s.header_type
        nxt = seq[i + 1][0] if i + 1 < len(seq) else END
        if ht.size_expr is not None:
            sf = ht.size_expr.field
            fv = overrides.get(sf)
            if fv is None:
                fv = rng.choice(ht.size_domain())
            elif not _size_ok(ht, fv):
                raise PacketSpecError(f"{name}.{sf}={fv} is not a legal size value")
            size = ht.size_expr(fv)
        else:
            size = ht.max_size_bits
        hv = rng.getrandbits(size)
        if ht.size_expr is not None:
            hv = _set(hv, size, *ht.field_slice(ht.size_expr.field), fv)
        key = _key_for(s, nxt, rng)
        if key is not None:
            hv = _set(hv, size, s.key.offset_bits, s.key.width_bits, key)
        for fname, fval in overrides.items():
            try:
                off, width = ht.field_slice(fname)
            except KeyError:
                raise PacketSpecError(f"{ht.name} has no field {fname!r}") from None
            if width == 0:
                raise PacketSpecError(f"{name}.{fname} is variable-length and cannot be set")
            if not 0 <= fval < 1 << width:
                raise PacketSpecError(f"{name}.{fname}={fval} does not fit {width} bits")
            hv = _set(hv, size, off, width, fval)
        if s.key is not None:
            k = (hv >> (size - s.key.offset_bits - s.key.width_bits)) & ((1 << s.key.width_bits) - 1)
            if _next_state(s, k) != nxt:
                raise PacketSpecError(f"{name}: field overrides make the key select "
                                      f"{_next_state(s, k)} instead of {nxt}")
        if ht.size_expr is not None:
            off, width = ht.field_slice(ht.size_expr.field)
            if (hv >> (size - off - width)) & ((1 << width) - 1) != fv:
                raise PacketSpecError(f"{name}: the key overlaps the size field")
        b.headers.append((name, b.nbits, size))
        b.value = (b.value << size) | hv
        b.nbits += size
    if b.nbits % 8:
        raise PacketSpecError(f"headers total {b.nbits} bits, not a whole number of bytes")
    data = b.value.to_bytes(b.nbits // 8, "big") + rng.randbytes(spec.payload_len_bytes)
    return data, b


def gen_packet(g: ParseGraph, spec: PacketSpec, seed: int = 0) -> bytes:
    """Well-formed packet following ``spec``; random fields come from ``seed``."""
    return _build(g, spec, random.Random(seed))[0]


def random_packet_spec(g: ParseGraph, rng: random.Random, max_payload: int = 64) -> PacketSpec:
    """Random root-to-END walk through the original graph."""
    seq, state = [], g.root
    while state != END:
        seq.append((state, {}))
        state = rng.choice(sorted(set(g.states[state].targets()) - {REJECT}))
    return PacketSpec(tuple(seq), rng.randint(0, max_payload))


@dataclass(frozen=True)
class CorpusPacket:
    data: bytes
    spec: PacketSpec
    kind: str  # well_formed, truncated, unknown_key, invalid_size


def _poke(data: bytes, pos: int, width: int, v: int) -> bytes:
    n = 8 * len(data)
    value = _set(int.from_bytes(data, "big"), n, pos, width, v)
    return value.to_bytes(len(data), "big")


def _malform(g: ParseGraph, data: bytes, built: _Built, kind: str, rng: random.Random) -> bytes | None:
    if kind == "truncated":
        return data[:rng.randrange(1, len(data))] if len(data) > 1 else None
    spots = []
    for name, off, _ in built.headers:
        s = g.states[name]
        if kind == "unknown_key" and s.key is not None:
            used = {t.match_value for t in s.transitions}
            if len(used) < 1 << s.key.width_bits:
                spots.append((off + s.key.offset_bits, s.key.width_bits, used))
        if kind == "invalid_size" and s.header_type.size_expr is not None:
            ht = s.header_type
            f_off, width = ht.field_slice(ht.size_expr.field)
            used = set(v for v in range(1 << width) if _size_ok(ht, v))
            if len(used) < 1 << width:
                spots.append((off + f_off, width, used))
    if not spots:
        return None
    pos, width, used = rng.choice(spots)
    while True:
        v = rng.getrandbits(width)
        if v not in used:
            return _poke(data, pos, width, v)


def random_corpus(g: ParseGraph, n: int, seed: int = 0, malformed: float = 0.3,
                  max_payload: int = 64) -> list[CorpusPacket]:
    """Mostly well-formed packets plus truncated, unknown-key and bad-size ones.

    Malformations are applied after generation, so a label says what was done
    to the packet, not what the parser will report; the reference decides that.
    """
    master = random.Random(seed)
    out = []
    for _ in range(n):
        rng = random.Random(master.getrandbits(64))
        spec = random_packet_spec(g, rng, max_payload)
        data, built = _build(g, spec, rng)
        kind = "well_formed"
        if rng.random() < malformed:
            want = rng.choice(("truncated", "unknown_key", "invalid_size"))
            bad = _malform(g, data, built, want, rng)
            if bad is not None:
                data, kind = bad, want
        out.append(CorpusPacket(data, spec, kind))
    return out
