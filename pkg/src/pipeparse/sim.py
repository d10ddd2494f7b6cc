"""Cycle-accurate, bit-exact model of the compiled parser pipeline.

Data moves MSB-first: bus word 0 carries the first ``bus_width/8`` packet
bytes, and packet bit 0 is the MSB of the word.  Each level owns one register
(the alignment delay register) and the pipeline ends in an output register, so
a word entering level 0 at cycle ``t`` leaves the pipeline at
``t + depth_cycles``.

A level forwards one slot for every slot it receives.  Slots whose bits were
all consumed by a header upstream carry ``valid_bits == 0``.  That keeps the
stream timing fixed: the pipeline never stalls and never compresses a packet.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .layout import END_ID, REJECT_ID, HeaderLayout, PipelinePlan


class PipelineProtocolError(RuntimeError):
    """Input words violate the packet framing rules."""


@dataclass(slots=True)
class BusWord:
    data: int
    start: bool
    end: bool
    valid: bool
    packet_id: int
    valid_bits: int


@dataclass(frozen=True)
class PHV:
    header_id: int
    packet_id: int
    bits: int
    bit_count: int
    valid: bool
    header: str = ""
    exception: str | None = None

    def key(self) -> tuple:
        """Everything that must agree between pipeline and reference."""
        return (self.header, self.bit_count, self.bits, self.valid, self.exception)

    def to_record(self) -> dict:
        rec = {
            "packet_id": self.packet_id,
            "header": self.header,
            "bit_count": self.bit_count,
            "bits_hex": format(self.bits, f"0{(self.bit_count + 3) // 4}x") if self.bit_count else "",
            "valid": self.valid,
        }
        if self.exception is not None:
            rec["exception"] = self.exception
        return rec


@dataclass(slots=True)
class EngineState:
    received_bits: int = 0
    received_words: int = 0
    phv_accum: int = 0
    header_size_latched: int | None = None
    size_field_value: int | None = None
    header_valid: bool = False
    done: bool = False
    next_header: int = REJECT_ID
    next_header_valid: bool = False
    exception: str | None = None
    emitted_words: int = 0

    def reset(self) -> None:
        self.received_bits = self.received_words = self.phv_accum = 0
        self.header_size_latched = self.size_field_value = None
        self.header_valid = self.done = self.next_header_valid = False
        self.next_header = REJECT_ID
        self.exception = None
        self.emitted_words = 0


class TransitionOut(NamedTuple):
    next_header: int
    next_header_valid: bool
    header_exception: bool
    valid_header: bool


class ExtractOut(NamedTuple):
    phv: PHV | None
    header_done: bool
    header_size: int | None
    header_size_field: int | None


def state_transition_step(layout: HeaderLayout, st: EngineState, w: BusWord,
                          next_header_in: int) -> TransitionOut:
    """Resolve the next header once the key word arrives; hold it afterwards."""
    if next_header_in != layout.this_header:
        return TransitionOut(next_header_in, False, False, False)
    st.header_valid = True
    k = st.received_words
    resolve = (k == 0) if layout.key_word_index is None else (k == layout.key_word_index)
    if resolve and not st.done:
        if layout.key_word_index is None:
            st.next_header = layout.default_next
        else:
            key = (w.data >> layout.key_shift) & layout.key_mask
            st.next_header = layout.table.get(key, layout.default_next)
        st.next_header_valid = st.next_header != REJECT_ID
        return TransitionOut(st.next_header, st.next_header_valid, not st.next_header_valid, True)
    return TransitionOut(st.next_header, st.next_header_valid, False, True)


def _fail(layout: HeaderLayout, st: EngineState, w: BusWord, reason: str) -> ExtractOut:
    st.done = True
    st.exception = reason
    st.next_header = REJECT_ID
    st.next_header_valid = False
    phv = PHV(layout.this_header, w.packet_id, 0, 0, False, layout.name, reason)
    return ExtractOut(phv, True, st.header_size_latched, st.size_field_value)


def header_extraction_step(layout: HeaderLayout, st: EngineState, w: BusWord,
                           valid_header: bool) -> ExtractOut:
    """Accumulate header words; emit the PHV on the word that completes it."""
    if not valid_header or st.done:
        return ExtractOut(None, st.done, st.header_size_latched, st.size_field_value)
    bw = layout.bus_width_bits
    k = st.received_words
    if k == 0 and layout.fixed_size_bits is not None:
        st.header_size_latched = layout.fixed_size_bits
    st.received_bits += w.valid_bits
    st.received_words = k + 1
    if k == layout.size_word_index:
        field_end = layout.size_field_location - k * bw + layout.size_field_width
        if w.valid_bits < field_end:
            return _fail(layout, st, w, "truncated")
        value = (w.data >> layout.size_shift) & ((1 << layout.size_field_width) - 1)
        st.size_field_value = value
        size = layout.size_lut.get(value)
        if size is None:
            return _fail(layout, st, w, "invalid_size")
        st.header_size_latched = size
    st.phv_accum |= w.data << layout.roms.extract_shifts[k]
    size = st.header_size_latched
    if size is not None and bw * st.received_words >= size:
        if st.received_bits < size:
            return _fail(layout, st, w, "truncated")
        st.done = True
        bits = (st.phv_accum >> (layout.n_words * bw - size)) & ((1 << size) - 1)
        if st.next_header == REJECT_ID:
            st.exception = "no_match" if layout.key_word_index is not None else "reject"
        phv = PHV(layout.this_header, w.packet_id, bits, size, True, layout.name, st.exception)
        return ExtractOut(phv, True, size, st.size_field_value)
    if w.end:
        return _fail(layout, st, w, "truncated")
    return ExtractOut(None, False, size, st.size_field_value)


def _continues(prev: BusWord, w: BusWord | None) -> bool:
    return (w is not None and w.valid and not prev.end and not w.start
            and w.packet_id == prev.packet_id)


def pipeline_alignment_step(layout: HeaderLayout, st: EngineState, prev: BusWord,
                            w: BusWord | None, valid_header: bool) -> BusWord:
    """Build the outgoing slot from the delayed word and the word now arriving.

    Slots fully covered by the header leave empty.  From the header's tail word
    on, the tail is moved up by ``align_right[size]`` and the gap is filled
    with the top bits of the following word moved down by ``align_left[size]``.
    """
    if not valid_header:
        return prev
    bw = layout.bus_width_bits
    j = st.emitted_words
    st.emitted_words += 1
    size = st.header_size_latched
    if size is None or st.exception == "invalid_size" or j < size // bw:
        return BusWord(0, prev.start, prev.end, prev.valid, prev.packet_id, 0)
    r = layout.roms.align_right[size]
    if r == 0:
        return prev
    left = layout.roms.align_left[size]
    full = (1 << bw) - 1
    data = (prev.data << r) & full
    vb = max(0, prev.valid_bits - r)
    if _continues(prev, w):
        data |= w.data >> left
        vb += min(r, w.valid_bits)
    data = (data >> (bw - vb)) << (bw - vb) if vb else 0
    return BusWord(data, prev.start, prev.end, prev.valid, prev.packet_id, vb)


class HeaderEngine:
    def __init__(self, layout: HeaderLayout):
        self.layout = layout
        self.state = EngineState()

    def receive(self, w: BusWord, next_header_in: int) -> tuple[TransitionOut, ExtractOut]:
        tr = state_transition_step(self.layout, self.state, w, next_header_in)
        ex = header_extraction_step(self.layout, self.state, w, tr.valid_header)
        return tr, ex

    def emit(self, prev: BusWord, w: BusWord | None) -> tuple[BusWord, int]:
        out = pipeline_alignment_step(self.layout, self.state, prev, w, True)
        return out, self.state.next_header


Beat = tuple[BusWord, int]


class Level:
    """One pipeline stage: parallel engines behind a shared delay register.

    The engine is picked once per packet, on the first slot that still carries
    packet bits (or on the end slot).  If no engine matches the incoming
    next-header id the level is a plain one-cycle bypass.
    """

    def __init__(self, index: int, layouts: Iterable[HeaderLayout]):
        self.index = index
        self.engines = {lay.this_header: HeaderEngine(lay) for lay in layouts}
        self.reg: Beat | None = None
        self.sel: HeaderEngine | None = None
        self.decided = False

    def clock(self, beat: Beat | None, cycle: int, phvs: list[PHV], trace: list | None) -> Beat | None:
        out = None
        w_in = beat[0] if beat is not None else None
        if self.reg is not None:
            out = self.reg if self.sel is None else self.sel.emit(self.reg[0], w_in)
        if beat is None:
            self.reg = None
            return out
        w, nh = beat
        if w.start:
            if self.sel is not None:
                self.sel.state.reset()
            self.sel, self.decided = None, False
        if not self.decided and (w.valid_bits > 0 or w.end):
            self.decided = True
            self.sel = self.engines.get(nh)
            if self.sel is not None:
                self.sel.state.reset()
        if self.sel is not None:
            tr, ex = self.sel.receive(w, nh)
            if ex.phv is not None:
                phvs.append(ex.phv)
            if trace is not None:
                trace.append((cycle, self.index, w.packet_id, self.sel.layout.name, tr.valid_header,
                              tr.next_header, ex.header_done, w.valid_bits))
        elif trace is not None:
            trace.append((cycle, self.index, w.packet_id, "-", False, nh, False, w.valid_bits))
        self.reg = beat
        return out


@dataclass
class PacketResult:
    packet_id: int
    phvs: list[PHV] = field(default_factory=list)
    words_in: int = 0
    first_in: int | None = None
    first_out: int | None = None
    last_out: int | None = None

    @property
    def latency(self) -> int | None:
        if self.first_out is None:
            return None
        return self.first_out - self.first_in

    @property
    def exception(self) -> tuple[str, str] | None:
        for p in self.phvs:
            if p.exception is not None:
                return p.header, p.exception
        return None


class Pipeline:
    def __init__(self, plan: PipelinePlan, trace: bool = False):
        self.plan = plan
        self.levels = [Level(i, (plan.engines[h] for h in ids)) for i, ids in enumerate(plan.levels)]
        self.out_reg: Beat | None = None
        self.cycle = 0
        self.results: dict[int, PacketResult] = {}
        self.trace: list | None = [] if trace else None
        self._open: int | None = None

    def _check(self, w: BusWord) -> None:
        bw = self.plan.bus_width_bits
        if not 0 < w.valid_bits <= bw or w.data >> bw:
            raise PipelineProtocolError(f"cycle {self.cycle}: malformed word for packet {w.packet_id}")
        if w.start:
            if self._open is not None:
                raise PipelineProtocolError(
                    f"cycle {self.cycle}: packet {w.packet_id} starts before packet {self._open} ended")
            if w.packet_id in self.results:
                raise PipelineProtocolError(f"cycle {self.cycle}: packet id {w.packet_id} reused")
            self.results[w.packet_id] = PacketResult(w.packet_id, first_in=self.cycle)
            self._open = w.packet_id
        elif self._open != w.packet_id:
            raise PipelineProtocolError(f"cycle {self.cycle}: word of packet {w.packet_id} outside its packet")
        if w.valid_bits != bw and not w.end:
            raise PipelineProtocolError(f"cycle {self.cycle}: partial word before the end of packet {w.packet_id}")
        self.results[w.packet_id].words_in += 1
        if w.end:
            self._open = None

    def clock(self, w_in: BusWord | None = None) -> tuple[BusWord | None, list[PHV]]:
        """Advance one cycle; returns the word leaving the pipeline and new PHVs."""
        if w_in is not None and not w_in.valid:
            w_in = None
        if w_in is not None:
            self._check(w_in)
        out = self.out_reg
        beat = (w_in, self.plan.root) if w_in is not None else None
        phvs: list[PHV] = []
        for lvl in self.levels:
            beat = lvl.clock(beat, self.cycle, phvs, self.trace)
        self.out_reg = beat
        if out is not None:
            res = self.results[out[0].packet_id]
            if res.first_out is None:
                res.first_out = self.cycle
            res.last_out = self.cycle
        for p in phvs:
            self.results[p.packet_id].phvs.append(p)
        self.cycle += 1
        return (out[0] if out is not None else None), phvs

    @property
    def busy(self) -> bool:
        return self.out_reg is not None or any(lvl.reg is not None for lvl in self.levels)

    def drain(self) -> list[BusWord]:
        outs = []
        while self.busy:
            out, _ = self.clock(None)
            if out is not None:
                outs.append(out)
        return outs


def segment_packet(data: bytes, bus_width: int, packet_id: int = 0) -> list[BusWord]:
    """Split a packet into MSB-first bus words; the last one may be partial."""
    if not data:
        raise ValueError("empty packet")
    step = bus_width // 8
    words = []
    n = max(1, -(-len(data) // step))
    for i in range(n):
        chunk = data[i * step:(i + 1) * step]
        value = int.from_bytes(chunk, "big") << (bus_width - 8 * len(chunk))
        words.append(BusWord(value, i == 0, i == n - 1, True, packet_id, 8 * len(chunk)))
    return words


def words_to_bytes(words: Iterable[BusWord], bus_width: int) -> bytes:
    """Reassemble the packet bits still on the bus (e.g. the payload at the output)."""
    acc, n = 0, 0
    for w in words:
        acc = (acc << w.valid_bits) | (w.data >> (bus_width - w.valid_bits)) if w.valid_bits else acc
        n += w.valid_bits
    if n % 8:
        acc <<= 8 - n % 8
    return acc.to_bytes(-(-n // 8), "big")


@dataclass
class StreamRun:
    results: list[PacketResult]
    cycles: int
    outputs: dict[int, list[BusWord]]
    trace: list | None = None


def run_stream(plan: PipelinePlan, packets: Iterable[bytes], *, first_id: int = 0,
               trace: bool = False, gaps: int = 0) -> StreamRun:
    """Feed packets back to back (optionally with idle gaps) and drain."""
    pipe = Pipeline(plan, trace=trace)
    outputs: dict[int, list[BusWord]] = {}

    def take(out: BusWord | None) -> None:
        if out is not None:
            outputs.setdefault(out.packet_id, []).append(out)

    for i, data in enumerate(packets):
        for w in segment_packet(data, plan.bus_width_bits, first_id + i):
            take(pipe.clock(w)[0])
        for _ in range(gaps):
            take(pipe.clock(None)[0])
    for out in pipe.drain():
        take(out)
    results = [pipe.results[k] for k in sorted(pipe.results)]
    return StreamRun(results, pipe.cycle, outputs, pipe.trace)


def parse_packet(plan: PipelinePlan, data: bytes, packet_id: int = 0) -> list[PHV]:
    """PHVs for a single packet, sorted by header id (which is also parse order)."""
    phvs = run_stream(plan, [data], first_id=packet_id).results[0].phvs
    return sorted(phvs, key=lambda p: p.header_id)


TRACE_COLUMNS = ("cycle", "level", "packet_id", "engine", "valid_header", "next_header",
                 "header_done", "valid_bits")


def trace_rows(plan: PipelinePlan, trace: list) -> list[tuple]:
    """Trace tuples with header ids replaced by names."""
    return [(c, lvl, pid, eng, int(vh), plan.name_of(nh) if nh in (END_ID, REJECT_ID) or nh in plan.engines
             else str(nh), int(done), vb)
            for c, lvl, pid, eng, vh, nh, done, vb in trace]
