import copy

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pipeparse.harness import compare
from pipeparse.layout import REJECT_ID, compile_plan
from pipeparse.oracle import PacketSpec, gen_packet, random_corpus, reference_parse
from pipeparse.sim import (BusWord, EngineState, HeaderEngine, Pipeline, PipelineProtocolError,
                           header_extraction_step, parse_packet, pipeline_alignment_step,
                           run_stream, segment_packet, state_transition_step, words_to_bytes)

BW = 320


def engine(plan, name):
    return plan.engines[plan.ids[name]]


def words(data, bw=BW, pid=0):
    return segment_packet(data, bw, pid)


def tcp4(simple, **ipv4):
    spec = PacketSpec.of("ethernet", "ipv4", "tcp", payload=40, ipv4=ipv4)
    return gen_packet(simple, spec, seed=1)


# --- state transition ----------------------------------------------------

def test_ethernet_key_selects_ipv4(simple, simple_plan):
    lay = engine(simple_plan, "ethernet")
    st_ = EngineState()
    out = state_transition_step(lay, st_, words(tcp4(simple))[0], lay.this_header)
    assert out.valid_header and out.next_header_valid
    assert out.next_header == simple_plan.ids["ipv4"]
    assert not out.header_exception


def test_unknown_ethertype_raises_exception(simple, simple_plan):
    lay = engine(simple_plan, "ethernet")
    pkt = bytearray(tcp4(simple))
    pkt[12:14] = b"\x99\x99"
    out = state_transition_step(lay, EngineState(), words(bytes(pkt))[0], lay.this_header)
    assert out.header_exception
    assert out.next_header == REJECT_ID


def test_foreign_engine_bypasses(simple, simple_plan):
    lay = engine(simple_plan, "tcp")
    st_ = EngineState()
    w = words(tcp4(simple))[0]
    out = state_transition_step(lay, st_, w, 77)
    assert out == (77, False, False, False)
    assert st_ == EngineState()
    assert pipeline_alignment_step(lay, st_, w, None, False) is w


# --- extraction ----------------------------------------------------------

def test_ethernet_done_after_one_word(simple, simple_plan):
    lay = engine(simple_plan, "ethernet")
    st_ = EngineState()
    ex = header_extraction_step(lay, st_, words(tcp4(simple))[0], True)
    assert ex.header_done
    assert ex.phv.bit_count == 112
    assert ex.phv.bits == int.from_bytes(tcp4(simple)[:14], "big")


def _ipv4_stream(simple, ihl):
    pkt = tcp4(simple, ihl=ihl)
    return pkt, words(pkt[14:])


def test_ipv4_ihl15_takes_two_words(simple, simple_plan):
    lay = engine(simple_plan, "ipv4")
    pkt, ws = _ipv4_stream(simple, 15)
    st_ = EngineState()
    first = header_extraction_step(lay, st_, ws[0], True)
    assert not first.header_done and first.header_size == 480
    second = header_extraction_step(lay, st_, ws[1], True)
    assert second.header_done
    assert second.phv.bit_count == 480
    assert second.phv.bits == int.from_bytes(pkt[14:74], "big")


def test_ipv4_ihl2_is_invalid_size(simple, simple_plan):
    lay = engine(simple_plan, "ipv4")
    pkt = bytearray(_ipv4_stream(simple, 5)[0])
    pkt[14] = (pkt[14] & 0xF0) | 2
    ex = header_extraction_step(lay, EngineState(), words(bytes(pkt[14:]))[0], True)
    assert ex.header_done
    assert ex.phv.exception == "invalid_size"
    assert not ex.phv.valid and ex.phv.bit_count == 0


# --- alignment -----------------------------------------------------------

def test_ethernet_alignment_splices_bits_112_to_431(simple, simple_plan):
    lay = engine(simple_plan, "ethernet")
    pkt = tcp4(simple) + bytes(range(100))
    ws = words(pkt)
    st_ = EngineState()
    header_extraction_step(lay, st_, ws[0], True)
    out = pipeline_alignment_step(lay, st_, ws[0], ws[1], True)
    whole = int.from_bytes(pkt, "big")
    n = 8 * len(pkt)
    expect = (whole >> (n - 432)) & ((1 << 320) - 1)
    assert out.data == expect
    assert out.valid_bits == 320


def test_whole_word_header_passes_next_word_unshifted(simple):
    plan = compile_plan(simple, 64)
    lay = engine(plan, "udp")
    st_ = EngineState()
    ws = words(bytes(range(8, 40)), 64)
    header_extraction_step(lay, st_, ws[0], True)
    assert pipeline_alignment_step(lay, st_, ws[0], ws[1], True).valid_bits == 0
    header_extraction_step(lay, st_, ws[1], True)
    assert pipeline_alignment_step(lay, st_, ws[1], ws[2], True) is ws[1]


# --- whole pipeline ------------------------------------------------------

def test_tcp_ipv4_packet(simple, simple_plan):
    phvs = parse_packet(simple_plan, tcp4(simple))
    assert [p.header for p in phvs] == ["ethernet", "ipv4", "tcp"]
    assert all(p.valid and p.exception is None for p in phvs)


def test_icmp_64_byte_packet(simple, simple_plan):
    pkt = gen_packet(simple, PacketSpec.of("ethernet", "ipv4", "icmp", ipv4={"ihl": 5}), seed=2)
    pkt += bytes(64 - len(pkt))
    assert len(pkt) == 64
    phvs = parse_packet(simple_plan, pkt)
    assert [(p.header, p.bit_count) for p in phvs] == [("ethernet", 112), ("ipv4", 160), ("icmp", 64)]


def test_truncated_mid_ipv4(simple, simple_plan):
    phvs = parse_packet(simple_plan, tcp4(simple, ihl=5)[:14 + 10])
    assert [p.header for p in phvs] == ["ethernet", "ipv4"]
    assert phvs[1].exception == "truncated" and not phvs[1].valid


def test_unknown_ethertype_stops_parsing(simple, simple_plan):
    pkt = bytearray(tcp4(simple))
    pkt[12:14] = b"\x99\x99"
    phvs = parse_packet(simple_plan, bytes(pkt))
    assert len(phvs) == 1
    assert phvs[0].header == "ethernet" and phvs[0].exception == "no_match"
    assert phvs[0].valid


def test_back_to_back_packets(simple, simple_plan):
    a, b = tcp4(simple), gen_packet(simple, PacketSpec.of("ethernet", "ipv6", "udp"), seed=4)
    run = run_stream(simple_plan, [a, b])
    assert [r.packet_id for r in run.results] == [0, 1]
    for r, data in zip(run.results, (a, b)):
        assert {p.packet_id for p in r.phvs} == {r.packet_id}
        assert [p.key() for p in r.phvs] == [p.key() for p in reference_parse(simple, data).phvs]


def test_idle_cycles_change_nothing(simple_plan):
    pipe = Pipeline(simple_plan)
    before = [(lvl.reg, lvl.sel, [copy.copy(e.state) for e in lvl.engines.values()])
              for lvl in pipe.levels]
    for _ in range(5):
        out, phvs = pipe.clock(None)
        assert out is None and phvs == []
    after = [(lvl.reg, lvl.sel, [e.state for e in lvl.engines.values()]) for lvl in pipe.levels]
    assert before == after
    assert not pipe.busy


@pytest.mark.parametrize("gaps", [0, 3])
def test_stream_timing(simple, simple_plan, gaps):
    corpus = [p.data for p in random_corpus(simple, 200, seed=11)]
    run = run_stream(simple_plan, corpus, gaps=gaps)
    total_words = sum(-(-len(p) // (BW // 8)) for p in corpus)
    # trailing idle cycles overlap the drain
    assert run.cycles == total_words + gaps * (len(corpus) - 1) + simple_plan.depth_cycles
    assert {r.latency for r in run.results} == {simple_plan.depth_cycles}
    for r in run.results:
        assert r.last_out - r.first_out == r.words_in - 1


def test_payload_leaves_aligned(full, full_plan):
    """After the last header, the output carries exactly the packet's remaining bytes."""
    corpus = [c for c in random_corpus(full, 300, seed=5) if c.kind == "well_formed"]
    run = run_stream(full_plan, [c.data for c in corpus])
    for c, r in zip(corpus, run.results):
        ref = reference_parse(full, c.data)
        assert words_to_bytes(run.outputs[r.packet_id], BW) == c.data[ref.consumed_bits // 8:]


def test_protocol_errors(simple, simple_plan):
    ws = words(tcp4(simple) * 3)
    pipe = Pipeline(simple_plan)
    pipe.clock(ws[0])
    with pytest.raises(PipelineProtocolError, match="starts before"):
        pipe.clock(words(tcp4(simple), pid=1)[0])
    pipe = Pipeline(simple_plan)
    with pytest.raises(PipelineProtocolError, match="outside its packet"):
        pipe.clock(ws[1])
    bad = BusWord(0, True, False, True, 0, 8)
    with pytest.raises(PipelineProtocolError, match="partial word"):
        Pipeline(simple_plan).clock(bad)


def test_segment_packet():
    ws = segment_packet(bytes(range(45)), 320)
    assert [(w.start, w.end, w.valid_bits) for w in ws] == [(True, False, 320), (False, True, 40)]
    assert words_to_bytes(ws, 320) == bytes(range(45))
    with pytest.raises(ValueError):
        segment_packet(b"", 320)


def test_engine_reset_between_packets(simple, simple_plan):
    eng = HeaderEngine(engine(simple_plan, "ethernet"))
    eng.receive(words(tcp4(simple))[0], eng.layout.this_header)
    eng.state.reset()
    assert eng.state == EngineState()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), bw=st.sampled_from([16, 24, 64, 120, 320]))
def test_random_parsers_match_reference(random_graph, seed, bw):
    g = random_graph(seed)
    plan = compile_plan(g, bw)
    packets = [c.data for c in random_corpus(g, 30, seed=seed, max_payload=20)]
    rep = compare(plan, g, packets)
    assert rep.ok, rep.mismatches[0].describe()


def test_corpus_at_many_bus_widths(full):
    packets = [c.data for c in random_corpus(full, 300, seed=99)]
    for bw in (32, 64, 160, 256, 320, 512, 1024):
        rep = compare(compile_plan(full, bw), full, packets)
        assert rep.ok, (bw, rep.mismatches[0].describe())


def test_skipped_levels_are_transparent(full, full_plan):
    """A packet with no VLAN/MPLS tags leaves levels 1 and 2 exactly as it entered."""
    pipe = Pipeline(full_plan)
    seen = {1: ([], []), 2: ([], [])}
    for idx, (ins, outs) in seen.items():
        lvl = pipe.levels[idx]

        def spy(beat, cycle, phvs, trace, _clock=lvl.clock, _ins=ins, _outs=outs):
            out = _clock(beat, cycle, phvs, trace)
            if beat is not None:
                _ins.append(beat)
            if out is not None:
                _outs.append(out)
            return out
        lvl.clock = spy
    pkt = gen_packet(full, PacketSpec.of("ethernet", "ipv4", "tcp", payload=300), seed=7)
    for w in segment_packet(pkt, BW):
        pipe.clock(w)
    pipe.drain()
    for ins, outs in seen.values():
        assert len(ins) == len(segment_packet(pkt, BW))
        assert outs == ins
