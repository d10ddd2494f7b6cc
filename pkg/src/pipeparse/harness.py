"""Run the pipeline and the reference over the same packets and diff the PHVs."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .graph import assign_header_ids
from .layout import PipelinePlan
from .model import ParseGraph
from .oracle import reference_parse
from .sim import PHV, run_stream


@dataclass(frozen=True)
class Mismatch:
    packet_id: int
    index: int
    pipeline: PHV | None
    reference: PHV | None

    def describe(self) -> str:
        def show(p: PHV | None) -> str:
            if p is None:
                return "<missing>"
            return f"{p.header} valid={p.valid} bits={p.bit_count} exc={p.exception} {p.bits:#x}"
        return (f"packet {self.packet_id}, PHV {self.index}: pipeline {show(self.pipeline)} "
                f"!= reference {show(self.reference)}")


@dataclass
class CompareReport:
    packets: int = 0
    phvs: int = 0
    cycles: int = 0
    mismatches: list[Mismatch] = field(default_factory=list)
    latencies: list[int] = field(default_factory=list)
    exceptions: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def merge(self, other: CompareReport) -> None:
        self.packets += other.packets
        self.phvs += other.phvs
        self.cycles += other.cycles
        self.mismatches += other.mismatches
        self.latencies += other.latencies
        for k, v in other.exceptions.items():
            self.exceptions[k] = self.exceptions.get(k, 0) + v


def diff_phvs(packet_id: int, got: list[PHV], want: tuple[PHV, ...] | list[PHV]) -> Mismatch | None:
    for i in range(max(len(got), len(want))):
        a = got[i] if i < len(got) else None
        b = want[i] if i < len(want) else None
        if a is None or b is None or a.key() != b.key():
            return Mismatch(packet_id, i, a, b)
    return None


def _compare_shard(plan: PipelinePlan, g: ParseGraph, packets: list[bytes], first_id: int) -> CompareReport:
    ids = assign_header_ids(g)
    run = run_stream(plan, packets, first_id=first_id)
    rep = CompareReport(packets=len(packets), cycles=run.cycles)
    for res, data in zip(run.results, packets):
        ref = reference_parse(g, data, res.packet_id, ids)
        rep.phvs += len(ref.phvs)
        if res.latency is not None:
            rep.latencies.append(res.latency)
        if ref.exception is not None:
            rep.exceptions[ref.exception[1]] = rep.exceptions.get(ref.exception[1], 0) + 1
        m = diff_phvs(res.packet_id, res.phvs, ref.phvs)
        if m is not None:
            rep.mismatches.append(m)
    return rep


def compare(plan: PipelinePlan, g: ParseGraph, packets: list[bytes], workers: int = 1) -> CompareReport:
    """Stream ``packets`` back to back and check every PHV against the reference.

    With ``workers > 1`` the corpus is cut into contiguous shards that each run
    in their own pipeline; packet ids stay global, so results do not depend on
    the worker count (cycle totals do, since every shard drains separately).
    """
    if workers <= 1 or len(packets) < 2 * workers:
        return _compare_shard(plan, g, packets, 0)
    step = -(-len(packets) // workers)
    shards = [(i, packets[i:i + step]) for i in range(0, len(packets), step)]
    total = CompareReport()
    with ProcessPoolExecutor(workers) as pool:
        futs = [pool.submit(_compare_shard, plan, g, chunk, i) for i, chunk in shards]
        for f in futs:
            total.merge(f.result())
    return total
