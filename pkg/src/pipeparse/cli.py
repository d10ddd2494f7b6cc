"""Command-line front end: compile, simulate, compare, dot, stats.

Exit codes: 0 success, 1 pipeline/reference mismatch, 2 input or usage error.
Machine-readable results go to stdout (or ``--out``); summaries go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import random
import sys
from pathlib import Path

from .graph import GraphError, stage_graph, to_dot
from .harness import compare
from .layout import LayoutError, PipelinePlan, compile_plan, plan_from_json, plan_stats, plan_to_json
from .model import ParseGraph, SpecError, fixture_path, load_parser_spec
from .oracle import (PacketSpecError, gen_packet, load_packet_specs, random_corpus,
                     reference_parse)
from .pcap import PcapError, read_pcap
from .report import latency_figure, plan_figures, tsv
from .sim import TRACE_COLUMNS, PipelineProtocolError, run_stream, trace_rows


class UsageError(Exception):
    pass


def _read(path: str) -> tuple[str, str]:
    p = Path(path)
    if not p.exists():
        bundled = fixture_path(path if path.endswith(".json") else path + ".json")
        if bundled.is_file():
            p = bundled
        else:
            raise UsageError(f"{path}: no such file")
    return p.read_text(encoding="utf-8"), str(p)


def load_input(path: str, bus: int) -> tuple[PipelinePlan, ParseGraph | None]:
    """A parser spec is compiled on the fly; a plan file is used as is."""
    text, where = _read(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{where}: invalid JSON: {exc}") from None
    if isinstance(doc, dict) and "engines" in doc:
        return plan_from_json(text), None
    g = load_parser_spec(text)
    return compile_plan(g, bus), g


def load_graph(path: str) -> ParseGraph:
    return load_parser_spec(_read(path)[0])


def _check_match(plan: PipelinePlan, g: ParseGraph) -> None:
    ref = compile_plan(g, plan.bus_width_bits)
    if ref.names != plan.names or ref.levels != plan.levels or ref.root != plan.root:
        raise UsageError("plan does not belong to the given parser spec")


def _resolve(args) -> tuple[PipelinePlan, ParseGraph | None]:
    plan, g = load_input(args.input, args.bus)
    if args.spec:
        g2 = load_graph(args.spec)
        _check_match(plan, g2)
        g = g2
    return plan, g


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _packets(args, g: ParseGraph | None) -> list[bytes]:
    if args.pcap:
        return read_pcap(args.pcap)
    if args.packet_spec:
        if g is None:
            raise UsageError("--packet-spec needs the parser spec (--spec)")
        specs = load_packet_specs(_read(args.packet_spec)[0])
        rng = random.Random(args.seed)
        return [gen_packet(g, s, rng.getrandbits(64)) for s in specs]
    if args.packets and g is None:
        raise UsageError("random packets need the parser spec (--spec)")
    return [p.data for p in random_corpus(g, args.packets, args.seed)] if args.packets else []


# ---------------------------------------------------------------- commands

def cmd_compile(args) -> int:
    plan, _ = load_input(args.input, args.bus)
    text = plan_to_json(plan)
    report = tsv(plan_stats(plan, args.clock_mhz))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        sys.stdout.write(report)
    else:
        sys.stdout.write(text)
        sys.stderr.write(report)
    if args.fig_dir:
        plan_figures(plan, args.fig_dir)
    return 0


def cmd_simulate(args) -> int:
    plan, g = _resolve(args)
    packets = _packets(args, g)
    run = run_stream(plan, packets, trace=bool(args.trace))
    lines = [json.dumps(p.to_record()) + "\n" for r in run.results for p in r.phvs]
    _emit(args, "".join(lines))
    if args.trace:
        _write_trace(args.trace, plan, run.trace)
    rows = [(r.packet_id, r.words_in, r.latency) for r in run.results]
    words = sum(r.words_in for r in run.results)
    sys.stderr.write(tsv(rows, ("packet_id", "words", "latency_cycles")))
    sys.stderr.write(tsv({"packets": len(packets), "words_total": words,
                          "cycles_total": run.cycles if packets else 0}))
    if args.fig_dir:
        Path(args.fig_dir).mkdir(parents=True, exist_ok=True)
        latency_figure([r[2] for r in rows], Path(args.fig_dir) / "latency.png")
    return 0


def _write_trace(path: str, plan: PipelinePlan, trace: list) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    w.writerows(trace_rows(plan, trace))
    if path == "-":
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).write_text(buf.getvalue(), encoding="utf-8")


def cmd_compare(args) -> int:
    plan, g = _resolve(args)
    if g is None:
        raise UsageError("compare needs the parser spec (--spec) when given a plan")
    packets = _packets(args, g)
    rep = compare(plan, g, packets, workers=args.workers)
    summary = {"packets": rep.packets, "phvs": rep.phvs, "mismatched_packets": len(rep.mismatches)}
    summary.update({f"exceptions_{k}": v for k, v in sorted(rep.exceptions.items())})
    summary["verdict"] = "identical" if rep.ok else "divergent"
    _emit(args, tsv(summary))
    if rep.ok:
        return 0
    m = min(rep.mismatches, key=lambda x: x.packet_id)
    data = packets[m.packet_id]
    run = run_stream(plan, [data], first_id=m.packet_id, trace=True)
    ref = reference_parse(g, data, m.packet_id)
    err = sys.stderr
    err.write(f"first divergence: {m.describe()}\n")
    err.write(f"packet {m.packet_id} hex: {data.hex()}\n")
    err.write("pipeline PHVs:\n")
    for p in run.results[0].phvs:
        err.write("  " + json.dumps(p.to_record()) + "\n")
    err.write("reference PHVs:\n")
    for p in ref.phvs:
        err.write("  " + json.dumps(p.to_record()) + "\n")
    err.write("cycle trace:\n")
    w = csv.writer(err, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    w.writerows(trace_rows(plan, run.trace))
    if args.trace:
        _write_trace(args.trace, plan, run.trace)
    return 1


def cmd_dot(args) -> int:
    g = load_graph(args.input)
    try:
        sg, levels = stage_graph(g, args.stage)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit(args, to_dot(sg, levels, f"{Path(args.input).stem}_{args.stage}"))
    return 0


def cmd_stats(args) -> int:
    plan, _ = load_input(args.input, args.bus)
    _emit(args, tsv(plan_stats(plan, args.clock_mhz)))
    if args.fig_dir:
        plan_figures(plan, args.fig_dir)
    return 0


# ------------------------------------------------------------------ parser

def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pipeparse", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, bus=True, out=True):
        p.add_argument("input", help="parser spec JSON, plan JSON, or a bundled fixture name")
        if bus:
            p.add_argument("--bus", type=int, default=320, help="bus width in bits (default 320)")
        if out:
            p.add_argument("--out", help="write the main output here instead of stdout")

    p = sub.add_parser("compile", help="parser spec -> pipeline plan JSON")
    common(p)
    p.add_argument("--clock-mhz", default="312.5", help="clock for the latency/throughput report")
    p.add_argument("--fig-dir", help="also render plan figures into this directory")
    p.set_defaults(func=cmd_compile)

    for name, func, helptext in (("simulate", cmd_simulate, "run packets through the pipeline"),
                                 ("compare", cmd_compare, "diff the pipeline against the reference parser")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--spec", help="parser spec the plan was compiled from")
        p.add_argument("--packets", type=_nonneg, default=0 if name == "simulate" else 1000,
                       help="number of random packets")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--pcap", help="replay packets from a pcap file")
        p.add_argument("--packet-spec", help="JSON list of header sequences to generate")
        p.add_argument("--trace", help="write the per-level cycle trace as CSV ('-' for stdout)")
        if name == "simulate":
            p.add_argument("--fig-dir", help="also render a latency histogram here")
        else:
            p.add_argument("--workers", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("dot", help="Graphviz DOT of a graph stage")
    common(p, bus=False)
    p.add_argument("--stage", default="original", help="original, reduced or balanced")
    p.set_defaults(func=cmd_dot)

    p = sub.add_parser("stats", help="depth, resources, latency and throughput")
    common(p)
    p.add_argument("--clock-mhz", default="312.5")
    p.add_argument("--fig-dir", help="also render plan figures into this directory")
    p.set_defaults(func=cmd_stats)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "bus", 8) <= 0 or getattr(args, "bus", 8) % 8:
            raise UsageError(f"--bus must be a positive multiple of 8, got {args.bus}")
        return args.func(args)
    except SpecError as exc:
        sys.stderr.write(f"error: {exc.path}: {exc.message}\n")
    except (UsageError, LayoutError, GraphError, PcapError, PacketSpecError,
            PipelineProtocolError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
    return 2


if __name__ == "__main__":
    sys.exit(main())
