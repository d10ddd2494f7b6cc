"""Delimited reports and matplotlib figures for compiled plans and runs."""
from __future__ import annotations

from collections import Counter
from pathlib import Path

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .layout import PipelinePlan, rom_usage

# no timestamps or version strings, so reruns produce identical files
_PNG_META = {"Software": None}


def tsv(rows: dict[str, str] | list[tuple], header: tuple[str, ...] | None = None) -> str:
    lines = ["\t".join(header)] if header else []
    items = rows.items() if isinstance(rows, dict) else rows
    lines += ["\t".join(str(x) for x in row) for row in items]
    return "\n".join(lines) + "\n"


def _save(fig: Figure, path: Path) -> Path:
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    return path


def engines_per_level_figure(plan: PipelinePlan, path: Path) -> Path:
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    counts = [len(lvl) for lvl in plan.levels]
    ax.bar(range(len(counts)), counts, color="tab:blue")
    for i, lvl in enumerate(plan.levels):
        ax.annotate("\n".join(plan.name_of(h) for h in lvl), (i, counts[i]),
                    ha="center", va="bottom", fontsize=7)
    ax.set_xlabel("pipeline level")
    ax.set_ylabel("header engines")
    ax.set_xticks(range(len(counts)))
    ax.set_ylim(0, max(counts) + 1.5)
    ax.set_title(f"{plan.bus_width_bits}-bit bus, depth {plan.depth_cycles} cycles")
    fig.tight_layout()
    return _save(fig, path)


def rom_usage_figure(plan: PipelinePlan, path: Path) -> Path:
    fig = Figure(figsize=(7, 3.5))
    ax = fig.add_subplot()
    names = [lay.name for lay in plan.engines.values()]
    bits = [rom_usage(lay, plan.bus_width_bits)["bits"] for lay in plan.engines.values()]
    ax.bar(range(len(names)), bits, color="tab:orange")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("ROM bits")
    ax.set_title("shift and size ROMs per engine")
    fig.tight_layout()
    return _save(fig, path)


def latency_figure(latencies: list[int], path: Path) -> Path:
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    hist = Counter(latencies)
    xs = sorted(hist)
    ax.bar(xs, [hist[x] for x in xs], color="tab:green")
    ax.set_xlabel("first-output latency (cycles)")
    ax.set_ylabel("packets")
    if xs:
        ax.set_xticks(xs)
    fig.tight_layout()
    return _save(fig, path)


def plan_figures(plan: PipelinePlan, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [engines_per_level_figure(plan, out / "engines_per_level.png"),
            rom_usage_figure(plan, out / "rom_usage.png")]
