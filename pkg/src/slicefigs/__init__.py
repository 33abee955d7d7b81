"""Chart rendering for sweep and dynamics CSV outputs.

Reads only the documented CSV schemas and emits one image per invocation.
Four chart kinds: the utility-vs-outage tradeoff across schemes, the
outage ratio of the flat share split over the guarded market, the utility
gain of the guarded market over the reservation benchmark, and a
step-norm convergence trace.  Rendering is deterministic: fixed style, no
timestamps, identical input yields identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SWEEP_HEADER = ["family", "elastic_share_total", "scheme", "seed", "p_outage",
                "utility", "converged_frac", "rounds_mean", "ci_low", "ci_high"]
TRACE_HEADER = ["round", "step_norm"]

KINDS = ("tradeoff", "outage-gain", "utility-gain", "convergence")

SCHEME_STYLE = {
    "greet": dict(color="#1b6ca8", marker="o", label="guarded market"),
    "gps": dict(color="#c0392b", marker="s", label="reservation"),
    "scpf": dict(color="#7d8a2e", marker="^", label="share split"),
    "social": dict(color="#444444", marker="d", label="social optimum"),
}

_RC = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "slicefigs",
    "legend.frameon": False,
}


class SchemaMismatch(ValueError):
    """Input CSV header does not match the documented schema."""


class EmptyInput(ValueError):
    """Input CSV has no data rows."""


@dataclass(frozen=True)
class FigureSpec:
    """One chart request: inputs, kind, output path, label options."""

    inputs: tuple[str, ...]
    kind: str
    output: str
    title: str | None = None
    xlabel: str | None = None
    ylabel: str | None = None
    ratio: float | None = None  # reference contraction ratio (convergence)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")


# ---------------------------------------------------------------------------
# CSV loading


def _read_rows(path: str, header: list[str]) -> list[dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaMismatch(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows or rows[0] != header:
        got = rows[0] if rows else []
        raise SchemaMismatch(
            f"{path}: expected header {','.join(header)}, got {','.join(got)}")
    data = [dict(zip(header, r)) for r in rows[1:] if r]
    if not data:
        raise EmptyInput(f"{path}: no data rows")
    return data


def _load_sweep(paths) -> list[dict]:
    rows = []
    for path in paths:
        for raw in _read_rows(path, SWEEP_HEADER):
            row = dict(raw)
            for key in ("elastic_share_total", "p_outage", "utility",
                        "converged_frac", "rounds_mean", "ci_low", "ci_high"):
                row[key] = float(raw[key])
            rows.append(row)
    return rows


def _load_trace(paths) -> list[tuple[int, float]]:
    points = []
    for path in paths:
        for raw in _read_rows(path, TRACE_HEADER):
            points.append((int(raw["round"]), float(raw["step_norm"])))
    return points


def _by_scheme(rows):
    """Group sweep rows by scheme, each sorted by elastic share."""
    out: dict[str, list[dict]] = {}
    for row in rows:
        out.setdefault(row["scheme"], []).append(row)
    for group in out.values():
        group.sort(key=lambda r: r["elastic_share_total"])
    return out


def _require(groups, schemes, kind):
    missing = [s for s in schemes if s not in groups]
    if missing:
        raise SchemaMismatch(
            f"{kind} chart needs scheme rows {missing}; "
            f"found {sorted(groups)}")


# ---------------------------------------------------------------------------
# chart kinds


def _finite(rows, *keys):
    return [r for r in rows if all(math.isfinite(r[k]) for k in keys)]


def _draw_tradeoff(ax, rows):
    groups = _by_scheme(rows)
    for scheme, style in SCHEME_STYLE.items():
        pts = _finite(groups.get(scheme, []), "p_outage", "utility")
        if not pts:
            continue
        x = [r["p_outage"] for r in pts]
        y = [r["utility"] for r in pts]
        err = [[r["utility"] - r["ci_low"] for r in pts],
               [r["ci_high"] - r["utility"] for r in pts]]
        degenerate = all(lo == 0.0 and hi == 0.0
                         for lo, hi in zip(err[0], err[1]))
        ax.errorbar(x, y, yerr=None if degenerate else err, capsize=2,
                    linestyle="-", **style)
    ax.set_xlabel("outage probability")
    ax.set_ylabel("utility")
    ax.legend()


def _draw_outage_gain(ax, rows):
    groups = _by_scheme(rows)
    _require(groups, ("greet", "scpf"), "outage-gain")
    greet = {r["elastic_share_total"]: r for r in groups["greet"]}
    pts = []
    for row in groups["scpf"]:
        base = greet.get(row["elastic_share_total"])
        if base is None or not math.isfinite(row["p_outage"]):
            continue
        if base["p_outage"] > 0:
            pts.append((row["elastic_share_total"],
                        row["p_outage"] / base["p_outage"]))
    if not pts:
        raise EmptyInput("outage-gain: no grid point has a positive "
                         "guarded-market outage to ratio against")
    x, y = zip(*sorted(pts))
    ax.plot(x, y, linestyle="-", **SCHEME_STYLE["scpf"])
    ax.axhline(1.0, color="#888888", linewidth=0.8, linestyle="--")
    ax.set_yscale("log")
    ax.set_xlabel("total elastic share")
    ax.set_ylabel("outage ratio (share split / guarded market)")


def _draw_utility_gain(ax, rows):
    groups = _by_scheme(rows)
    _require(groups, ("greet", "gps"), "utility-gain")
    gps = {r["elastic_share_total"]: r for r in groups["gps"]}
    pts = []
    for row in groups["greet"]:
        base = gps.get(row["elastic_share_total"])
        if base is None:
            continue
        if math.isfinite(row["utility"]) and math.isfinite(base["utility"]):
            pts.append((row["elastic_share_total"],
                        row["utility"] - base["utility"]))
    if not pts:
        raise EmptyInput("utility-gain: no grid point has finite utilities "
                         "for both schemes")
    x, y = zip(*sorted(pts))
    ax.plot(x, y, linestyle="-", **SCHEME_STYLE["greet"])
    ax.axhline(0.0, color="#888888", linewidth=0.8, linestyle="--")
    ax.set_xlabel("total elastic share")
    ax.set_ylabel("utility gain over reservation")


def _draw_convergence(ax, points, ratio):
    points = sorted(points)
    x = [n for n, _ in points]
    y = [s for _, s in points]
    ax.plot(x, y, linestyle="-", **SCHEME_STYLE["greet"])
    positive = [(n, s) for n, s in points if s > 0]
    if ratio is not None and positive:
        n0, s0 = positive[0]
        ref = [s0 * ratio ** (n - n0) for n in x]
        ax.plot(x, ref, color="#888888", linestyle="--",
                label=f"ratio {ratio:g} reference")
    ax.set_yscale("log")
    ax.set_xlabel("round")
    ax.set_ylabel("step norm")
    ax.legend()


# ---------------------------------------------------------------------------
# entry points


def render(spec: FigureSpec) -> str:
    """Render one chart to ``spec.output``; returns the output path."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        try:
            if spec.kind == "convergence":
                _draw_convergence(ax, _load_trace(spec.inputs), spec.ratio)
            else:
                rows = _load_sweep(spec.inputs)
                if spec.kind == "tradeoff":
                    _draw_tradeoff(ax, rows)
                elif spec.kind == "outage-gain":
                    _draw_outage_gain(ax, rows)
                else:
                    _draw_utility_gain(ax, rows)
            if spec.title:
                ax.set_title(spec.title)
            if spec.xlabel:
                ax.set_xlabel(spec.xlabel)
            if spec.ylabel:
                ax.set_ylabel(spec.ylabel)
            fig.tight_layout()
            # strip volatile metadata so identical inputs give identical bytes
            suffix = Path(spec.output).suffix.lower()
            metadata = {"Date": None} if suffix == ".svg" else None
            fig.savefig(spec.output, metadata=metadata)
        finally:
            plt.close(fig)
    return spec.output


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="slicegame-figures",
        description="Render charts from sweep/dynamics CSV files")
    p.add_argument("--input", action="append", required=True,
                   help="input CSV (repeatable)")
    p.add_argument("--output", required=True, help="output image path")
    p.add_argument("--kind", choices=list(KINDS), required=True)
    p.add_argument("--title")
    p.add_argument("--xlabel")
    p.add_argument("--ylabel")
    p.add_argument("--ratio", type=float,
                   help="reference contraction ratio for convergence charts")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(inputs=tuple(args.input), kind=args.kind,
                      output=args.output, title=args.title,
                      xlabel=args.xlabel, ylabel=args.ylabel,
                      ratio=args.ratio)
    try:
        render(spec)
    except (SchemaMismatch, EmptyInput) as exc:
        print(str(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
