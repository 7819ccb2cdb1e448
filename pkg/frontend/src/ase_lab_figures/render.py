"""Render experiment figures from ase-lab result CSVs.

Three figure kinds, all computed from raw rows (never from summary files):

- ``trust_lines``: mean effect per trust level, one panel per direction,
  one line per method.
- ``histogram_bars``: stacked fractions of agent-specific effect values per
  trust level over the value ranges [0, .25), [.25, .75), [.75, 1].
- ``robustness_bars``: mean absolute deviation from the ``param="target"``
  rows, grouped by sweep parameter and target-value range.

Invoked as ``render --spec <json>``; the spec names the input CSV, the
figure kind and the output image.  Rendering is read-only and deterministic;
the plotted aggregates are returned so they can be audited externally.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

KINDS = ("trust_lines", "histogram_bars", "robustness_bars")

SCHEMA = ("experiment", "param", "method", "direction", "trajectory",
          "agent", "time", "action", "value", "se", "samples", "seed")


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    csv: str
    out: str
    methods: tuple[str, ...] = ("cf_ase", "cf_pse")
    hist_method: str = "cf_ase"
    hist_edges: tuple[float, float] = (0.25, 0.75)
    target_edges: tuple[float, float, float] = (0.25, 0.5, 0.75)
    title: str = ""

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise RenderError(f"unknown figure kind {self.kind!r}; choose from {KINDS}")

    @staticmethod
    def from_json(path: str | Path) -> "FigureSpec":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for key in ("methods", "hist_edges", "target_edges"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return FigureSpec(**doc)


def load_rows(path: str | Path, needed: tuple[str, ...]) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is not None:
            for column in needed:
                if column not in header:
                    raise RenderError(f"missing column {column!r} in {path}")
        return list(reader)


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values)


def _sorted_params(params) -> list[str]:
    def key(p: str):
        try:
            return (0, float(p), p)
        except ValueError:
            return (1, 0.0, p)

    return sorted(params, key=key)


# ---------------------------------------------------------------------------
# Aggregations (pure; audited by the tests)
# ---------------------------------------------------------------------------


def aggregate_trust_lines(rows: list[dict], methods: tuple[str, ...]) -> dict:
    out: dict = {}
    for direction in sorted({r["direction"] for r in rows if r["direction"]}):
        panel: dict = {}
        for method in methods:
            sel: dict[float, list[float]] = {}
            for r in rows:
                if r["direction"] == direction and r["method"] == method:
                    sel.setdefault(float(r["param"]), []).append(float(r["value"]))
            xs = sorted(sel)
            panel[method] = {"x": xs, "mean": [_mean(sel[x]) for x in xs]}
        out[direction] = panel
    return out


def aggregate_histogram(rows: list[dict], method: str, edges: tuple[float, float]) -> dict:
    lo, hi = edges
    out: dict = {}
    by_param: dict[str, list[float]] = {}
    for r in rows:
        if r["method"] == method:
            by_param.setdefault(r["param"], []).append(float(r["value"]))
    for param in _sorted_params(by_param):
        values = by_param[param]
        counts = [0, 0, 0]
        for v in values:
            counts[0 if v < lo else (1 if v < hi else 2)] += 1
        n = len(values)
        out[param] = {"counts": counts, "fractions": [c / n for c in counts], "n": n}
    return out


def aggregate_robustness(rows: list[dict], target_edges: tuple[float, ...]) -> dict:
    key_of = lambda r: (r["trajectory"], r["time"], r["agent"], r["action"], r["direction"])
    targets = {key_of(r): float(r["value"]) for r in rows if r["param"] == "target"}
    if not targets:
        raise RenderError("no param=\"target\" rows to compute errors against")
    labels = _range_labels(target_edges)

    def bucket(t: float) -> str:
        for edge, label in zip(target_edges, labels):
            if t < edge:
                return label
        return labels[-1]

    out: dict = {}
    params = _sorted_params({r["param"] for r in rows if r["param"] != "target"})
    for param in params:
        errors: list[float] = []
        by_range: dict[str, list[float]] = {label: [] for label in labels}
        for r in rows:
            if r["param"] != param:
                continue
            target = targets.get(key_of(r))
            if target is None:
                raise RenderError(f"row {key_of(r)} has no matching target row")
            err = abs(float(r["value"]) - target)
            errors.append(err)
            by_range[bucket(target)].append(err)
        out[param] = {
            "mean_abs_error": _mean(errors),
            "by_range": {label: (_mean(v) if v else None) for label, v in by_range.items()},
            "n": len(errors),
        }
    return out


def _range_labels(edges: tuple[float, ...]) -> list[str]:
    points = [0.0, *edges, 1.0]
    labels = []
    for i in range(len(points) - 1):
        close = "]" if i == len(points) - 2 else ")"
        labels.append(f"[{points[i]:g},{points[i + 1]:g}{close}")
    return labels


# ---------------------------------------------------------------------------
# Drawing
# ---------------------------------------------------------------------------


def _empty_figure(spec: FigureSpec, message: str) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.set_title(spec.title or spec.kind)
    ax.text(0.5, 0.5, message, ha="center", va="center", transform=ax.transAxes)
    fig.savefig(spec.out, dpi=150, bbox_inches="tight")
    plt.close(fig)


def _draw_trust_lines(spec: FigureSpec, agg: dict) -> None:
    panels = list(agg)
    fig, axes = plt.subplots(1, max(1, len(panels)), figsize=(4.2 * max(1, len(panels)), 3.2),
                             squeeze=False)
    for ax, direction in zip(axes[0], panels):
        for method, series in agg[direction].items():
            ax.plot(series["x"], series["mean"], marker="o", label=method)
        ax.set_xlabel("trust")
        ax.set_ylabel("mean effect")
        ax.set_ylim(-0.05, 1.05)
        ax.set_title(f"through agents {direction}")
        ax.legend()
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    fig.savefig(spec.out, dpi=150)
    plt.close(fig)


def _draw_histogram_bars(spec: FigureSpec, agg: dict) -> None:
    lo, hi = spec.hist_edges
    labels = [f"[0,{lo:g})", f"[{lo:g},{hi:g})", f"[{hi:g},1]"]
    params = list(agg)
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    bottom = [0.0] * len(params)
    for b, label in enumerate(labels):
        heights = [agg[p]["fractions"][b] for p in params]
        ax.bar(range(len(params)), heights, bottom=bottom, label=label)
        bottom = [bot + h for bot, h in zip(bottom, heights)]
    ax.set_xticks(range(len(params)), params)
    ax.set_xlabel("trust")
    ax.set_ylabel("fraction of selected actions")
    ax.set_title(spec.title or f"{spec.hist_method} value distribution")
    ax.legend()
    fig.tight_layout()
    fig.savefig(spec.out, dpi=150)
    plt.close(fig)


def _draw_robustness_bars(spec: FigureSpec, agg: dict) -> None:
    params = list(agg)
    labels = _range_labels(spec.target_edges)
    width = 0.8 / (len(labels) + 1)
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    for b, label in enumerate(labels):
        xs, hs = [], []
        for i, p in enumerate(params):
            v = agg[p]["by_range"][label]
            if v is not None:
                xs.append(i + (b - len(labels) / 2) * width)
                hs.append(v)
        ax.bar(xs, hs, width=width, label=f"target {label}")
    ax.plot(range(len(params)), [agg[p]["mean_abs_error"] for p in params],
            color="black", marker="d", linestyle="--", label="overall")
    ax.set_xticks(range(len(params)), params)
    ax.set_xlabel("variant")
    ax.set_ylabel("mean |error|")
    ax.set_title(spec.title or "estimation error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.out, dpi=150)
    plt.close(fig)


def render(spec: FigureSpec) -> dict:
    """Render one figure; returns the plotted aggregates."""
    needed = ("param", "method", "direction", "value") if spec.kind != "robustness_bars" else \
        ("param", "method", "direction", "value", "trajectory", "time", "agent", "action")
    rows = load_rows(spec.csv, needed)
    if not rows:
        print(f"warning: {spec.csv} has no data rows; writing empty axes", file=sys.stderr)
        _empty_figure(spec, "no data")
        return {"kind": spec.kind, "empty": True}
    if spec.kind == "trust_lines":
        agg = aggregate_trust_lines(rows, spec.methods)
        _draw_trust_lines(spec, agg)
    elif spec.kind == "histogram_bars":
        agg = aggregate_histogram(rows, spec.hist_method, spec.hist_edges)
        _draw_histogram_bars(spec, agg)
    else:
        agg = aggregate_robustness(rows, spec.target_edges)
        _draw_robustness_bars(spec, agg)
    return {"kind": spec.kind, "aggregates": agg, "out": spec.out, "empty": False}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="render", description=__doc__.splitlines()[0])
    parser.add_argument("--spec", required=True, help="figure spec JSON")
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec.from_json(args.spec)
        result = render(spec)
    except (RenderError, FileNotFoundError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"out": spec.out, "empty": result.get("empty", False)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
