"""Result files, summaries, comparison tables and SVG charts.

Every writer here returns text or bytes; the CLI decides where they land so
that a failed run never leaves half a bundle on disk.
"""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from html import escape
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .evaluation import GROUP_CLASSICAL, GROUP_PROPOSED, CVResult, result_label, select_best

RESULT_FIELDS = ("method", "group", "hyperparameters", "fold", "accuracy", "precision", "recall")


class ResultsFormatError(ValueError):
    pass


def canonical_json(obj) -> str:
    # sorted keys + repr floats: identical inputs give identical bytes
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _hp_key(hp: Mapping) -> str:
    return json.dumps(hp, sort_keys=True, separators=(",", ":"))


# -- results CSV -------------------------------------------------------------

def results_to_csv(results: Iterable[CVResult]) -> str:
    """One row per fold per grid point."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_FIELDS)
    for res in results:
        prec = res.fold_precision or [""] * len(res.fold_accuracies)
        rec = res.fold_recall or [""] * len(res.fold_accuracies)
        for fold, (a, p, r) in enumerate(zip(res.fold_accuracies, prec, rec)):
            writer.writerow([res.method, res.group or "", _hp_key(res.hyperparameters), fold, repr(a),
                             repr(p) if p != "" else "", repr(r) if r != "" else ""])
    return buf.getvalue()


def results_from_csv(text: str, source: str = "<string>") -> list[CVResult]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames) != RESULT_FIELDS:
        raise ResultsFormatError(f"{source}: expected header {','.join(RESULT_FIELDS)}")
    grouped: dict[tuple, dict] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            key = (row["method"], row["hyperparameters"])
            entry = grouped.setdefault(key, {"group": row["group"] or None, "folds": {}})
            fold = int(row["fold"])
            if fold in entry["folds"]:
                raise ValueError(f"duplicate fold {fold}")
            entry["folds"][fold] = (float(row["accuracy"]),
                                    float(row["precision"]) if row["precision"] else None,
                                    float(row["recall"]) if row["recall"] else None)
            hp = json.loads(row["hyperparameters"])
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            raise ResultsFormatError(f"{source}, line {lineno}: {exc}") from exc
        if not isinstance(hp, dict):
            raise ResultsFormatError(f"{source}, line {lineno}: hyperparameters must be a JSON object")
    out = []
    for (method, hp_text), entry in grouped.items():
        folds = entry["folds"]
        if sorted(folds) != list(range(len(folds))):
            raise ResultsFormatError(f"{source}: {method} has non-contiguous fold indices")
        vals = [folds[i] for i in range(len(folds))]
        prec = [v[1] for v in vals] if all(v[1] is not None for v in vals) else []
        rec = [v[2] for v in vals] if all(v[2] is not None for v in vals) else []
        out.append(CVResult(method, json.loads(hp_text), [v[0] for v in vals], prec, rec, entry["group"]))
    return out


# -- aggregation -------------------------------------------------------------

def best_by_label(results: Sequence[CVResult]) -> list[CVResult]:
    """Best grid point per method (per method and latent size for the SAE models), sorted by label."""
    by_label: dict[str, list[CVResult]] = defaultdict(list)
    for res in results:
        by_label[result_label(res)].append(res)
    return [select_best(by_label[k]) for k in sorted(by_label)]


def summary_row(res: CVResult) -> dict:
    return {
        "label": result_label(res), "method": res.method, "group": res.group,
        "hyperparameters": res.hyperparameters, "mean_accuracy": 100.0 * res.mean, "sd": 100.0 * res.std,
        "fold_accuracies": res.fold_accuracies,
    }


def bar_rows(results: Sequence[CVResult]) -> list[tuple[str, float, float]]:
    return [(result_label(r), 100.0 * r.mean, 100.0 * r.std) for r in results]


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def latent_curve(results: Sequence[CVResult], method: str) -> list[tuple[int, float, float]]:
    best = [r for r in best_by_label(results) if r.method == method and "latent_dim" in r.hyperparameters]
    return sorted((int(r.hyperparameters["latent_dim"]), 100.0 * r.mean, 100.0 * r.std) for r in best)


# -- reference table ---------------------------------------------------------

def load_reference() -> dict:
    text = resources.files("heartsae").joinpath("resources/reference.json").read_text(encoding="utf-8")
    return json.loads(text)


def comparison_table(results: Sequence[CVResult]) -> tuple[list[dict], list[str]]:
    """Published reference rows followed by this run's best result per label."""
    warnings = []
    rows = [{"source": "published", "method": r["method"], "accuracy": r["accuracy"], "sd": None}
            for r in load_reference()["rows"]]
    best = best_by_label(results)
    if not best:
        warnings.append("no measured results supplied; table holds reference rows only")
    for res in best:
        rows.append({"source": "measured", "method": result_label(res), "accuracy": 100.0 * res.mean,
                     "sd": 100.0 * res.std})
    return rows, warnings


def comparison_markdown(rows: Sequence[dict]) -> str:
    lines = ["| Source | Method | Accuracy (%) | SD |", "|---|---|---:|---:|"]
    for r in rows:
        sd = "" if r["sd"] is None else f"{r['sd']:.2f}"
        lines.append(f"| {r['source']} | {r['method']} | {r['accuracy']:.2f} | {sd} |")
    return "\n".join(lines) + "\n"


# -- SVG ---------------------------------------------------------------------

_W, _H = 640, 400
_LEFT, _RIGHT, _TOP, _BOTTOM = 60, 20, 40, 110


def _axis_range(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 100.0
    lo, hi = min(values), max(values)
    lo = max(0.0, 5.0 * ((lo - 2.0) // 5.0))
    hi = min(100.0, 5.0 * (-(-(hi + 2.0) // 5.0)))
    if hi <= lo:
        hi = lo + 5.0
    return lo, hi


def _frame(title: str, lo: float, hi: float, ylabel: str) -> list[str]:
    plot_h = _H - _TOP - _BOTTOM
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">'
        f'{escape(title)}</text>',
        f'<text x="14" y="{_TOP + plot_h / 2:.1f}" transform="rotate(-90 14 {_TOP + plot_h / 2:.1f})" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12">{escape(ylabel)}</text>',
    ]
    step = 5.0 if hi - lo <= 40 else 10.0
    tick = lo
    while tick <= hi + 1e-9:
        y = _TOP + plot_h * (1 - (tick - lo) / (hi - lo))
        parts.append(f'<line x1="{_LEFT}" y1="{y:.1f}" x2="{_W - _RIGHT}" y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{_LEFT - 6}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{tick:g}</text>')
        tick += step
    parts.append(f'<line x1="{_LEFT}" y1="{_TOP}" x2="{_LEFT}" y2="{_H - _BOTTOM}" stroke="black"/>')
    parts.append(f'<line x1="{_LEFT}" y1="{_H - _BOTTOM}" x2="{_W - _RIGHT}" y2="{_H - _BOTTOM}" stroke="black"/>')
    return parts


def svg_bar_chart(rows: Sequence[tuple[str, float, float]], title: str, ylabel: str = "Mean accuracy (%)") -> str:
    """Bars with SD whiskers; ``rows`` are (label, value, sd)."""
    lo, hi = _axis_range([v - s for _, v, s in rows] + [v + s for _, v, s in rows])
    parts = _frame(title, lo, hi, ylabel)
    plot_w, plot_h = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM
    slot = plot_w / max(1, len(rows))

    def ypos(v):
        return _TOP + plot_h * (1 - (min(max(v, lo), hi) - lo) / (hi - lo))

    for i, (label, value, sd) in enumerate(rows):
        x = _LEFT + i * slot + slot * 0.15
        w = slot * 0.7
        y = ypos(value)
        cx = x + w / 2
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{w:.1f}" height="{_H - _BOTTOM - y:.1f}" '
                     f'fill="#4c72b0"><title>{escape(label)}: {value:.3f}</title></rect>')
        if sd > 0:
            parts.append(f'<line x1="{cx:.1f}" y1="{ypos(value - sd):.1f}" x2="{cx:.1f}" y2="{ypos(value + sd):.1f}" '
                         f'stroke="black"/>')
        parts.append(f'<text x="{cx:.1f}" y="{y - 4:.1f}" text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{value:.2f}</text>')
        ly = _H - _BOTTOM + 12
        parts.append(f'<text x="{cx:.1f}" y="{ly}" transform="rotate(40 {cx:.1f} {ly})" font-family="sans-serif" '
                     f'font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def svg_line_chart(series: Mapping[str, Sequence[tuple[float, float]]], title: str, xlabel: str,
                   ylabel: str = "Mean accuracy (%)") -> str:
    """One polyline per series; points are (x, y)."""
    palette = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")
    ys = [y for pts in series.values() for _, y in pts]
    xs = sorted({x for pts in series.values() for x, _ in pts})
    lo, hi = _axis_range(ys)
    parts = _frame(title, lo, hi, ylabel)
    plot_w, plot_h = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM
    x0, x1 = (xs[0], xs[-1]) if xs else (0.0, 1.0)
    span = (x1 - x0) or 1.0

    def xpos(x):
        return _LEFT + 20 + (plot_w - 40) * (x - x0) / span

    def ypos(y):
        return _TOP + plot_h * (1 - (y - lo) / (hi - lo))

    for x in xs:
        parts.append(f'<text x="{xpos(x):.1f}" y="{_H - _BOTTOM + 16}" text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{x:g}</text>')
    parts.append(f'<text x="{_LEFT + plot_w / 2:.1f}" y="{_H - _BOTTOM + 36}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    for k, (name, pts) in enumerate(series.items()):
        color = palette[k % len(palette)]
        coords = " ".join(f"{xpos(x):.1f},{ypos(y):.1f}" for x, y in sorted(pts))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in sorted(pts):
            parts.append(f'<circle cx="{xpos(x):.1f}" cy="{ypos(y):.1f}" r="3" fill="{color}">'
                         f'<title>{escape(name)} {x:g}: {y:.3f}</title></circle>')
        ly = _H - 30 + 14 * (k // 3)
        lx = _LEFT + 180 * (k % 3)
        parts.append(f'<rect x="{lx}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{lx + 14}" y="{ly}" font-family="sans-serif" font-size="11">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def group_tag_counts(results: Sequence[CVResult]) -> dict[str, int]:
    counts = {GROUP_CLASSICAL: 0, GROUP_PROPOSED: 0}
    for r in results:
        if r.group in counts:
            counts[r.group] += 1
    return counts
