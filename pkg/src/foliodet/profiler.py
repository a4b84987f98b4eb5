"""Aspect-ratio complexity profiles with CSV and SVG emission.

Each category is summarized by the mean and the 25th/75th percentiles
of its instances' oriented-box aspect ratios (longer side / shorter
side), plotted on a logarithmic axis.  The SVG is hand-emitted so the
bytes are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .corpus import SPLITS, CorpusDataset
from .errors import ConfigError, ParseError
from .geometry import aspect_ratio


@dataclass(frozen=True)
class ProfileRow:
    category: str
    n: int
    mean_ar: float
    p25_ar: float
    p75_ar: float


@dataclass(frozen=True)
class ComplexityProfile:
    corpus_id: str
    rows: tuple[ProfileRow, ...]


def percentile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation percentile: rank = q/100 * (n - 1)."""
    if not values:
        raise ValueError("percentile of empty sequence")
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"q must be in [0, 100], got {q!r}")
    ordered = sorted(values)
    rank = q / 100.0 * (len(ordered) - 1)
    lo = math.floor(rank)
    hi = math.ceil(rank)
    if lo == hi:
        return ordered[lo]
    frac = rank - lo
    return ordered[lo] * (1.0 - frac) + ordered[hi] * frac


def complexity_profile(ds: CorpusDataset, split: str | None = None) -> ComplexityProfile:
    """Aspect-ratio statistics per category, descending by mean.

    Categories without instances in the split are omitted.  `split=None`
    profiles all images.
    """
    if split is not None and split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    images = ds.images if split is None else ds.images_in_split(split)
    ratios: dict[str, list[float]] = {}
    for img in images:
        for inst in img.instances:
            ratios.setdefault(inst.category, []).append(aspect_ratio(inst.obb))
    rows = []
    for category, values in ratios.items():
        values.sort()
        rows.append(
            ProfileRow(
                category=category,
                n=len(values),
                mean_ar=math.fsum(values) / len(values),
                p25_ar=percentile(values, 25.0),
                p75_ar=percentile(values, 75.0),
            )
        )
    rows.sort(key=lambda r: (-r.mean_ar, r.category))
    return ComplexityProfile(ds.corpus_id, tuple(rows))


CSV_HEADER = "corpus,category,n,mean_ar,p25_ar,p75_ar"


def emit_profile_csv(p: ComplexityProfile) -> bytes:
    lines = [CSV_HEADER]
    for r in p.rows:
        lines.append(
            f"{p.corpus_id},{r.category},{r.n},{r.mean_ar:.6f},{r.p25_ar:.6f},{r.p75_ar:.6f}"
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_profile_csv(data: bytes) -> ComplexityProfile:
    """Parse emit_profile_csv output back (values at 6-decimal precision)."""
    lines = data.decode("utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ParseError("not a complexity-profile CSV")
    corpus_id = ""
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ParseError(f"bad profile row: {line!r}")
        corpus_id = parts[0]
        rows.append(
            ProfileRow(parts[1], int(parts[2]), float(parts[3]), float(parts[4]), float(parts[5]))
        )
    return ComplexityProfile(corpus_id, tuple(rows))


def log_axis_position(value: float, lo: float, hi: float) -> float:
    """Fraction of the way up a log axis spanning [lo, hi]."""
    if value <= 0 or lo <= 0 or hi <= lo:
        raise ValueError("log axis needs positive value and lo < hi")
    return (math.log10(value) - math.log10(lo)) / (math.log10(hi) - math.log10(lo))


def emit_profile_svg(profiles: Sequence[ComplexityProfile]) -> bytes:
    """Standalone SVG: one column per category, grouped by corpus.

    Three marks per category: a dot at the mean and ticks at the 25th
    and 75th percentiles, joined by a whisker line, on a log-10 y axis.
    """
    if not profiles:
        raise ConfigError("need at least one profile")

    columns = [(p.corpus_id, r) for p in profiles for r in p.rows]
    top, left, col_w, plot_h = 40.0, 70.0, 34.0, 260.0
    label_h = 120.0
    width = left + col_w * max(1, len(columns)) + 30.0
    height = top + plot_h + label_h

    hi = 10.0
    for _, r in columns:
        hi = max(hi, r.p75_ar, r.mean_ar)
    hi = 10.0 ** math.ceil(math.log10(hi)) if hi > 10.0 else 10.0
    lo = 1.0

    def y(value: float) -> float:
        return top + plot_h * (1.0 - log_axis_position(max(value, lo), lo, hi))

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">\n',
        f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" fill="white"/>\n',
    ]

    decade = lo
    while decade <= hi:
        gy = y(decade)
        parts.append(
            f'<line x1="{left:.1f}" y1="{gy:.2f}" x2="{width - 20:.1f}" y2="{gy:.2f}" '
            'stroke="#cccccc" stroke-width="1"/>\n'
        )
        parts.append(
            f'<text x="{left - 8:.1f}" y="{gy + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{decade:g}</text>\n'
        )
        decade *= 10.0
    parts.append(
        f'<text x="14" y="{top + plot_h / 2:.1f}" font-family="sans-serif" font-size="11" '
        f'transform="rotate(-90 14 {top + plot_h / 2:.1f})" text-anchor="middle">aspect ratio (log)</text>\n'
    )

    prev_corpus = None
    for k, (corpus_id, r) in enumerate(columns):
        x = left + col_w * (k + 0.5)
        if corpus_id != prev_corpus:
            if prev_corpus is not None:
                sep = left + col_w * k
                parts.append(
                    f'<line x1="{sep:.1f}" y1="{top:.1f}" x2="{sep:.1f}" y2="{top + plot_h:.1f}" '
                    'stroke="#888888" stroke-width="1" stroke-dasharray="4 3"/>\n'
                )
            parts.append(
                f'<text x="{x:.2f}" y="{top - 10:.1f}" font-family="sans-serif" '
                f'font-size="12" font-weight="bold">{_esc(corpus_id)}</text>\n'
            )
            prev_corpus = corpus_id
        y25, y75, ym = y(r.p25_ar), y(r.p75_ar), y(r.mean_ar)
        parts.append(
            f'<line x1="{x:.2f}" y1="{y25:.2f}" x2="{x:.2f}" y2="{y75:.2f}" '
            'stroke="#444444" stroke-width="1.5"/>\n'
        )
        for yy in (y25, y75):
            parts.append(
                f'<line x1="{x - 6:.2f}" y1="{yy:.2f}" x2="{x + 6:.2f}" y2="{yy:.2f}" '
                'stroke="#444444" stroke-width="1.5"/>\n'
            )
        parts.append(f'<circle cx="{x:.2f}" cy="{ym:.2f}" r="4" fill="#1f5fbf"/>\n')
        parts.append(
            f'<text x="{x:.2f}" y="{top + plot_h + 12:.1f}" font-family="sans-serif" font-size="10" '
            f'transform="rotate(45 {x:.2f} {top + plot_h + 12:.1f})">{_esc(r.category)}</text>\n'
        )

    parts.append("</svg>\n")
    return "".join(parts).encode("utf-8")


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
