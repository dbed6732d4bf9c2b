"""Static, dependency-free figure emitters (SVG) and GeoJSON export."""

from __future__ import annotations

import json
from html import escape
from typing import Mapping, Sequence

import numpy as np

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
)
NOISE_COLOR = "#bbbbbb"

W, H, PAD = 640, 480, 60


def _color(label: int) -> str:
    return NOISE_COLOR if label < 0 else PALETTE[label % len(PALETTE)]


def _scale(vals, lo_px, hi_px):
    vals = np.asarray(vals, dtype=float)
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        return np.full(vals.shape, (lo_px + hi_px) / 2)
    return lo_px + (vals - lo) / (hi - lo) * (hi_px - lo_px)


def _doc(body: list[str], title: str) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{escape(title)}</text>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def cluster_map_svg(lat, lon, labels, zips: Sequence[str] = (), title: str = "Spatiotemporal Cluster Map") -> str:
    """Scatter of ZIP centroids coloured by cluster label (noise in grey)."""
    x = _scale(lon, PAD, W - PAD)
    y = _scale(lat, H - PAD, PAD)
    body = [
        f'<text x="{W / 2:.0f}" y="{H - 15}" text-anchor="middle" font-family="sans-serif" font-size="12">longitude</text>',
        f'<text x="15" y="{H / 2:.0f}" transform="rotate(-90 15 {H / 2:.0f})" text-anchor="middle" '
        'font-family="sans-serif" font-size="12">latitude</text>',
    ]
    for i, (px, py, lab) in enumerate(zip(x, y, labels)):
        tip = f"<title>{escape(zips[i])} cluster {int(lab)}</title>" if zips else ""
        body.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="5" fill="{_color(int(lab))}" stroke="black" stroke-width="0.5">{tip}</circle>')
    for j, lab in enumerate(sorted(set(int(v) for v in labels))):
        name = "noise" if lab < 0 else f"cluster {lab}"
        body.append(f'<rect x="{W - PAD - 40}" y="{40 + 18 * j}" width="10" height="10" fill="{_color(lab)}"/>')
        body.append(f'<text x="{W - PAD - 25}" y="{49 + 18 * j}" font-family="sans-serif" font-size="11">{name}</text>')
    return _doc(body, title)


def line_chart_svg(series: Mapping[str, Sequence[tuple[float, float]]], title: str, ylabel: str) -> str:
    """One polyline per named series over shared axes."""
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts] + [0.0]
    xlo, xhi = min(xs), max(xs)
    ylo, yhi = 0.0, max(ys) * 1.1 or 1.0

    def px(v):
        return PAD + (v - xlo) / (xhi - xlo) * (W - 2 * PAD) if xhi > xlo else W / 2

    def py(v):
        return H - PAD - (v - ylo) / (yhi - ylo) * (H - 2 * PAD)

    body = [
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<text x="15" y="{H / 2:.0f}" transform="rotate(-90 15 {H / 2:.0f})" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{escape(ylabel)}</text>',
    ]
    for x in sorted(set(xs)):
        body.append(f'<text x="{px(x):.2f}" y="{H - PAD + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{x:g}</text>')
    for k, (name, pts) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in pts)
        body.append(f'<polyline class="series" data-name="{escape(name)}" points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for a, b in pts:
            body.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>')
        body.append(f'<text x="{W - PAD - 100}" y="{45 + 18 * k}" fill="{color}" font-family="sans-serif" font-size="12">{escape(name)}</text>')
    return _doc(body, title)


def bar_chart_svg(items: Sequence[tuple[str, float]], title: str, xlabel: str = "influence") -> str:
    """Horizontal bars in the given order (callers sort descending)."""
    n = max(len(items), 1)
    top = max([v for _, v in items] + [1e-12])
    bar_h = (H - 2 * PAD) / n
    body = []
    for i, (name, v) in enumerate(items):
        y = PAD + i * bar_h
        width = v / top * (W - 2 * PAD - 120)
        body.append(f'<rect class="bar" data-name="{escape(name)}" x="{PAD + 120}" y="{y + 0.1 * bar_h:.2f}" '
                    f'width="{width:.2f}" height="{0.8 * bar_h:.2f}" fill="{PALETTE[i % len(PALETTE)]}"/>')
        body.append(f'<text x="{PAD + 115}" y="{y + 0.55 * bar_h:.2f}" text-anchor="end" font-family="sans-serif" font-size="12">{escape(name)}</text>')
        body.append(f'<text x="{PAD + 125 + width:.2f}" y="{y + 0.55 * bar_h:.2f}" font-family="sans-serif" font-size="11">{v:.3f}</text>')
    body.append(f'<text x="{W / 2:.0f}" y="{H - 15}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    return _doc(body, title)


def clusters_geojson(zips, lat, lon, labels, hiv_rate) -> str:
    """FeatureCollection of Point features; coordinates are ``[lon, lat]``."""
    feats = []
    for z, la, lo, lab, h in zip(zips, lat, lon, labels, hiv_rate):
        feats.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [float(lo), float(la)]},
                "properties": {"zip": z, "label": int(lab), "hiv_rate": None if np.isnan(h) else float(h)},
            }
        )
    return json.dumps({"type": "FeatureCollection", "features": feats}, indent=1)
