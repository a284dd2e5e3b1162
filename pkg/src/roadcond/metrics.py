"""Confusion matrices, per-class P/R/F1, confidence histograms and report files."""

from __future__ import annotations

import csv
import io
import json
import xml.sax.saxutils as su
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

REPORT_SCHEMA = "roadcond.report/1"
# lower-inclusive bins; the last bin also includes 1.0
CONFIDENCE_EDGES = (0.0, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass
class ConfusionMatrix:
    """Rows are actual classes, columns predicted."""

    counts: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = self.counts.shape[0]
        if self.counts.shape != (n, n) or (self.counts < 0).any():
            raise ValueError("confusion matrix must be square with non-negative counts")
        if not self.class_names:
            self.class_names = [str(i) for i in range(n)]
        if len(self.class_names) != n:
            raise ValueError(f"{len(self.class_names)} class names for a {n}x{n} matrix")

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.class_names != self.class_names:
            raise ValueError("cannot merge matrices over different classes")
        return ConfusionMatrix(self.counts + other.counts, list(self.class_names))


def accumulate_confusion(pairs: Iterable[tuple[int, int]], n: int,
                         class_names: Sequence[str] | None = None) -> ConfusionMatrix:
    counts = np.zeros((n, n), dtype=np.int64)
    for actual, predicted in pairs:
        if not (0 <= actual < n and 0 <= predicted < n):
            raise ValueError(f"label pair ({actual}, {predicted}) out of range for n={n}")
        counts[actual, predicted] += 1
    return ConfusionMatrix(counts, list(class_names) if class_names else [])


@dataclass
class ClassReport:
    class_names: list[str]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    degenerate: list[str] = field(default_factory=list)

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    @property
    def total_support(self) -> int:
        return int(sum(self.support))

    def rounded(self, digits: int = 2) -> dict:
        r = lambda v: round(float(v), digits)  # noqa: E731
        rows = {
            name: {"precision": r(p), "recall": r(rc), "f1": r(f)}
            for name, p, rc, f in zip(self.class_names, self.precision, self.recall, self.f1)
        }
        rows["macro"] = {"precision": r(self.macro_precision), "recall": r(self.macro_recall),
                         "f1": r(self.macro_f1)}
        return rows


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def class_report(cm: ConfusionMatrix) -> ClassReport:
    """Per-class precision (over columns), recall (over rows), F1; macro = unweighted mean.

    Zero denominators yield 0 and are listed in ``degenerate``.
    """
    if cm.n < 2:
        raise ValueError("class_report needs at least two classes")
    c = cm.counts
    precision, recall, f1, flags = [], [], [], []
    for k, name in enumerate(cm.class_names):
        tp = float(c[k, k])
        p, bad_p = _safe_div(tp, float(c[:, k].sum()))
        r, bad_r = _safe_div(tp, float(c[k, :].sum()))
        f, bad_f = _safe_div(2 * p * r, p + r)
        if bad_p:
            flags.append(f"{name}:precision")
        if bad_r:
            flags.append(f"{name}:recall")
        if bad_f and not (bad_p or bad_r):
            flags.append(f"{name}:f1")
        precision.append(p)
        recall.append(r)
        f1.append(f)
    return ClassReport(list(cm.class_names), precision, recall, f1, [int(s) for s in cm.supports], flags)


def macro_f1_from_predictions(actual: Sequence[int], predicted: Sequence[int], n: int) -> float:
    return class_report(accumulate_confusion(zip(actual, predicted), n)).macro_f1


@dataclass
class ConfidenceHistogram:
    counts: list[int]
    edges: tuple[float, ...] = CONFIDENCE_EDGES

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def ratios(self) -> list[float]:
        t = self.total
        return [c / t if t else 0.0 for c in self.counts]

    @property
    def labels(self) -> list[str]:
        return [f"{a:g}-{b:g}" for a, b in zip(self.edges[:-1], self.edges[1:])]


def confidence_histogram(confidences: Iterable[float]) -> ConfidenceHistogram:
    vals = np.asarray(list(confidences), dtype=np.float64)
    if vals.size and (np.any(vals < 0) | np.any(vals > 1) | np.any(~np.isfinite(vals))):
        raise ValueError("confidences must lie in [0, 1]")
    inner = np.asarray(CONFIDENCE_EDGES[1:-1])
    idx = np.searchsorted(inner, vals, side="right")
    counts = np.bincount(idx, minlength=len(CONFIDENCE_EDGES) - 1)
    return ConfidenceHistogram([int(v) for v in counts])


# ----------------------------------------------------------------------------
# report emission
# ----------------------------------------------------------------------------


def report_dict(report: ClassReport, cm: ConfusionMatrix, hist: ConfidenceHistogram | None = None,
                extra: dict | None = None) -> dict:
    rounded = report.rounded(2)
    classes = []
    for k, name in enumerate(report.class_names):
        classes.append({
            "name": name,
            "precision": report.precision[k],
            "recall": report.recall[k],
            "f1": report.f1[k],
            "support": report.support[k],
            "rounded": rounded[name],
        })
    out = {
        "schema": REPORT_SCHEMA,
        "classes": classes,
        "macro": {
            "precision": report.macro_precision,
            "recall": report.macro_recall,
            "f1": report.macro_f1,
            "support": report.total_support,
            "rounded": rounded["macro"],
        },
        "degenerate": list(report.degenerate),
        "confusion_matrix": {"class_names": list(cm.class_names), "counts": cm.counts.tolist()},
    }
    if hist is not None:
        out["confidence_histogram"] = {"edges": list(hist.edges), "counts": list(hist.counts),
                                       "ratios": hist.ratios}
    if extra:
        out["extra"] = extra
    return out


def parse_report(data: bytes) -> tuple[ClassReport, ConfusionMatrix, ConfidenceHistogram | None]:
    d = json.loads(data.decode("utf-8"))
    if d.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"unsupported report schema {d.get('schema')!r}")
    cls = d["classes"]
    report = ClassReport([c["name"] for c in cls], [c["precision"] for c in cls],
                         [c["recall"] for c in cls], [c["f1"] for c in cls],
                         [c["support"] for c in cls], list(d.get("degenerate", [])))
    cm = ConfusionMatrix(np.asarray(d["confusion_matrix"]["counts"]), d["confusion_matrix"]["class_names"])
    hist = None
    if "confidence_histogram" in d:
        h = d["confidence_histogram"]
        hist = ConfidenceHistogram(list(h["counts"]), tuple(h["edges"]))
    return report, cm, hist


def _emit_csv(report: ClassReport) -> bytes:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "precision", "recall", "f1", "support"])
    for k, name in enumerate(report.class_names):
        w.writerow([name, repr(report.precision[k]), repr(report.recall[k]), repr(report.f1[k]), report.support[k]])
    w.writerow(["macro", repr(report.macro_precision), repr(report.macro_recall), repr(report.macro_f1),
                report.total_support])
    return buf.getvalue().encode("utf-8")


def _emit_svg(cm: ConfusionMatrix, hist: ConfidenceHistogram | None) -> bytes:
    n, cell, left, top = cm.n, 36, 140, 40
    grid_w = n * cell
    chart_x = left + grid_w + 60
    chart_w, chart_h = 9 * 28, 160
    width = chart_x + chart_w + 30 if hist is not None else left + grid_w + 30
    height = max(top + grid_w + 120, top + chart_h + 80)
    vmax = max(1, int(cm.counts.max()))
    esc = su.escape
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="10">',
        f'<text x="{left}" y="20" font-size="12">Confusion matrix (rows actual, columns predicted)</text>',
        '<g id="confusion">',
    ]
    for i in range(n):
        parts.append(f'<text x="{left - 6}" y="{top + i * cell + cell / 2 + 3}" text-anchor="end">'
                     f'{esc(cm.class_names[i])}</text>')
        for j in range(n):
            v = int(cm.counts[i, j])
            shade = 1.0 - v / vmax
            r, g, b = (int(9 + (255 - 9) * shade), int(96 + (255 - 96) * shade), int(191 + (255 - 191) * shade))
            fg = "#ffffff" if shade < 0.5 else "#000000"
            x, y = left + j * cell, top + i * cell
            parts.append(f'<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="rgb({r},{g},{b})" stroke="#999999"/>')
            parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 3}" text-anchor="middle" '
                         f'fill="{fg}">{v}</text>')
    for j in range(n):
        x = left + j * cell + cell / 2
        y = top + grid_w + 8
        parts.append(f'<text x="{x}" y="{y}" transform="rotate(60 {x} {y})">{esc(cm.class_names[j])}</text>')
    parts.append("</g>")
    if hist is not None:
        base = top + chart_h
        parts.append('<g id="confidence">')
        parts.append(f'<text x="{chart_x}" y="20" font-size="12">Confidence score ratio</text>')
        parts.append(f'<line x1="{chart_x}" y1="{base}" x2="{chart_x + chart_w}" y2="{base}" stroke="#000000"/>')
        for k, (ratio, label) in enumerate(zip(hist.ratios, hist.labels)):
            h = ratio * chart_h
            x = chart_x + k * 28 + 4
            parts.append(f'<rect class="bar" x="{x}" y="{base - h:.3f}" width="20" height="{h:.3f}" fill="#3366cc"/>')
            parts.append(f'<text x="{x + 10}" y="{base + 12}" text-anchor="middle" font-size="8">{label}</text>')
            parts.append(f'<text x="{x + 10}" y="{base - h - 3:.3f}" text-anchor="middle" font-size="8">'
                         f'{ratio:.2f}</text>')
        parts.append("</g>")
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode("utf-8")


def emit_report(report: ClassReport, cm: ConfusionMatrix, hist: ConfidenceHistogram | None = None,
                format: str = "json", extra: dict | None = None) -> bytes:
    if format == "json":
        d = report_dict(report, cm, hist, extra)
        return (json.dumps(d, sort_keys=True, indent=2) + "\n").encode("utf-8")
    if format == "csv":
        return _emit_csv(report)
    if format == "svg":
        return _emit_svg(cm, hist)
    raise ValueError(f"unknown report format {format!r}")


def separation_margin(embeddings: np.ndarray, labels: Sequence[int]) -> float:
    """Mean intra-class cosine minus mean inter-class cosine over distinct pairs."""
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    n = np.linalg.norm(e, axis=1, keepdims=True)
    z = e / np.where(n > 0, n, 1.0)
    s = z @ z.T
    same = y[:, None] == y[None, :]
    off = ~np.eye(len(y), dtype=bool)
    intra, inter = s[same & off], s[~same]
    if intra.size == 0 or inter.size == 0:
        raise ValueError("separation_margin needs at least two classes and one same-class pair")
    return float(intra.mean() - inter.mean())
