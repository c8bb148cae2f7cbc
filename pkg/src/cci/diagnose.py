"""Classify predictions as foreground-driven, background-driven or fine-grained confusion.

An importance map computed with respect to the model's *predicted* class is
binarized (top clusters by weight until half the positive mass is covered),
compared by IoU against an ingested foreground mask and its complement, and
the prediction is filed into exactly one category:

    Correct      prediction matches the ground truth
    BG-Er        map overlaps the background more than the foreground
    Fine-Er      foreground-driven and the judge calls the pair similar
    Other-FG-Er  foreground-driven and the judge calls the pair different
    Degenerate   the map carries no positive weight to binarize

An FG/BG IoU tie resolves to foreground-driven. Foreground masks arrive as
1-channel PNGs (nonzero = foreground), resized to the map resolution by
nearest neighbor when needed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .importance import ImportanceMap
from .interpolate import resize_nearest

CATEGORIES = ("Correct", "BG-Er", "Fine-Er", "Other-FG-Er", "Degenerate")

DEFAULT_MASK_PROMPT = "<class name>, foreground objects"


class DegenerateMapError(ValueError):
    """Raised when a map has no positive cluster weight to binarize."""


@dataclass(frozen=True)
class FgMask:
    """Pixel-level foreground mask (True = foreground)."""

    bits: np.ndarray
    source: str = "ingested-file"
    prompt: str = DEFAULT_MASK_PROMPT

    @property
    def background(self) -> np.ndarray:
        return ~self.bits


def load_fg_mask(path: str | Path, size: int, *, prompt: str = DEFAULT_MASK_PROMPT) -> FgMask:
    """Read a 1-channel mask PNG (nonzero = foreground), nearest-resized to size x size."""
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    bits = arr != 0
    if bits.shape != (size, size):
        bits = resize_nearest(bits, size, size)
    return FgMask(bits=bits, source=str(path), prompt=prompt)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; 0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


def binarize_heatmap(imap: ImportanceMap, mass: float = 0.5) -> np.ndarray:
    """Binary pixel mask of the dominant clusters.

    Clusters are taken in descending weight order (ties to the lower index)
    until the selection covers ``mass`` of the total positive weight, always
    at least one cluster, then expanded to pixels by nearest upsampling.
    """
    weights = imap.score.weights
    positive_total = float(np.sum(np.maximum(weights, 0.0)))
    if positive_total <= 0.0:
        raise DegenerateMapError("no positive cluster weight to binarize")
    order = np.argsort(-weights, kind="stable")
    selected: list[int] = []
    cumulative = 0.0
    for k in order:
        selected.append(int(k))
        cumulative += max(float(weights[k]), 0.0)
        if cumulative >= mass * positive_total:
            break
    member = np.isin(imap.clusters.assignment, selected)
    g = imap.grid.shape[0]
    size = imap.pixel_map.shape[0]
    return resize_nearest(member.reshape(g, g), size, size)


@dataclass(frozen=True)
class ErrorRecord:
    image_id: str
    gt: str
    pred: str
    correct: bool
    iou_fg: float
    iou_bg: float
    category: str
    judge_verdict: str | None = None

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "gt": self.gt,
            "pred": self.pred,
            "correct": self.correct,
            "iou_fg": self.iou_fg,
            "iou_bg": self.iou_bg,
            "category": self.category,
            "judge_verdict": self.judge_verdict,
        }


def classify(
    image_id: str,
    imap: ImportanceMap,
    fg_mask: FgMask,
    gt: str,
    pred: str,
    judge,
    *,
    mass: float = 0.5,
) -> ErrorRecord:
    """File one prediction into its error category.

    The map must have been computed with respect to ``pred``. ``judge`` is any
    object with ``verdict(gt, pred) -> "similar" | "different"``.
    """
    if gt == pred:
        return ErrorRecord(image_id, gt, pred, True, math.nan, math.nan, "Correct")
    try:
        bmap = binarize_heatmap(imap, mass)
    except DegenerateMapError:
        return ErrorRecord(image_id, gt, pred, False, math.nan, math.nan, "Degenerate")
    iou_fg = iou(bmap, fg_mask.bits)
    iou_bg = iou(bmap, fg_mask.background)
    if iou_bg > iou_fg:
        return ErrorRecord(image_id, gt, pred, False, iou_fg, iou_bg, "BG-Er")
    verdict = judge.verdict(gt, pred)
    category = "Fine-Er" if verdict == "similar" else "Other-FG-Er"
    return ErrorRecord(image_id, gt, pred, False, iou_fg, iou_bg, category, verdict)


def aggregate_taxonomy(records: list[ErrorRecord]) -> dict:
    """Category fractions over all records and over errors only."""
    if not records:
        raise ValueError("no records to aggregate")
    counts = {c: 0 for c in CATEGORIES}
    for record in records:
        counts[record.category] += 1
    total = len(records)
    errors = total - counts["Correct"]
    return {
        "total": total,
        "errors": errors,
        "counts": counts,
        "fractions_all": {c: counts[c] / total for c in CATEGORIES},
        "fractions_errors": {
            c: (counts[c] / errors if errors else 0.0) for c in CATEGORIES if c != "Correct"
        },
    }


def write_taxonomy_report(report: dict, json_path: str | Path, csv_path: str | Path) -> None:
    Path(json_path).write_text(json.dumps(report, indent=2) + "\n")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "count", "fraction_all", "fraction_errors"])
        for category in CATEGORIES:
            frac_err = report["fractions_errors"].get(category)
            writer.writerow(
                [
                    category,
                    report["counts"][category],
                    repr(report["fractions_all"][category]),
                    repr(frac_err) if frac_err is not None else "",
                ]
            )


def write_records_jsonl(records: list[ErrorRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json()) + "\n")
