"""Deletion/insertion faithfulness protocol with zero-shot and retrieval scoring.

Pixels are ranked by importance (ties broken by row-major index). Deletion
replaces the top-ranked pixels of the standardized image with seeded uniform
noise drawn over the per-image value range; insertion reveals them onto a
blank canvas. The cumulative modified count at step m is exactly
floor(m * fraction * P), every pixel is modified at most once, and accuracy
is re-scored at each of the steps+1 curve points (step 0 is the unmodified
image for deletion and the blank canvas for insertion). The area under the
curve uses the trapezoid rule over the step axis normalized to [0, 1].

Scoring accepts any model exposing ``image_embedding(image) -> vector``
(:class:`cci.encoder.VitEncoder` does); curves compare that embedding against
a text bank by cosine.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .importance import cosine
from .model_io import TextEmbeddingBank

logger = logging.getLogger(__name__)

BLANK_MODES = ("mean", "black", "noise")


@dataclass(frozen=True)
class StepSchedule:
    """Perturbation schedule; defaults modify ~0.5% of pixels per step for 100 steps."""

    steps: int = 100
    fraction_per_step: float = 0.005
    noise_seed: int = 0

    def __post_init__(self):
        if self.steps <= 0 or self.fraction_per_step <= 0.0:
            raise ValueError("steps and fraction_per_step must be positive")
        if self.steps * self.fraction_per_step > 1.0 + 1e-12:
            raise ValueError("schedule would modify more pixels than the image has")

    def cumulative_counts(self, pixel_count: int) -> np.ndarray:
        """Pixels modified after each step m = 0..steps: floor(m * fraction * P)."""
        m = np.arange(self.steps + 1, dtype=np.float64)
        return np.floor(m * self.fraction_per_step * pixel_count).astype(np.int64)


@dataclass(frozen=True)
class FaithfulnessCurve:
    mode: str  # "deletion" | "insertion"
    values: np.ndarray  # (steps+1,) accuracy points in [0, 1]
    auc: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


def curve_auc(values: Sequence[float]) -> float:
    """Trapezoid AUC over the normalized step axis; exactly 1.0 for a constant-1 curve."""
    values = np.asarray(values, dtype=np.float64)
    return float(np.trapezoid(values)) / (len(values) - 1)


def make_curve(mode: str, values: Sequence[float]) -> FaithfulnessCurve:
    return FaithfulnessCurve(mode=mode, values=np.asarray(values, dtype=np.float64), auc=curve_auc(values))


@dataclass(frozen=True)
class ZeroShotResult:
    ranked_labels: list[str]
    scores: np.ndarray  # cosine per bank entry, bank order
    top1_hit: bool
    top5_hit: bool


def rank_bank(embedding: np.ndarray, bank: TextEmbeddingBank) -> tuple[np.ndarray, np.ndarray]:
    """(indices sorted by cosine descending with ties in bank order, raw scores)."""
    scores = np.array([cosine(embedding, vec) for vec in bank.vectors])
    return np.argsort(-scores, kind="stable"), scores


def zero_shot(model, image: np.ndarray, bank: TextEmbeddingBank, truth: str) -> ZeroShotResult:
    """Rank every bank label against the image embedding; track top-1/top-5 hits."""
    truth_index = bank.index_of(truth)  # raises if truth missing
    order, scores = rank_bank(model.image_embedding(image), bank)
    ranked = [bank.labels[i] for i in order]
    return ZeroShotResult(
        ranked_labels=ranked,
        scores=scores,
        top1_hit=bool(order[0] == truth_index),
        top5_hit=bool(truth_index in order[:5]),
    )


# -- perturbation machinery ------------------------------------------------


def pixel_order(pixel_map: np.ndarray) -> np.ndarray:
    """Flat pixel indices by map value descending, ties by row-major index."""
    flat = np.asarray(pixel_map, dtype=np.float64).ravel()
    return np.argsort(-flat, kind="stable")


def noise_canvas(image: np.ndarray, noise_seed: int) -> np.ndarray:
    """Seeded uniform noise over the standardized value range observed in the image."""
    rng = np.random.default_rng(noise_seed)
    lo, hi = float(image.min()), float(image.max())
    return rng.uniform(lo, hi, size=image.shape).astype(np.float32)


def blank_canvas(image: np.ndarray, blank: str, schedule: StepSchedule, mean, std) -> np.ndarray:
    """Insertion starting canvas: dataset-mean color (zeros), black, or noise."""
    if blank == "mean":
        return np.zeros_like(image)
    if blank == "black":
        m = np.asarray(mean, dtype=np.float32).reshape(3, 1, 1)
        s = np.asarray(std, dtype=np.float32).reshape(3, 1, 1)
        return np.broadcast_to(-m / s, image.shape).astype(np.float32).copy()
    if blank == "noise":
        return noise_canvas(image, schedule.noise_seed)
    raise ValueError(f"unknown blank mode {blank!r} (expected one of {BLANK_MODES})")


def _perturbation_steps(
    image: np.ndarray, pixel_map: np.ndarray, schedule: StepSchedule, mode: str, blank: str, mean, std
) -> Iterable[np.ndarray]:
    """Yield the canvas at each step 0..steps. The canvas is mutated in place."""
    side = image.shape[-1]
    if pixel_map.shape != (side, side):
        raise ValueError(f"pixel map {pixel_map.shape} does not match image side {side}")
    order = pixel_order(pixel_map)
    counts = schedule.cumulative_counts(side * side)
    if mode == "deletion":
        canvas = image.copy()
        source = noise_canvas(image, schedule.noise_seed)
    elif mode == "insertion":
        canvas = blank_canvas(image, blank, schedule, mean, std)
        source = image
    else:
        raise ValueError(f"unknown mode {mode!r}")
    yield canvas
    for m in range(1, schedule.steps + 1):
        newly = order[counts[m - 1] : counts[m]]
        rows, cols = np.unravel_index(newly, (side, side))
        canvas[:, rows, cols] = source[:, rows, cols]
        yield canvas


def classification_curves(
    model,
    image: np.ndarray,
    pixel_map: np.ndarray,
    bank: TextEmbeddingBank,
    truth: str,
    schedule: StepSchedule,
    mode: str,
    *,
    blank: str = "mean",
    mean=None,
    std=None,
) -> dict[str, FaithfulnessCurve]:
    """Per-step top-1/top-5 hit indicators for one image, as curves keyed 'top1'/'top5'."""
    top1, top5 = [], []
    for canvas in _perturbation_steps(image, pixel_map, schedule, mode, blank, mean, std):
        result = zero_shot(model, canvas, bank, truth)
        top1.append(float(result.top1_hit))
        top5.append(float(result.top5_hit))
    return {"top1": make_curve(mode, top1), "top5": make_curve(mode, top5)}


def deletion_curve(model, image, pixel_map, bank, truth, schedule: StepSchedule) -> dict[str, FaithfulnessCurve]:
    """Top-ranked pixels are iteratively replaced with seeded noise; lower AUC is better."""
    return classification_curves(model, image, pixel_map, bank, truth, schedule, "deletion")


def insertion_curve(
    model, image, pixel_map, bank, truth, schedule: StepSchedule, *, blank: str = "mean", mean=None, std=None
) -> dict[str, FaithfulnessCurve]:
    """Top-ranked pixels are progressively revealed from a blank canvas; higher AUC is better."""
    return classification_curves(
        model, image, pixel_map, bank, truth, schedule, "insertion", blank=blank, mean=mean, std=std
    )


def retrieval_curve(
    model,
    image: np.ndarray,
    pixel_map: np.ndarray,
    caption_bank: TextEmbeddingBank,
    truth_index: int,
    schedule: StepSchedule,
    k: int = 5,
    mode: str = "deletion",
    *,
    blank: str = "mean",
    mean=None,
    std=None,
) -> FaithfulnessCurve:
    """Hit indicator: the truth caption ranks within the top-k matches of the perturbed image."""
    if not 0 <= truth_index < len(caption_bank):
        raise ValueError(f"truth caption index {truth_index} outside bank of {len(caption_bank)}")
    hits = []
    for canvas in _perturbation_steps(image, pixel_map, schedule, mode, blank, mean, std):
        order, _ = rank_bank(model.image_embedding(canvas), caption_bank)
        hits.append(float(truth_index in order[:k]))
    return make_curve(mode, hits)


# -- dataset aggregation ----------------------------------------------------


@dataclass
class DatasetCurves:
    """Aggregate per-step accuracies over a manifest, one curve per (mode, metric)."""

    curves: dict[str, dict[str, FaithfulnessCurve]]  # mode -> metric -> curve
    images_scored: int
    images_skipped: int
    schedule: StepSchedule = field(default_factory=StepSchedule)

    def auc_table(self) -> dict:
        return {
            mode: {metric: curve.auc for metric, curve in metrics.items()}
            for mode, metrics in self.curves.items()
        }


def read_manifest(path: str | Path) -> list[tuple[str, str]]:
    """CSV manifest ``path,label`` with a header row."""
    rows: list[tuple[str, str]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "path" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise ValueError(f"manifest {path} must have 'path,label' columns")
        for row in reader:
            rows.append((row["path"], row["label"]))
    return rows


MapProvider = Callable[[np.ndarray, str], np.ndarray]
"""(standardized image, label) -> (S, S) pixel-level importance map."""


def dataset_curves(
    entries: Sequence[tuple[np.ndarray | None, str]],
    map_provider: MapProvider,
    model,
    bank: TextEmbeddingBank,
    schedule: StepSchedule,
    modes: Sequence[str] = ("deletion", "insertion"),
    *,
    blank: str = "mean",
    mean=None,
    std=None,
    map_workers=None,
) -> DatasetCurves:
    """Average per-step accuracy over images; unreadable entries (image None) are
    skipped with a logged count, never silently."""
    sums: dict[str, dict[str, np.ndarray]] = {
        mode: {m: np.zeros(schedule.steps + 1) for m in ("top1", "top5")} for mode in modes
    }
    scored = 0
    skipped = 0

    def one(entry):
        return _image_curves(entry, map_provider, model, bank, schedule, modes, blank, mean, std)

    runner = map_workers(one, entries) if map_workers is not None else map(one, entries)
    for per_image in runner:  # ordered reduction regardless of worker count
        if per_image is None:
            skipped += 1
            continue
        scored += 1
        for mode, metrics in per_image.items():
            for metric, curve in metrics.items():
                sums[mode][metric] += curve.values
    if skipped:
        logger.warning("skipped %d unreadable manifest entries", skipped)
    if scored == 0:
        raise ValueError("no scorable images in manifest")
    curves = {
        mode: {metric: make_curve(mode, total / scored) for metric, total in metrics.items()}
        for mode, metrics in sums.items()
    }
    return DatasetCurves(curves=curves, images_scored=scored, images_skipped=skipped, schedule=schedule)


def _image_curves(entry, map_provider, model, bank, schedule, modes, blank, mean, std):
    image, label = entry
    if image is None:
        return None
    pixel_map = map_provider(image, label)
    out = {}
    for mode in modes:
        out[mode] = classification_curves(
            model, image, pixel_map, bank, label, schedule, mode, blank=blank, mean=mean, std=std
        )
    return out


def write_curves_csv(path: str | Path, metrics: dict[str, FaithfulnessCurve], schedule: StepSchedule, pixel_count: int) -> None:
    """CSV: step,frac_modified,acc_top1,acc_top5."""
    counts = schedule.cumulative_counts(pixel_count)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "frac_modified", "acc_top1", "acc_top5"])
        for m in range(schedule.steps + 1):
            writer.writerow(
                [
                    m,
                    repr(float(counts[m] / pixel_count)),
                    repr(float(metrics["top1"].values[m])),
                    repr(float(metrics["top5"].values[m])),
                ]
            )
