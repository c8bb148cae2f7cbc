"""Cluster importance weights via similarity drops, assembled into spatial maps.

Pipeline per image: one unmasked forward gives the base image-text cosine and
the patch features; K-means groups the patches; one attenuated forward per
cluster gives the masked cosines; drops are normalized into weights and
painted onto the patch grid, then upsampled to pixel resolution.

The layer-0 token embedding is computed once and reused across all K masked
forwards. The K masked passes are independent and may run concurrently;
results are reduced in cluster order so output never depends on scheduling.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np

from .cluster import ClusterSet, cluster_masks, kmeans
from .interpolate import resize_bilinear, resize_nearest

logger = logging.getLogger(__name__)

DEGENERATE_EPS = 1e-8


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """cos(u, v) = u.v / (|u||v|). Raises on zero-norm input."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for zero-norm input")
    return float(u @ v) / (nu * nv)


@dataclass(frozen=True)
class ImportanceScore:
    """Base similarity, per-cluster similarities, drops and normalized weights."""

    base_similarity: float
    cluster_similarities: np.ndarray  # (K,)
    drops: np.ndarray  # (K,) base - cluster
    weights: np.ndarray  # (K,) drops / sum(drops), or uniform when degenerate
    degenerate: bool


@dataclass(frozen=True)
class ImportanceMap:
    """Patch-grid importance map and its pixel-level upsampling."""

    grid: np.ndarray  # (g, g)
    pixel_map: np.ndarray  # (S, S)
    score: ImportanceScore
    clusters: ClusterSet

    def report(self, label: str | None = None) -> dict:
        """Per-image report payload; the numeric source of truth for a run."""
        sizes = self.clusters.sizes
        return {
            "label": label,
            "s": self.score.base_similarity,
            "clusters": [
                {
                    "k": k,
                    "size": int(sizes[k]),
                    "s_k": float(self.score.cluster_similarities[k]),
                    "delta": float(self.score.drops[k]),
                    "w": float(self.score.weights[k]),
                }
                for k in range(self.clusters.k)
            ],
            "degenerate": self.score.degenerate,
            "seed": self.clusters.seed,
            "K": self.clusters.k,
        }


def score_clusters(base_similarity: float, cluster_similarities: np.ndarray) -> ImportanceScore:
    """Normalize similarity drops into weights; uniform fallback when the drops cancel."""
    s_k = np.asarray(cluster_similarities, dtype=np.float64)
    drops = base_similarity - s_k
    total = float(drops.sum())
    if abs(total) < DEGENERATE_EPS:
        weights = np.full(s_k.shape, 1.0 / s_k.shape[0])
        degenerate = True
    else:
        weights = drops / total
        degenerate = False
    return ImportanceScore(
        base_similarity=float(base_similarity),
        cluster_similarities=s_k,
        drops=drops,
        weights=weights,
        degenerate=degenerate,
    )


def upsample(grid: np.ndarray, size: int, mode: str = "bilinear") -> np.ndarray:
    """Patch-grid map -> (size, size) pixel map.

    Bilinear for pixel-ranking consumers, nearest for region overlap (each
    pixel block equals its patch value exactly).
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise ValueError(f"grid must be square, got {grid.shape}")
    if mode == "bilinear":
        return resize_bilinear(grid, size, size)
    if mode == "nearest":
        return resize_nearest(grid, size, size).astype(np.float64)
    raise ValueError(f"unknown upsample mode {mode!r}")


def assemble_map(
    score: ImportanceScore,
    clusters: ClusterSet,
    image_size: int,
    *,
    upsample_mode: str = "bilinear",
    clamp_negative: bool = False,
) -> ImportanceMap:
    """Paint cluster weights onto the patch lattice and upsample to pixels.

    ``clamp_negative`` zeroes negative weights in the painted map only (a
    visualization aid); the score keeps the signed values.
    """
    n = clusters.assignment.shape[0]
    g = int(round(np.sqrt(n)))
    if g * g != n:
        raise ValueError(f"patch count {n} is not a square grid")
    weights = np.maximum(score.weights, 0.0) if clamp_negative else score.weights
    grid = weights[clusters.assignment].reshape(g, g)
    return ImportanceMap(
        grid=grid,
        pixel_map=upsample(grid, image_size, upsample_mode),
        score=score,
        clusters=clusters,
    )


def compute_cci(
    encoder,
    image: np.ndarray,
    text_embedding: np.ndarray,
    k: int = 7,
    seed: int = 0,
    *,
    normalize_features: bool = True,
    feature_layer: int = -1,
    feature_final_norm: bool = True,
    upsample_mode: str = "bilinear",
    clamp_negative: bool = False,
) -> ImportanceMap:
    """Full importance map for one image against one text embedding.

    ``encoder`` is anything exposing the forward surface of
    :class:`cci.encoder.VitEncoder` (``embed``, ``forward_tokens``,
    ``patch_features`` and ``config``).
    """
    t = np.asarray(text_embedding, dtype=np.float64)
    if float(np.linalg.norm(t)) == 0.0:
        raise ValueError("text embedding has zero norm")
    tokens0 = encoder.embed(image)
    base = encoder.forward_tokens(tokens0)
    s = cosine(base.cls, t)
    features = encoder.patch_features(
        image, layer=feature_layer, apply_final_norm=feature_final_norm
    )
    clusters = kmeans(features, k, seed, normalize=normalize_features)
    s_k = np.empty(k, dtype=np.float64)
    for mask_index, mask in enumerate(cluster_masks(clusters)):
        attenuated = encoder.forward_tokens(tokens0, mask)
        s_k[mask_index] = cosine(attenuated.cls, t)
    score = score_clusters(s, s_k)
    return assemble_map(
        score,
        clusters,
        encoder.config.image_size,
        upsample_mode=upsample_mode,
        clamp_negative=clamp_negative,
    )


# -- overlay rendering ---------------------------------------------------

# Blue-to-red diverging colormap: anchors at 0 (blue), 0.5 (near white),
# 1 (red); linear interpolation between anchors, red marks high importance.
_COLOR_ANCHORS = np.array(
    [[40.0, 60.0, 190.0], [245.0, 245.0, 245.0], [190.0, 30.0, 40.0]]
)


def _colormap(values: np.ndarray) -> np.ndarray:
    v = np.clip(values, 0.0, 1.0)
    lo = _COLOR_ANCHORS[0] + (2.0 * v)[..., None] * (_COLOR_ANCHORS[1] - _COLOR_ANCHORS[0])
    hi = _COLOR_ANCHORS[1] + (2.0 * v - 1.0)[..., None] * (_COLOR_ANCHORS[2] - _COLOR_ANCHORS[1])
    return np.where(v[..., None] <= 0.5, lo, hi)


def render_overlay(raster: np.ndarray, pixel_map: np.ndarray, alpha: float = 0.5) -> bytes:
    """Alpha-blend a min-max normalized heatmap over an RGB raster, as PNG bytes.

    Deterministic for fixed inputs (PNG encoder settings pinned). A flat map
    (min == max) renders as a uniform mid-color tint and logs a warning.
    """
    from PIL import Image

    raster = np.asarray(raster)
    pixel_map = np.asarray(pixel_map, dtype=np.float64)
    if raster.shape[:2] != pixel_map.shape:
        raise ValueError(f"raster {raster.shape[:2]} and map {pixel_map.shape} sizes differ")
    lo, hi = float(pixel_map.min()), float(pixel_map.max())
    if hi == lo:
        logger.warning("degenerate importance map (min == max); rendering uniform tint")
        normalized = np.full_like(pixel_map, 0.5)
    else:
        normalized = (pixel_map - lo) / (hi - lo)
    color = _colormap(normalized)
    blended = np.rint((1.0 - alpha) * raster.astype(np.float64) + alpha * color)
    out = Image.fromarray(blended.astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    out.save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()
