"""Walkthrough: from an image to a cluster-importance heatmap.

Builds a small synthetic encoder (random weights, so the map reflects the
mechanics rather than real semantics), runs the full pipeline, and writes the
overlay PNG plus the per-image report JSON that carries the numbers.

Run from the repo root:  python3 demos/01_importance_maps.py
"""

import json
from pathlib import Path

import numpy as np

from cci import ViTConfig, VitEncoder, compute_cci, new_random_bundle, preprocess, render_overlay
from cci.interpolate import resize_bicubic

OUT = Path(__file__).parent / "out" / "importance"
OUT.mkdir(parents=True, exist_ok=True)

# A 64px encoder with 8px patches: an 8x8 grid of 64 patch tokens.
config = ViTConfig(
    image_size=64, patch_size=8, depth=2, heads=4, embed_dim=32,
    preprocess_mean=(0.48, 0.46, 0.41), preprocess_std=(0.27, 0.26, 0.28),
)
bundle = new_random_bundle(config, seed=0)
encoder = VitEncoder(bundle)

# Synthetic photo: noisy background with a bright square "object".
rng = np.random.default_rng(7)
raster = rng.integers(40, 90, size=(96, 96, 3), dtype=np.uint8)
raster[30:66, 30:66] = (220, 180, 40)

image = preprocess(raster, config)
text_embedding = rng.normal(size=bundle.proj_dim)

imap = compute_cci(encoder, image, text_embedding, k=5, seed=0)

print(f"base similarity s = {imap.score.base_similarity:+.4f}")
print(f"{'cluster':>7} {'size':>5} {'s_k':>8} {'drop':>8} {'weight':>8}")
for k in range(imap.clusters.k):
    print(
        f"{k:>7} {int(imap.clusters.sizes[k]):>5} "
        f"{imap.score.cluster_similarities[k]:>8.4f} "
        f"{imap.score.drops[k]:>+8.4f} {imap.score.weights[k]:>+8.4f}"
    )
print(f"weights sum to {imap.score.weights.sum():.6f} (degenerate={imap.score.degenerate})")

display = np.rint(np.clip(resize_bicubic(raster.astype(np.float64), 64, 64), 0, 255)).astype(np.uint8)
(OUT / "overlay.png").write_bytes(render_overlay(display, imap.pixel_map))
(OUT / "report.json").write_text(json.dumps(imap.report("demo object"), indent=2))
print(f"\nwrote {OUT/'overlay.png'} and {OUT/'report.json'}")
