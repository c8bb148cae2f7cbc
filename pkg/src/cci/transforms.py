"""Geometric variant generation: flips, rotation, crop, translation, canvas scaling.

Parameter ranges: rotation angle in [-45, 45] degrees, crop covering a
fraction of the original area in [0.6, 0.9] (center-anchored, resized back),
translation up to 20% of each dimension (integer pixels), canvas scale factor
in (1, 8] with the original pixels kept exactly in the centered region.

Exposed borders and enlarged canvases are filled by policy: ``reflect``
(default, mirror padding), ``constant`` (solid color), or ``hook`` (an
external command invoked as ``<cmd> <in.png> <mask.png> <out.png>`` that must
exit 0; the mask marks pixels to synthesize). Viewpoint variants have no
internal implementation and always require the hook; without one their
manifest rows are emitted with hook-pending status.

Every sampled parameter is recorded in the output manifest, and re-applying a
recorded row reproduces the variant byte-exactly.
"""

from __future__ import annotations

import csv
import json
import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .interpolate import reflect_index, resize_bicubic, sample_bilinear

logger = logging.getLogger(__name__)

GEOMETRIC_KINDS = ("hflip", "vflip", "rotate", "crop", "translate", "scale")
HOOK_ONLY_KINDS = ("viewpoint",)

ROTATE_RANGE = (-45.0, 45.0)
CROP_RANGE = (0.6, 0.9)
TRANSLATE_MAX_FRACTION = 0.2
SCALE_RANGE = (1.0, 8.0)  # open at 1

FILL_POLICIES = ("reflect", "constant", "hook")


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    fill: str = "reflect"

    def __post_init__(self):
        if self.kind not in GEOMETRIC_KINDS + HOOK_ONLY_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.fill not in FILL_POLICIES:
            raise ValueError(f"unknown fill policy {self.fill!r}")
        p = self.params
        if self.kind == "rotate" and not ROTATE_RANGE[0] <= p["angle"] <= ROTATE_RANGE[1]:
            raise ValueError(f"rotation angle {p['angle']} outside {ROTATE_RANGE}")
        if self.kind == "crop" and not CROP_RANGE[0] <= p["area"] <= CROP_RANGE[1]:
            raise ValueError(f"crop area fraction {p['area']} outside {CROP_RANGE}")
        if self.kind == "translate":
            if abs(p["fx"]) > TRANSLATE_MAX_FRACTION or abs(p["fy"]) > TRANSLATE_MAX_FRACTION:
                raise ValueError("translation offsets exceed 20% of the image dimensions")
        if self.kind == "scale" and not SCALE_RANGE[0] < p["factor"] <= SCALE_RANGE[1]:
            raise ValueError(f"scale factor {p['factor']} outside ({SCALE_RANGE[0]}, {SCALE_RANGE[1]}]")


def sample_spec(kind: str, rng: np.random.Generator, *, fill: str = "reflect", seed: int = 0) -> TransformSpec:
    """Draw kind-specific parameters from rng; flips and hook kinds take none."""
    params: dict = {}
    if kind == "rotate":
        params["angle"] = float(rng.uniform(*ROTATE_RANGE))
    elif kind == "crop":
        params["area"] = float(rng.uniform(*CROP_RANGE))
    elif kind == "translate":
        params["fx"] = float(rng.uniform(-TRANSLATE_MAX_FRACTION, TRANSLATE_MAX_FRACTION))
        params["fy"] = float(rng.uniform(-TRANSLATE_MAX_FRACTION, TRANSLATE_MAX_FRACTION))
    elif kind == "scale":
        params["factor"] = float(rng.uniform(SCALE_RANGE[0] + 1e-9, SCALE_RANGE[1]))
    return TransformSpec(kind=kind, params=params, seed=seed, fill=fill)


def apply(
    raster: np.ndarray,
    spec: TransformSpec,
    *,
    fill_value: tuple[int, int, int] = (0, 0, 0),
    hook_cmd: str | None = None,
) -> np.ndarray:
    """Apply one transform to an (H, W, 3) uint8 raster."""
    raster = np.asarray(raster)
    if raster.ndim != 3 or raster.shape[2] != 3 or raster.dtype != np.uint8:
        raise ValueError("expected an (H, W, 3) uint8 raster")
    if raster.shape[0] == 0 or raster.shape[1] == 0:
        raise ValueError("zero-area image")
    if spec.kind == "hflip":
        return raster[:, ::-1].copy()
    if spec.kind == "vflip":
        return raster[::-1].copy()
    if spec.kind == "rotate":
        return _rotate(raster, spec, fill_value, hook_cmd)
    if spec.kind == "crop":
        return _crop(raster, spec.params["area"])
    if spec.kind == "translate":
        return _translate(raster, spec, fill_value, hook_cmd)
    if spec.kind == "scale":
        return _scale(raster, spec, fill_value, hook_cmd)
    if spec.kind in HOOK_ONLY_KINDS:
        if hook_cmd is None:
            raise ValueError(f"transform kind {spec.kind!r} requires an external hook command")
        # the whole frame is synthesized by the hook
        return _run_hook(hook_cmd, raster, np.ones(raster.shape[:2], dtype=bool))
    raise AssertionError(spec.kind)


def _fill_exposed(result: np.ndarray, exposed: np.ndarray, spec: TransformSpec, fill_value, hook_cmd) -> np.ndarray:
    if not exposed.any():
        return result
    if spec.fill == "constant":
        result[exposed] = np.asarray(fill_value, dtype=np.uint8)
        return result
    if spec.fill == "hook":
        if hook_cmd is None:
            raise ValueError("fill policy 'hook' requires a hook command")
        result[exposed] = np.asarray(fill_value, dtype=np.uint8)
        return _run_hook(hook_cmd, result, exposed)
    raise AssertionError(spec.fill)


def _rotate(raster: np.ndarray, spec: TransformSpec, fill_value, hook_cmd) -> np.ndarray:
    angle = spec.params["angle"]
    if angle == 0.0:
        return raster.copy()
    h, w = raster.shape[:2]
    theta = np.deg2rad(angle)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w]
    dy, dx = rows - cy, cols - cx
    # inverse mapping: rotate output coordinates back into the source frame
    src_y = cy + dy * cos_t - dx * sin_t
    src_x = cx + dy * sin_t + dx * cos_t
    values, inside = sample_bilinear(raster, src_y, src_x, reflect=spec.fill == "reflect")
    out = np.rint(values).astype(np.uint8)
    if spec.fill == "reflect":
        return out
    return _fill_exposed(out, ~inside, spec, fill_value, hook_cmd)


def crop_region(h: int, w: int, area: float) -> tuple[int, int, int, int]:
    """Centered crop window (top, left, height, width) for an area fraction."""
    side = np.sqrt(area)
    ch = int(round(h * side))
    cw = int(round(w * side))
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def _crop(raster: np.ndarray, area: float) -> np.ndarray:
    h, w = raster.shape[:2]
    top, left, ch, cw = crop_region(h, w, area)
    region = raster[top : top + ch, left : left + cw].astype(np.float64)
    resized = resize_bicubic(region, h, w)
    return np.rint(np.clip(resized, 0.0, 255.0)).astype(np.uint8)


def _translate(raster: np.ndarray, spec: TransformSpec, fill_value, hook_cmd) -> np.ndarray:
    h, w = raster.shape[:2]
    dx = int(round(spec.params["fx"] * w))
    dy = int(round(spec.params["fy"] * h))
    if spec.fill == "reflect":
        rows = reflect_index(np.arange(h) - dy, h)
        cols = reflect_index(np.arange(w) - dx, w)
        return raster[rows][:, cols].copy()
    out = np.empty_like(raster)
    out[:] = np.asarray(fill_value, dtype=np.uint8)
    src_r = slice(max(0, -dy), min(h, h - dy))
    dst_r = slice(max(0, dy), min(h, h + dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_c = slice(max(0, dx), min(w, w + dx))
    exposed = np.ones((h, w), dtype=bool)
    out[dst_r, dst_c] = raster[src_r, src_c]
    exposed[dst_r, dst_c] = False
    if spec.fill == "constant":
        return out
    return _fill_exposed(out, exposed, spec, fill_value, hook_cmd)


def _scale(raster: np.ndarray, spec: TransformSpec, fill_value, hook_cmd) -> np.ndarray:
    factor = spec.params["factor"]
    h, w = raster.shape[:2]
    ch, cw = int(round(factor * h)), int(round(factor * w))
    top, left = (ch - h) // 2, (cw - w) // 2
    if spec.fill == "reflect":
        out = np.pad(raster, ((top, ch - h - top), (left, cw - w - left), (0, 0)), mode="reflect")
        return out
    out = np.empty((ch, cw, 3), dtype=np.uint8)
    out[:] = np.asarray(fill_value, dtype=np.uint8)
    out[top : top + h, left : left + w] = raster
    if spec.fill == "constant":
        return out
    exposed = np.ones((ch, cw), dtype=bool)
    exposed[top : top + h, left : left + w] = False
    return _fill_exposed(out, exposed, spec, fill_value, hook_cmd)


def _run_hook(cmd: str, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Invoke the external fill command on temp files and read back the result."""
    from PIL import Image

    with tempfile.TemporaryDirectory(prefix="cci-hook-") as tmp:
        in_path = Path(tmp) / "in.png"
        mask_path = Path(tmp) / "mask.png"
        out_path = Path(tmp) / "out.png"
        Image.fromarray(image, mode="RGB").save(in_path)
        Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(mask_path)
        proc = subprocess.run([*shlex.split(cmd), str(in_path), str(mask_path), str(out_path)])
        if proc.returncode != 0:
            raise RuntimeError(f"external hook exited with status {proc.returncode}")
        with Image.open(out_path) as img:
            result = np.asarray(img.convert("RGB"))
    if result.shape != image.shape:
        raise RuntimeError(f"hook returned shape {result.shape}, expected {image.shape}")
    return result.copy()


# -- subset generation -----------------------------------------------------

# The 11-variant pack: five geometric transforms, four canvas scales and two
# hook-supplied viewpoints per source image.
DEFAULT_VARIANT_KINDS = (
    "hflip",
    "vflip",
    "rotate",
    "crop",
    "translate",
    "scale",
    "scale",
    "scale",
    "scale",
    "viewpoint",
    "viewpoint",
)

MANIFEST_FIELDS = ("src", "kind", "params_json", "out_path")


def make_subset(
    rows: list[tuple[str, str]] | list[str],
    kinds: list[str],
    seed: int,
    out_dir: str | Path,
    *,
    fill: str = "reflect",
    fill_value: tuple[int, int, int] = (0, 0, 0),
    hook_cmd: str | None = None,
) -> list[dict]:
    """Generate variants for every (image, kind) pair and write a manifest.

    ``rows`` are manifest entries (path or (path, label)). Parameters are
    drawn from a generator seeded by (seed, row index, kind index), so the
    same inputs and seed reproduce every output byte-exactly. Unreadable
    images are logged and skipped. Hook-only kinds without a hook command
    produce pending manifest rows with no output file.
    """
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: list[dict] = []
    for row_index, row in enumerate(rows):
        src = row[0] if isinstance(row, (tuple, list)) else row
        try:
            with Image.open(src) as img:
                raster = np.asarray(img.convert("RGB"))
        except OSError as exc:
            logger.warning("skipping unreadable image %s: %s", src, exc)
            continue
        occurrences: dict[str, int] = {}
        for kind_index, kind in enumerate(kinds):
            occurrence = occurrences.get(kind, 0)
            occurrences[kind] = occurrence + 1
            rng = np.random.default_rng(np.random.SeedSequence((seed, row_index, kind_index)))
            name = f"{Path(src).stem}__{kind}{occurrence if occurrence else ''}.png"
            if kind in HOOK_ONLY_KINDS and hook_cmd is None:
                manifest.append(
                    {
                        "src": str(src),
                        "kind": kind,
                        "params_json": json.dumps({"status": "hook-pending"}),
                        "out_path": "",
                    }
                )
                continue
            spec = sample_spec(kind, rng, fill=fill, seed=seed)
            variant = apply(raster, spec, fill_value=fill_value, hook_cmd=hook_cmd)
            out_path = out_dir / name
            Image.fromarray(variant, mode="RGB").save(out_path, format="PNG", optimize=False, compress_level=6)
            record = dict(spec.params)
            record["fill"] = fill
            if fill == "constant":
                record["fill_value"] = list(fill_value)
            manifest.append(
                {
                    "src": str(src),
                    "kind": kind,
                    "params_json": json.dumps(record, sort_keys=True),
                    "out_path": str(out_path),
                }
            )
    write_variant_manifest(manifest, out_dir / "variants.csv")
    return manifest


def write_variant_manifest(manifest: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(manifest)


def read_variant_manifest(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def regenerate(manifest: list[dict], out_dir: str | Path, *, hook_cmd: str | None = None) -> list[Path]:
    """Re-apply recorded specs; outputs are byte-identical to the original run.

    Fill policy and constant color are read back from the recorded params.
    """
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for row in manifest:
        params = json.loads(row["params_json"])
        if params.get("status") == "hook-pending" or not row["out_path"]:
            continue
        fill = params.pop("fill", "reflect")
        fill_value = tuple(params.pop("fill_value", (0, 0, 0)))
        with Image.open(row["src"]) as img:
            raster = np.asarray(img.convert("RGB"))
        spec = TransformSpec(kind=row["kind"], params=params, fill=fill)
        variant = apply(raster, spec, fill_value=fill_value, hook_cmd=hook_cmd)
        out_path = out_dir / Path(row["out_path"]).name
        Image.fromarray(variant, mode="RGB").save(out_path, format="PNG", optimize=False, compress_level=6)
        written.append(out_path)
    return written
