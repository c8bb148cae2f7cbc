"""Command-line surface: explain, eval, diagnose, transform.

Configuration precedence is CLI flag over JSON config file over built-in
default. All randomness flows from the explicit --seed; results are
byte-identical across reruns and across worker counts (per-image work is
parallelized with an ordered reduction). Logs are line-delimited JSON on
stderr; data goes to files (and stdout stays quiet).

Exit codes: 0 success, 1 internal failure, 2 user or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnose as diag
from . import faithfulness as faith
from . import judge as judge_mod
from . import transforms
from .encoder import VitEncoder
from .importance import compute_cci, render_overlay
from .interpolate import resize_bicubic
from .model_io import ModelFormatError, load_model, load_text_bank, preprocess

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


class UserError(Exception):
    """Bad input or configuration; maps to exit code 2."""


def log_event(**fields) -> None:
    print(json.dumps(fields, sort_keys=True), file=sys.stderr, flush=True)


# -- option plumbing -------------------------------------------------------

DEFAULTS = {
    "k": 7,
    "seed": 0,
    "steps": 100,
    "step_frac": 0.005,
    "upsample": "bilinear",
    "blank": "mean",
    "binarize_mass": 0.5,
    "judge": "offline",
    "workers": 0,  # 0 = available parallelism
    "clamp_negative_weights": False,
    "fill": "reflect",
}


def _resolve(args: argparse.Namespace, key: str):
    """Flag > config file > default. Flags use None sentinels for 'not given'."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    config = getattr(args, "_config", {})
    if key in config:
        return config[key]
    return DEFAULTS.get(key)


def _load_config(args: argparse.Namespace) -> None:
    config = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UserError(f"config file {path} does not exist")
        config = json.loads(path.read_text())
    args._config = config


def _add_common(parser: argparse.ArgumentParser, *, model: bool = True) -> None:
    parser.add_argument("--config", help="JSON config file; explicit flags override it")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None, help="0 = available parallelism")
    if model:
        parser.add_argument("--model", default=None, help="named-tensor weight container")
        parser.add_argument("--text-bank", dest="text_bank", default=None)
        parser.add_argument("--k", type=int, default=None, help="cluster count (default 7)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cci")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="importance map + report for images")
    _add_common(p)
    p.add_argument("images", nargs="+", help="image files or a directory")
    p.add_argument("--label", required=True, help="text-bank label (or free text with --embedding)")
    p.add_argument("--embedding", default=None, help="JSON file with a raw embedding vector")
    p.add_argument("--upsample", choices=["bilinear", "nearest"], default=None)
    p.add_argument("--clamp-negative-weights", dest="clamp_negative_weights", action="store_const", const=True, default=None)

    p = sub.add_parser("eval", help="deletion/insertion faithfulness curves over a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="CSV manifest: path,label")
    p.add_argument("--mode", choices=["deletion", "insertion", "both"], default="both")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--step-frac", dest="step_frac", type=float, default=None)
    p.add_argument("--blank", choices=list(faith.BLANK_MODES), default=None)
    p.add_argument("--upsample", choices=["bilinear", "nearest"], default=None)

    p = sub.add_parser("diagnose", help="error-source taxonomy over a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="CSV manifest: path,label (ground truth)")
    p.add_argument("--masks", required=True, help="directory of masks/<image-id>.png")
    p.add_argument("--judge", choices=["offline", "http"], default=None)
    p.add_argument("--judge-fixture", dest="judge_fixture", default=None)
    p.add_argument("--judge-endpoint", dest="judge_endpoint", default=None)
    p.add_argument("--judge-model", dest="judge_model", default="gpt-4o")
    p.add_argument("--binarize-mass", dest="binarize_mass", type=float, default=None)

    p = sub.add_parser("transform", help="generate geometric variants of manifest images")
    _add_common(p, model=False)
    p.add_argument("--manifest", required=True, help="CSV manifest: path,label")
    p.add_argument("--kinds", default=",".join(transforms.DEFAULT_VARIANT_KINDS),
                   help="comma-separated transform kinds; repeats allowed")
    p.add_argument("--fill", choices=list(transforms.FILL_POLICIES), default=None)
    p.add_argument("--hook-cmd", dest="hook_cmd", default=None)
    return parser


# -- shared loading --------------------------------------------------------


def _load_model_bank(args) -> tuple[VitEncoder, "faith.TextEmbeddingBank"]:
    model_path = _resolve(args, "model")
    bank_path = _resolve(args, "text_bank")
    if not model_path:
        raise UserError("--model is required (flag or config)")
    if not bank_path:
        raise UserError("--text-bank is required (flag or config)")
    try:
        bundle = load_model(model_path)
    except (ModelFormatError, FileNotFoundError) as exc:
        raise UserError(f"cannot load model: {exc}") from exc
    try:
        bank = load_text_bank(bank_path, expected_dim=None)
    except (ValueError, FileNotFoundError) as exc:
        raise UserError(f"cannot load text bank: {exc}") from exc
    encoder = VitEncoder(bundle)
    return encoder, bank


def _worker_map(args):
    workers = int(_resolve(args, "workers") or 0)
    if workers == 0:
        workers = os.cpu_count() or 1
    if workers == 1:
        return None

    def mapper(fn, items):  # pool.map preserves input order
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))

    return mapper


def _collect_images(paths: list[str]) -> list[Path]:
    collected: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            collected.extend(sorted(q for q in path.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES))
        elif path.exists():
            collected.append(path)
        else:
            raise UserError(f"image path {path} does not exist")
    if not collected:
        raise UserError("no input images found")
    return collected


def _read_raster(path: Path) -> np.ndarray | None:
    from PIL import Image

    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except OSError as exc:
        log_event(event="skip_image", path=str(path), reason=str(exc))
        return None


# -- commands --------------------------------------------------------------


def cmd_explain(args) -> int:
    encoder, bank = _load_model_bank(args)
    label = args.label
    if args.embedding:
        data = json.loads(Path(args.embedding).read_text())
        vector = np.asarray(data["vector"] if isinstance(data, dict) else data, dtype=np.float64)
    elif label in bank.labels:
        vector = bank.vector_for(label)
    else:
        raise UserError(f"label {label!r} not found in text bank and no --embedding given")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = _collect_images(args.images)
    k = int(_resolve(args, "k"))
    seed = int(_resolve(args, "seed"))
    upsample_mode = _resolve(args, "upsample")
    clamp = bool(_resolve(args, "clamp_negative_weights"))
    size = encoder.config.image_size

    def one(path: Path):
        raster = _read_raster(path)
        if raster is None:
            return None
        tensor = preprocess(raster, encoder.config)
        imap = compute_cci(
            encoder, tensor, vector, k, seed, upsample_mode=upsample_mode, clamp_negative=clamp
        )
        display = np.rint(np.clip(resize_bicubic(raster.astype(np.float64), size, size), 0.0, 255.0)).astype(np.uint8)
        png = render_overlay(display, imap.pixel_map)
        report = imap.report(label)
        report["image"] = str(path)
        (out_dir / f"{path.stem}.overlay.png").write_bytes(png)
        (out_dir / f"{path.stem}.report.json").write_text(json.dumps(report, indent=2) + "\n")
        return path

    mapper = _worker_map(args)
    results = list(mapper(one, images)) if mapper else [one(p) for p in images]
    done = sum(1 for r in results if r is not None)
    log_event(event="explain_done", images=done, skipped=len(images) - done, out=str(out_dir))
    if done == 0:
        raise UserError("no image could be processed")
    return 0


def cmd_eval(args) -> int:
    encoder, bank = _load_model_bank(args)
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise UserError(f"manifest {manifest_path} does not exist")
    rows = faith.read_manifest(manifest_path)
    if not rows:
        raise UserError("manifest is empty")
    for _, label in rows:
        if label not in bank.labels:
            raise UserError(f"label {label!r} not found in text bank")
    schedule = faith.StepSchedule(
        steps=int(_resolve(args, "steps")),
        fraction_per_step=float(_resolve(args, "step_frac")),
        noise_seed=int(_resolve(args, "seed")),
    )
    modes = ("deletion", "insertion") if args.mode == "both" else (args.mode,)
    k = int(_resolve(args, "k"))
    seed = int(_resolve(args, "seed"))
    upsample_mode = _resolve(args, "upsample")
    blank = _resolve(args, "blank")
    cfg = encoder.config

    entries = []
    for path, label in rows:
        raster = _read_raster(Path(path))
        entries.append((None if raster is None else preprocess(raster, cfg), label))

    def provider(image: np.ndarray, label: str) -> np.ndarray:
        return compute_cci(
            encoder, image, bank.vector_for(label), k, seed, upsample_mode=upsample_mode
        ).pixel_map

    result = faith.dataset_curves(
        entries,
        provider,
        encoder,
        bank,
        schedule,
        modes,
        blank=blank,
        mean=cfg.preprocess_mean,
        std=cfg.preprocess_std,
        map_workers=_worker_map(args),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pixels = cfg.image_size**2
    for mode, metrics in result.curves.items():
        faith.write_curves_csv(out_dir / f"curve_{mode}.csv", metrics, schedule, pixels)
    summary = {
        "auc": result.auc_table(),
        "images_scored": result.images_scored,
        "images_skipped": result.images_skipped,
        "steps": schedule.steps,
        "fraction_per_step": schedule.fraction_per_step,
        "seed": seed,
        "k": k,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log_event(event="eval_done", **{k: v for k, v in summary.items() if k != "auc"})
    return 0


def _build_judge(args):
    mode = _resolve(args, "judge")
    if mode == "offline":
        fixture = getattr(args, "judge_fixture", None)
        return judge_mod.OfflineJudge.from_fixture(fixture) if fixture else judge_mod.OfflineJudge()
    endpoint = getattr(args, "judge_endpoint", None) or getattr(args, "_config", {}).get("judge_endpoint")
    if not endpoint:
        raise UserError("--judge-endpoint is required in http judge mode")
    if not os.environ.get(judge_mod.API_KEY_ENV):
        raise UserError(f"environment variable {judge_mod.API_KEY_ENV} must be set for http judge mode")
    return judge_mod.HttpJudge(judge_mod.HttpJudgeConfig(endpoint=endpoint, model=args.judge_model))


def cmd_diagnose(args) -> int:
    judge = _build_judge(args)  # fail fast on judge misconfiguration
    encoder, bank = _load_model_bank(args)
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise UserError(f"manifest {manifest_path} does not exist")
    rows = faith.read_manifest(manifest_path)
    if not rows:
        raise UserError("manifest is empty")
    masks_dir = Path(args.masks)
    k = int(_resolve(args, "k"))
    seed = int(_resolve(args, "seed"))
    mass = float(_resolve(args, "binarize_mass"))
    cfg = encoder.config

    def one(row):
        path, gt = row
        image_id = Path(path).stem
        raster = _read_raster(Path(path))
        if raster is None:
            return None
        mask_path = masks_dir / f"{image_id}.png"
        if not mask_path.exists():
            log_event(event="skip_record", image=str(path), reason="missing mask")
            return None
        tensor = preprocess(raster, cfg)
        pred = faith.zero_shot(encoder, tensor, bank, gt).ranked_labels[0]
        imap = compute_cci(encoder, tensor, bank.vector_for(pred), k, seed, upsample_mode="nearest")
        fg = diag.load_fg_mask(mask_path, cfg.image_size)
        return diag.classify(image_id, imap, fg, gt, pred, judge, mass=mass)

    mapper = _worker_map(args)
    results = list(mapper(one, rows)) if mapper else [one(r) for r in rows]
    records = [r for r in results if r is not None]
    if not records:
        raise UserError("no diagnosable records (missing images or masks)")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    diag.write_records_jsonl(records, out_dir / "records.jsonl")
    report = diag.aggregate_taxonomy(records)
    report["skipped"] = len(rows) - len(records)
    diag.write_taxonomy_report(report, out_dir / "taxonomy.json", out_dir / "taxonomy.csv")
    log_event(event="diagnose_done", records=len(records), skipped=report["skipped"])
    return 0


def cmd_transform(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise UserError(f"manifest {manifest_path} does not exist")
    rows = faith.read_manifest(manifest_path)
    if not rows:
        raise UserError("manifest is empty")
    kinds = [kind.strip() for kind in args.kinds.split(",") if kind.strip()]
    for kind in kinds:
        if kind not in transforms.GEOMETRIC_KINDS + transforms.HOOK_ONLY_KINDS:
            raise UserError(f"unknown transform kind {kind!r}")
    manifest = transforms.make_subset(
        rows,
        kinds,
        int(_resolve(args, "seed")),
        args.out,
        fill=_resolve(args, "fill"),
        hook_cmd=args.hook_cmd,
    )
    pending = sum(1 for row in manifest if not row["out_path"])
    log_event(event="transform_done", variants=len(manifest) - pending, pending=pending)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _load_config(args)
        handler = {
            "explain": cmd_explain,
            "eval": cmd_eval,
            "diagnose": cmd_diagnose,
            "transform": cmd_transform,
        }[args.command]
        return handler(args)
    except UserError as exc:
        log_event(event="error", kind="user", message=str(exc))
        return 2
    except Exception as exc:  # noqa: BLE001 - single boundary for exit-code mapping
        log_event(event="error", kind="internal", message=f"{type(exc).__name__}: {exc}")
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
