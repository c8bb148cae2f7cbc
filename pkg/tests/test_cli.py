from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from cci.cli import main
from cci.encoder import VitEncoder
from cci.faithfulness import zero_shot
from cci.model_io import TextEmbeddingBank, load_model, preprocess, save_model, save_text_bank, new_random_bundle
from conftest import random_raster, tiny_config

REPORT_SCHEMA = {
    "type": "object",
    "required": ["label", "s", "clusters", "degenerate", "seed", "K", "image"],
    "properties": {
        "label": {"type": ["string", "null"]},
        "s": {"type": "number"},
        "degenerate": {"type": "boolean"},
        "seed": {"type": "integer"},
        "K": {"type": "integer"},
        "image": {"type": "string"},
        "clusters": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["k", "size", "s_k", "delta", "w"],
                "properties": {
                    "k": {"type": "integer"},
                    "size": {"type": "integer"},
                    "s_k": {"type": "number"},
                    "delta": {"type": "number"},
                    "w": {"type": "number"},
                },
            },
        },
    },
}


@pytest.fixture
def workspace(tmp_path):
    """Tiny model + bank + images + manifest on disk."""
    from PIL import Image

    config = tiny_config()
    bundle = new_random_bundle(config, seed=21)
    model_path = tmp_path / "model.nt"
    save_model(bundle, model_path)

    rng = np.random.default_rng(0)
    labels = ["hen", "zebra", "submarine"]
    vectors = rng.normal(size=(3, bundle.proj_dim)).astype(np.float32)
    bank = TextEmbeddingBank(labels=labels, vectors=vectors)
    bank_path = tmp_path / "bank.json"
    save_text_bank(bank, bank_path)

    images = []
    for i in range(3):
        path = tmp_path / f"img{i}.png"
        Image.fromarray(random_raster(48, 48, seed=200 + i), mode="RGB").save(path)
        images.append(path)

    manifest = tmp_path / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"])
        for i, path in enumerate(images):
            writer.writerow([str(path), labels[i]])

    return {
        "dir": tmp_path,
        "config": config,
        "bundle": bundle,
        "model": str(model_path),
        "bank": bank,
        "bank_path": str(bank_path),
        "images": images,
        "manifest": str(manifest),
        "labels": labels,
    }


def out_files(path):
    return sorted(p.name for p in path.iterdir())


class TestExplain:
    def test_single_image_two_files(self, workspace, tmp_path):
        out = tmp_path / "explain_out"
        code = main([
            "explain", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--label", "hen", "--out", str(out), "--seed", "3", str(workspace["images"][0]),
        ])
        assert code == 0
        assert out_files(out) == ["img0.overlay.png", "img0.report.json"]

    def test_unknown_label_exit_2_names_label(self, workspace, tmp_path, capsys):
        code = main([
            "explain", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--label", "unicorn", "--out", str(tmp_path / "x"), str(workspace["images"][0]),
        ])
        assert code == 2
        err_lines = [json.loads(line) for line in capsys.readouterr().err.splitlines()]
        assert any("unicorn" in line.get("message", "") for line in err_lines)

    def test_directory_three_images_six_files_schema_valid(self, workspace, tmp_path):
        jsonschema = pytest.importorskip("jsonschema")
        out = tmp_path / "explain_dir"
        code = main([
            "explain", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--label", "zebra", "--out", str(out), str(workspace["dir"]),
        ])
        assert code == 0
        names = out_files(out)
        assert len(names) == 6
        for report_name in [n for n in names if n.endswith(".json")]:
            report = json.loads((out / report_name).read_text())
            jsonschema.validate(report, REPORT_SCHEMA)
            assert report["K"] == 7

    def test_raw_embedding_file_for_free_text(self, workspace, tmp_path):
        emb_path = tmp_path / "query.json"
        emb_path.write_text(json.dumps({"vector": [0.1] * workspace["bundle"].proj_dim}))
        out = tmp_path / "emb_out"
        code = main([
            "explain", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--label", "a bird on a rock", "--embedding", str(emb_path),
            "--out", str(out), str(workspace["images"][0]),
        ])
        assert code == 0
        report = json.loads((out / "img0.report.json").read_text())
        assert report["label"] == "a bird on a rock"

    def test_missing_model_exit_2(self, workspace, tmp_path):
        code = main([
            "explain", "--model", str(tmp_path / "nope.nt"), "--text-bank", workspace["bank_path"],
            "--label", "hen", "--out", str(tmp_path / "x"), str(workspace["images"][0]),
        ])
        assert code == 2

    def test_rerun_byte_identical(self, workspace, tmp_path):
        args = lambda out: [
            "explain", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--label", "hen", "--out", str(out), "--seed", "5", str(workspace["images"][0]),
        ]
        assert main(args(tmp_path / "r1")) == 0
        assert main(args(tmp_path / "r2")) == 0
        for name in out_files(tmp_path / "r1"):
            assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


class TestEval:
    def run_eval(self, workspace, out, extra=()):
        return main([
            "eval", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--manifest", workspace["manifest"], "--out", str(out),
            "--steps", "10", "--step-frac", "0.01", "--seed", "1", *extra,
        ])

    def test_both_modes_four_curves(self, workspace, tmp_path):
        out = tmp_path / "eval_out"
        assert self.run_eval(workspace, out) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["auc"]) == {"deletion", "insertion"}
        for mode in ("deletion", "insertion"):
            assert set(summary["auc"][mode]) == {"top1", "top5"}
            rows = list(csv.DictReader(open(out / f"curve_{mode}.csv")))
            assert len(rows) == 11
            assert set(rows[0]) == {"step", "frac_modified", "acc_top1", "acc_top5"}

    def test_single_mode_one_curve_file(self, workspace, tmp_path):
        out = tmp_path / "eval_del"
        assert self.run_eval(workspace, out, ("--mode", "deletion")) == 0
        assert (out / "curve_deletion.csv").exists()
        assert not (out / "curve_insertion.csv").exists()

    def test_missing_image_reported_in_summary(self, workspace, tmp_path):
        manifest = workspace["dir"] / "broken.csv"
        rows = open(workspace["manifest"]).read().splitlines()
        rows.append(str(workspace["dir"] / "ghost.png") + ",hen")
        manifest.write_text("\n".join(rows) + "\n")
        out = tmp_path / "eval_skip"
        code = main([
            "eval", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--manifest", str(manifest), "--out", str(out), "--steps", "5", "--seed", "0",
        ])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["images_skipped"] == 1
        assert summary["images_scored"] == 3

    def test_empty_manifest_exit_2(self, workspace, tmp_path):
        manifest = workspace["dir"] / "empty.csv"
        manifest.write_text("path,label\n")
        code = main([
            "eval", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--manifest", str(manifest), "--out", str(tmp_path / "x"),
        ])
        assert code == 2

    def test_unknown_manifest_label_exit_2(self, workspace, tmp_path):
        manifest = workspace["dir"] / "bad_label.csv"
        manifest.write_text(f"path,label\n{workspace['images'][0]},martian\n")
        code = main([
            "eval", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--manifest", str(manifest), "--out", str(tmp_path / "x"),
        ])
        assert code == 2

    def test_summary_aucs_match_library_recomputation(self, workspace, tmp_path):
        from PIL import Image

        from cci.faithfulness import StepSchedule, dataset_curves
        from cci.importance import compute_cci

        out = tmp_path / "eval_exact"
        assert self.run_eval(workspace, out) == 0
        summary = json.loads((out / "summary.json").read_text())

        bundle = load_model(workspace["model"])
        encoder = VitEncoder(bundle)
        bank = workspace["bank"]
        entries = []
        for path, label in zip(workspace["images"], workspace["labels"]):
            raster = np.asarray(Image.open(path).convert("RGB"))
            entries.append((preprocess(raster, bundle.config), label))
        provider = lambda image, label: compute_cci(
            encoder, image, bank.vector_for(label), 7, 1
        ).pixel_map
        schedule = StepSchedule(steps=10, fraction_per_step=0.01, noise_seed=1)
        result = dataset_curves(
            entries, provider, encoder, bank, schedule, ("deletion", "insertion"),
            mean=bundle.config.preprocess_mean, std=bundle.config.preprocess_std,
        )
        for mode in ("deletion", "insertion"):
            for metric in ("top1", "top5"):
                assert summary["auc"][mode][metric] == result.curves[mode][metric].auc

    def test_worker_counts_byte_identical(self, workspace, tmp_path):
        out1, out2, out4 = (tmp_path / f"w{i}" for i in (1, 2, 4))
        assert self.run_eval(workspace, out1, ("--workers", "1")) == 0
        assert self.run_eval(workspace, out2, ("--workers", "2")) == 0
        assert self.run_eval(workspace, out4, ("--workers", "4")) == 0
        for name in out_files(out1):
            reference = (out1 / name).read_bytes()
            assert (out2 / name).read_bytes() == reference, name
            assert (out4 / name).read_bytes() == reference, name


class TestDiagnose:
    def prepare_masks(self, workspace):
        from PIL import Image

        masks_dir = workspace["dir"] / "masks"
        masks_dir.mkdir(exist_ok=True)
        size = workspace["config"].image_size
        for i, path in enumerate(workspace["images"]):
            mask = np.zeros((size, size), dtype=np.uint8)
            mask[: size // 2] = 255
            Image.fromarray(mask, mode="L").save(masks_dir / f"{path.stem}.png")
        return masks_dir

    def full_fixture(self, workspace):
        labels = workspace["labels"]
        pairs = [
            {"gt": a, "pred": b, "verdict": "similar" if (a, b) == ("hen", "zebra") else "different"}
            for a in labels for b in labels if a != b
        ]
        fixture = workspace["dir"] / "pairs.json"
        fixture.write_text(json.dumps({"pairs": pairs}))
        return str(fixture)

    def test_offline_run_matches_hand_counts(self, workspace, tmp_path):
        masks_dir = self.prepare_masks(workspace)
        out = tmp_path / "diag_out"
        code = main([
            "diagnose", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--manifest", workspace["manifest"], "--masks", str(masks_dir),
            "--judge", "offline", "--judge-fixture", self.full_fixture(workspace),
            "--out", str(out), "--seed", "2",
        ])
        assert code == 0
        records = [json.loads(line) for line in (out / "records.jsonl").read_text().splitlines()]
        assert len(records) == 3
        taxonomy = json.loads((out / "taxonomy.json").read_text())
        counts = {}
        for record in records:
            counts[record["category"]] = counts.get(record["category"], 0) + 1
        for category, count in counts.items():
            assert taxonomy["counts"][category] == count
            assert taxonomy["fractions_all"][category] == pytest.approx(count / 3)

    def test_all_correct_zero_error_fractions(self, workspace, tmp_path):
        # relabel the manifest with the model's own predictions
        bundle = load_model(workspace["model"])
        encoder = VitEncoder(bundle)
        bank = workspace["bank"]
        manifest = workspace["dir"] / "selffulfilling.csv"
        with open(manifest, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "label"])
            for path in workspace["images"]:
                from PIL import Image

                raster = np.asarray(Image.open(path).convert("RGB"))
                pred = zero_shot(encoder, preprocess(raster, bundle.config), bank, bank.labels[0]).ranked_labels[0]
                writer.writerow([str(path), pred])
        masks_dir = self.prepare_masks(workspace)
        out = tmp_path / "diag_correct"
        code = main([
            "diagnose", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--manifest", str(manifest), "--masks", str(masks_dir),
            "--judge", "offline", "--out", str(out), "--seed", "2",
        ])
        assert code == 0
        taxonomy = json.loads((out / "taxonomy.json").read_text())
        assert taxonomy["fractions_all"]["Correct"] == 1.0
        assert taxonomy["errors"] == 0

    def test_missing_mask_skipped_run_continues(self, workspace, tmp_path):
        masks_dir = self.prepare_masks(workspace)
        (masks_dir / f"{workspace['images'][1].stem}.png").unlink()
        out = tmp_path / "diag_missing"
        code = main([
            "diagnose", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--manifest", workspace["manifest"], "--masks", str(masks_dir),
            "--judge", "offline", "--judge-fixture", self.full_fixture(workspace),
            "--out", str(out), "--seed", "2",
        ])
        assert code == 0
        taxonomy = json.loads((out / "taxonomy.json").read_text())
        assert taxonomy["skipped"] == 1

    def test_http_mode_without_credential_exit_2(self, workspace, tmp_path, monkeypatch):
        monkeypatch.delenv("CCI_JUDGE_API_KEY", raising=False)
        masks_dir = self.prepare_masks(workspace)
        code = main([
            "diagnose", "--model", workspace["model"], "--text-bank", workspace["bank_path"],
            "--manifest", workspace["manifest"], "--masks", str(masks_dir),
            "--judge", "http", "--judge-endpoint", "http://judge.invalid/v1",
            "--out", str(tmp_path / "x"),
        ])
        assert code == 2


class TestTransformCommand:
    def test_variants_written(self, workspace, tmp_path):
        out = tmp_path / "variants"
        code = main([
            "transform", "--manifest", workspace["manifest"],
            "--kinds", "hflip,rotate", "--seed", "4", "--out", str(out),
        ])
        assert code == 0
        rows = list(csv.DictReader(open(out / "variants.csv")))
        assert len(rows) == 6
        for row in rows:
            assert row["out_path"]

    def test_default_kind_pack(self, workspace, tmp_path):
        out = tmp_path / "pack"
        code = main(["transform", "--manifest", workspace["manifest"], "--seed", "0", "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader(open(out / "variants.csv")))
        assert len(rows) == 33

    def test_unknown_kind_exit_2(self, workspace, tmp_path):
        code = main([
            "transform", "--manifest", workspace["manifest"],
            "--kinds", "hflip,teleport", "--out", str(tmp_path / "x"),
        ])
        assert code == 2


class TestConfigPrecedence:
    def test_config_supplies_values_flags_override(self, workspace, tmp_path):
        config_path = workspace["dir"] / "run.json"
        config_path.write_text(json.dumps({
            "model": workspace["model"],
            "text_bank": workspace["bank_path"],
            "k": 3,
            "seed": 9,
        }))
        out = tmp_path / "from_config"
        code = main([
            "explain", "--config", str(config_path), "--label", "hen",
            "--out", str(out), str(workspace["images"][0]),
        ])
        assert code == 0
        report = json.loads((out / "img0.report.json").read_text())
        assert report["K"] == 3 and report["seed"] == 9

        out2 = tmp_path / "flag_wins"
        code = main([
            "explain", "--config", str(config_path), "--label", "hen", "--k", "2",
            "--out", str(out2), str(workspace["images"][0]),
        ])
        assert code == 0
        report = json.loads((out2 / "img0.report.json").read_text())
        assert report["K"] == 2 and report["seed"] == 9

    def test_missing_config_file_exit_2(self, workspace, tmp_path):
        code = main([
            "explain", "--config", str(tmp_path / "ghost.json"), "--label", "hen",
            "--out", str(tmp_path / "x"), str(workspace["images"][0]),
        ])
        assert code == 2
