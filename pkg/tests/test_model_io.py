from __future__ import annotations

import json

import numpy as np
import pytest

from cci.model_io import (
    ModelFormatError,
    TextEmbeddingBank,
    ViTConfig,
    load_model,
    load_text_bank,
    new_random_bundle,
    preprocess,
    read_tensors,
    save_model,
    save_text_bank,
    write_tensors,
)
from conftest import FIXTURES, tiny_config
from make_fixtures import gradient_raster


class TestConfig:
    def test_patch_count_derivation(self):
        config = tiny_config(image_size=224, patch_size=16, embed_dim=16)
        assert config.patch_count == 196
        assert config.grid_size == 14

    def test_indivisible_image_size_rejected(self):
        with pytest.raises(ModelFormatError):
            tiny_config(image_size=30, patch_size=8)

    def test_heads_must_divide_dim(self):
        with pytest.raises(ModelFormatError):
            tiny_config(embed_dim=10, heads=3)

    def test_depth_must_be_positive(self):
        with pytest.raises(ModelFormatError):
            tiny_config(depth=0)


class TestContainer:
    def test_round_trip_bit_exact(self, bundle, tmp_path):
        path = tmp_path / "tiny.nt"
        save_model(bundle, path)
        loaded = load_model(path)
        assert loaded.config == bundle.config
        assert set(loaded.tensors) == set(bundle.tensors)
        for name, arr in bundle.tensors.items():
            assert loaded.tensors[name].dtype == arr.dtype
            assert loaded.tensors[name].tobytes() == arr.tobytes(), name

    def test_save_load_save_identical_files(self, bundle, tmp_path):
        a, b = tmp_path / "a.nt", tmp_path / "b.nt"
        save_model(bundle, a)
        save_model(load_model(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_missing_tensor_named_in_error(self, bundle, tmp_path):
        tensors = dict(bundle.tensors)
        del tensors["ln_post.weight"]
        path = tmp_path / "broken.nt"
        write_tensors(path, tensors)
        save_model(bundle, tmp_path / "ok.nt")  # produces the sidecar
        (tmp_path / "broken.nt.json").write_text((tmp_path / "ok.nt.json").read_text())
        with pytest.raises(ModelFormatError, match="ln_post.weight"):
            load_model(path)

    def test_shape_mismatch_names_expected_and_found(self, bundle, tmp_path):
        tensors = dict(bundle.tensors)
        tensors["cls_token"] = np.zeros(4, dtype=np.float32)
        path = tmp_path / "bad.nt"
        write_tensors(path, tensors)
        save_model(bundle, tmp_path / "ok.nt")
        (tmp_path / "bad.nt.json").write_text((tmp_path / "ok.nt.json").read_text())
        with pytest.raises(ModelFormatError, match=r"cls_token.*expected.*16.*found.*4"):
            load_model(path)

    def test_unsupported_dtype_rejected(self, bundle, tmp_path):
        tensors = dict(bundle.tensors)
        tensors["cls_token"] = tensors["cls_token"].astype(np.float64)
        path = tmp_path / "f64.nt"
        write_tensors(path, tensors)
        save_model(bundle, tmp_path / "ok.nt")
        (tmp_path / "f64.nt.json").write_text((tmp_path / "ok.nt.json").read_text())
        with pytest.raises(ModelFormatError, match="cls_token"):
            load_model(path)

    def test_unknown_dtype_string_rejected(self, tmp_path):
        path = tmp_path / "weird.nt"
        write_tensors(path, {"x": np.zeros(3, dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        idx = raw.find(b"F32")
        raw[idx : idx + 3] = b"F16"
        path.write_bytes(bytes(raw))
        with pytest.raises(ModelFormatError, match="F16"):
            read_tensors(path)

    def test_config_contradiction_is_an_error(self, bundle, tmp_path):
        path = tmp_path / "tiny.nt"
        save_model(bundle, path)
        sidecar = path.with_name(path.name + ".json")
        data = json.loads(sidecar.read_text())
        data["patch_size"] = 16  # contradicts the (16, 3, 8, 8) projection tensor
        data["image_size"] = 64
        sidecar.write_text(json.dumps(data))
        with pytest.raises(ModelFormatError, match="patch_size"):
            load_model(path)

    def test_extra_tensor_rejected(self, bundle, tmp_path):
        tensors = dict(bundle.tensors)
        tensors["mystery"] = np.zeros(2, dtype=np.float32)
        path = tmp_path / "extra.nt"
        write_tensors(path, tensors)
        save_model(bundle, tmp_path / "ok.nt")
        (tmp_path / "extra.nt.json").write_text((tmp_path / "ok.nt.json").read_text())
        with pytest.raises(ModelFormatError, match="mystery"):
            load_model(path)

    def test_loaded_tensors_are_immutable(self, bundle, tmp_path):
        path = tmp_path / "tiny.nt"
        save_model(bundle, path)
        loaded = load_model(path)
        with pytest.raises(ValueError):
            loaded.tensors["cls_token"][0] = 1.0


class TestTextBank:
    def write_bank(self, tmp_path, entries, dim):
        path = tmp_path / "bank.json"
        path.write_text(json.dumps({"dim": dim, "entries": entries}))
        return path

    def test_three_labels_order_preserved(self, tmp_path):
        entries = [
            {"label": f"class-{i}", "vector": list(np.eye(16)[i])} for i in (2, 0, 1)
        ]
        bank = load_text_bank(self.write_bank(tmp_path, entries, 16))
        assert bank.labels == ["class-2", "class-0", "class-1"]
        assert bank.dim == 16
        assert len(bank) == 3

    def test_wrong_dimension_rejected(self, tmp_path):
        entries = [{"label": "a", "vector": [1.0, 2.0]}]
        with pytest.raises(ValueError, match="dimension"):
            load_text_bank(self.write_bank(tmp_path, entries, 3))

    def test_duplicate_labels_rejected(self, tmp_path):
        entries = [{"label": "a", "vector": [1.0]}, {"label": "a", "vector": [2.0]}]
        with pytest.raises(ValueError, match="duplicate"):
            load_text_bank(self.write_bank(tmp_path, entries, 1))

    def test_normalize_three_four_five(self, tmp_path):
        vec = [3.0, 4.0] + [0.0] * 14
        bank = load_text_bank(
            self.write_bank(tmp_path, [{"label": "t", "vector": vec}], 16), normalize=True
        )
        expected = np.array([0.6, 0.8] + [0.0] * 14, dtype=np.float32)
        np.testing.assert_array_equal(bank.vectors[0], expected)
        assert bank.normalized

    def test_normalized_flag_enforces_unit_norm(self):
        with pytest.raises(ValueError, match="non-unit"):
            TextEmbeddingBank(labels=["a"], vectors=np.array([[3.0, 4.0]], dtype=np.float32), normalized=True)

    def test_expected_dim_check(self, tmp_path):
        entries = [{"label": "a", "vector": [1.0, 0.0]}]
        path = self.write_bank(tmp_path, entries, 2)
        with pytest.raises(ValueError, match="expected"):
            load_text_bank(path, expected_dim=5)

    def test_bank_json_round_trip(self, tmp_path):
        entries = [{"label": "x", "vector": [1.5, -2.25]}, {"label": "y", "vector": [0.0, 3.0]}]
        bank = load_text_bank(self.write_bank(tmp_path, entries, 2))
        out = tmp_path / "copy.json"
        save_text_bank(bank, out)
        again = load_text_bank(out)
        assert again.labels == bank.labels
        np.testing.assert_array_equal(again.vectors, bank.vectors)

    def test_binary_container_bank(self, tmp_path):
        path = tmp_path / "bank.nt"
        write_tensors(path, {
            "hen": np.array([1.0, 0.0], dtype=np.float32),
            "zebra": np.array([0.0, 2.0], dtype=np.float32),
        })
        bank = load_text_bank(path)
        assert bank.labels == ["hen", "zebra"]
        assert bank.dim == 2
        np.testing.assert_array_equal(bank.vector_for("zebra"), [0.0, 2.0])


class TestPreprocess:
    def test_mean_valued_image_standardizes_to_zero(self):
        config = tiny_config()
        # pick a mean exactly representable as v/255
        config = ViTConfig(
            image_size=config.image_size, patch_size=config.patch_size, depth=config.depth,
            heads=config.heads, embed_dim=config.embed_dim,
            preprocess_mean=(102 / 255, 51 / 255, 204 / 255), preprocess_std=(0.5, 0.5, 0.5),
        )
        raster = np.empty((32, 32, 3), dtype=np.uint8)
        raster[..., 0], raster[..., 1], raster[..., 2] = 102, 51, 204
        out = preprocess(raster, config)
        assert out.shape == (3, 32, 32)
        np.testing.assert_array_equal(out, np.zeros_like(out))

    def test_downsampled_constant_image_stays_constant(self, config):
        raster = np.full((64, 64, 3), 77, dtype=np.uint8)
        out = preprocess(raster, config)
        for c in range(3):
            expected = (77 / 255 - config.preprocess_mean[c]) / config.preprocess_std[c]
            np.testing.assert_allclose(out[c], expected, atol=1e-6)

    def test_gradient_golden_byte_exact(self, config):
        golden = np.load(FIXTURES / "preprocess_gradient.npy")
        out = preprocess(gradient_raster(), config)
        assert out.dtype == golden.dtype
        assert out.tobytes() == golden.tobytes()

    def test_pure_function(self, config):
        raster = gradient_raster()
        a = preprocess(raster, config)
        b = preprocess(raster.copy(), config)
        assert a.tobytes() == b.tobytes()

    def test_non_rgb_rejected(self, config):
        with pytest.raises(ValueError, match="non-RGB"):
            preprocess(np.zeros((8, 8), dtype=np.uint8), config)
        with pytest.raises(ValueError, match="non-RGB"):
            preprocess(np.zeros((8, 8, 4), dtype=np.uint8), config)

    def test_zero_area_rejected(self, config):
        with pytest.raises(ValueError, match="zero-area"):
            preprocess(np.zeros((0, 8, 3), dtype=np.uint8), config)

    def test_pil_input_matches_array_input(self, config):
        from PIL import Image

        raster = gradient_raster()
        via_pil = preprocess(Image.fromarray(raster, mode="RGB"), config)
        via_array = preprocess(raster, config)
        assert via_pil.tobytes() == via_array.tobytes()

    def test_pil_non_rgb_rejected(self, config):
        from PIL import Image

        gray = Image.fromarray(np.zeros((8, 8), dtype=np.uint8), mode="L")
        with pytest.raises(ValueError, match="non-RGB"):
            preprocess(gray, config)


class TestResizerAgainstIndependentReference:
    def test_bicubic_matches_torch(self):
        torch = pytest.importorskip("torch")
        import torch.nn.functional as F

        from cci.interpolate import resize_bicubic

        rng = np.random.default_rng(3)
        for h, w, oh, ow in [(64, 64, 32, 32), (50, 70, 224, 224), (9, 7, 5, 13)]:
            img = rng.random((h, w, 3))
            mine = resize_bicubic(img, oh, ow)
            ref = F.interpolate(
                torch.from_numpy(img.transpose(2, 0, 1)[None]),
                size=(oh, ow), mode="bicubic", align_corners=False, antialias=False,
            )[0].numpy().transpose(1, 2, 0)
            np.testing.assert_allclose(mine, ref, atol=1e-12)
