"""Weight container, encoder configuration, text-embedding bank and image preprocessing.

Weights travel in a flat named-tensor container: an 8-byte little-endian
header length, a UTF-8 JSON header mapping tensor name to
``{"dtype": ..., "shape": [...], "data_offsets": [begin, end]}`` (offsets are
relative to the end of the header), then the raw row-major tensor data. A
sidecar JSON at ``<weights-path>.json`` carries the architecture fields; any
contradiction between the sidecar and tensor shapes is an error, never a
silent override.

The canonical tensor names for an encoder of depth L (README carries the
same table):

    patch_embed.weight        (d, 3, p, p)
    cls_token                 (d,)
    pos_embed                 (N+1, d)
    ln_pre.weight / .bias     (d,)
    blocks.{i}.ln1.weight / .bias        (d,)         i in 0..L-1
    blocks.{i}.attn.qkv.weight           (3d, d)
    blocks.{i}.attn.qkv.bias             (3d,)
    blocks.{i}.attn.out.weight           (d, d)
    blocks.{i}.attn.out.bias             (d,)
    blocks.{i}.ln2.weight / .bias        (d,)
    blocks.{i}.mlp.fc1.weight            (h, d)
    blocks.{i}.mlp.fc1.bias              (h,)
    blocks.{i}.mlp.fc2.weight            (d, h)
    blocks.{i}.mlp.fc2.bias              (d,)
    ln_post.weight / .bias    (d,)
    proj                      (d, e)

Linear weights use the (out_features, in_features) convention, applied as
``y = x @ W.T + b``. All model tensors are float32.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .interpolate import resize_bicubic

_DTYPES = {"F32": np.float32, "F64": np.float64, "I32": np.int32, "I64": np.int64}
_DTYPE_NAMES = {np.dtype(v): k for k, v in _DTYPES.items()}


class ModelFormatError(ValueError):
    """Raised for malformed containers, missing tensors or shape mismatches."""


@dataclass(frozen=True)
class ViTConfig:
    """Architecture and preprocessing constants of one image encoder."""

    image_size: int
    patch_size: int
    depth: int
    heads: int
    embed_dim: int
    preprocess_mean: tuple[float, float, float]
    preprocess_std: tuple[float, float, float]
    activation: str = "gelu"  # "gelu" (erf form) or "quick_gelu" (x * sigmoid(1.702 x))

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ModelFormatError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.depth < 1:
            raise ModelFormatError("depth must be >= 1")
        if self.embed_dim % self.heads != 0:
            raise ModelFormatError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.activation not in ("gelu", "quick_gelu"):
            raise ModelFormatError(f"unknown activation {self.activation!r}")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def patch_count(self) -> int:
        return self.grid_size**2

    def to_json(self) -> dict:
        return {
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "depth": self.depth,
            "heads": self.heads,
            "embed_dim": self.embed_dim,
            "mean": list(self.preprocess_mean),
            "std": list(self.preprocess_std),
            "activation": self.activation,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ViTConfig":
        try:
            return cls(
                image_size=int(data["image_size"]),
                patch_size=int(data["patch_size"]),
                depth=int(data["depth"]),
                heads=int(data["heads"]),
                embed_dim=int(data["embed_dim"]),
                preprocess_mean=tuple(float(v) for v in data["mean"]),
                preprocess_std=tuple(float(v) for v in data["std"]),
                activation=str(data.get("activation", "gelu")),
            )
        except KeyError as exc:
            raise ModelFormatError(f"sidecar config missing field {exc}") from exc


@dataclass(frozen=True)
class ModelBundle:
    """Immutable, shape-checked weights plus configuration.

    Safe to share across concurrent workers; all tensors are read-only views.
    """

    config: ViTConfig
    tensors: dict[str, np.ndarray]
    provenance: str  # sha256 of the container bytes

    @property
    def proj_dim(self) -> int:
        return self.tensors["proj"].shape[1]


def expected_tensor_shapes(config: ViTConfig, hidden_dim: int, proj_dim: int) -> dict[str, tuple[int, ...]]:
    """The full canonical name -> shape table for a configuration."""
    d = config.embed_dim
    n = config.patch_count
    p = config.patch_size
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (d, 3, p, p),
        "cls_token": (d,),
        "pos_embed": (n + 1, d),
        "ln_pre.weight": (d,),
        "ln_pre.bias": (d,),
        "ln_post.weight": (d,),
        "ln_post.bias": (d,),
        "proj": (d, proj_dim),
    }
    for i in range(config.depth):
        prefix = f"blocks.{i}."
        shapes[prefix + "ln1.weight"] = (d,)
        shapes[prefix + "ln1.bias"] = (d,)
        shapes[prefix + "attn.qkv.weight"] = (3 * d, d)
        shapes[prefix + "attn.qkv.bias"] = (3 * d,)
        shapes[prefix + "attn.out.weight"] = (d, d)
        shapes[prefix + "attn.out.bias"] = (d,)
        shapes[prefix + "ln2.weight"] = (d,)
        shapes[prefix + "ln2.bias"] = (d,)
        shapes[prefix + "mlp.fc1.weight"] = (hidden_dim, d)
        shapes[prefix + "mlp.fc1.bias"] = (hidden_dim,)
        shapes[prefix + "mlp.fc2.weight"] = (d, hidden_dim)
        shapes[prefix + "mlp.fc2.bias"] = (d,)
    return shapes


# -- container -----------------------------------------------------------


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write a named-tensor container. Names are stored sorted, data packed contiguously."""
    header: dict[str, dict] = {}
    blobs: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        dtype_name = _DTYPE_NAMES.get(arr.dtype)
        if dtype_name is None:
            raise ModelFormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = arr.tobytes()
        header[name] = {
            "dtype": dtype_name,
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        blobs.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)


def read_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], str]:
    """Read a named-tensor container. Returns (tensors, sha256 of file bytes)."""
    data = Path(path).read_bytes()
    digest = hashlib.sha256(data).hexdigest()
    if len(data) < 8:
        raise ModelFormatError(f"{path}: truncated container (no header length)")
    (header_len,) = struct.unpack("<Q", data[:8])
    if 8 + header_len > len(data):
        raise ModelFormatError(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: malformed JSON header: {exc}") from exc
    body = data[8 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    for name, entry in header.items():
        dtype_name = entry.get("dtype")
        if dtype_name not in _DTYPES:
            raise ModelFormatError(f"tensor {name!r}: unsupported dtype {dtype_name!r}")
        shape = tuple(int(s) for s in entry["shape"])
        begin, end = (int(v) for v in entry["data_offsets"])
        itemsize = np.dtype(_DTYPES[dtype_name]).itemsize
        expected = itemsize * int(np.prod(shape, dtype=np.int64)) if shape else itemsize
        if begin < 0 or end > len(body) or end - begin != expected:
            raise ModelFormatError(
                f"tensor {name!r}: data_offsets [{begin}, {end}] inconsistent with shape {shape}"
            )
        arr = np.frombuffer(body[begin:end], dtype=_DTYPES[dtype_name]).reshape(shape)
        arr.flags.writeable = False
        tensors[name] = arr
    return tensors, digest


# -- model bundle --------------------------------------------------------


def load_model(path: str | Path) -> ModelBundle:
    """Load and validate an encoder bundle from a container + sidecar config.

    Raises ModelFormatError naming the offending tensor on any missing
    tensor, shape mismatch, unsupported dtype, or config contradiction.
    """
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if not path.exists():
        raise FileNotFoundError(path)
    if not sidecar.exists():
        raise ModelFormatError(f"missing sidecar config {sidecar}")
    config = ViTConfig.from_json(json.loads(sidecar.read_text()))
    tensors, digest = read_tensors(path)

    for name in ("patch_embed.weight", "pos_embed", "blocks.0.mlp.fc1.weight", "proj"):
        if name not in tensors:
            raise ModelFormatError(f"missing tensor {name!r}")
    pe = tensors["patch_embed.weight"]
    if pe.ndim != 4 or pe.shape[1] != 3 or pe.shape[2] != pe.shape[3]:
        raise ModelFormatError(
            f"tensor 'patch_embed.weight': expected shape (d, 3, p, p), found {pe.shape}"
        )
    if pe.shape[0] != config.embed_dim:
        raise ModelFormatError(
            f"config embed_dim {config.embed_dim} contradicts patch_embed.weight dim {pe.shape[0]}"
        )
    if pe.shape[2] != config.patch_size:
        raise ModelFormatError(
            f"config patch_size {config.patch_size} contradicts patch_embed.weight kernel {pe.shape[2]}"
        )
    if tensors["pos_embed"].shape[0] != config.patch_count + 1:
        raise ModelFormatError(
            f"config implies {config.patch_count} patches but pos_embed has "
            f"{tensors['pos_embed'].shape[0]} rows"
        )
    hidden_dim = tensors["blocks.0.mlp.fc1.weight"].shape[0]
    proj_dim = tensors["proj"].shape[1] if tensors["proj"].ndim == 2 else -1

    expected = expected_tensor_shapes(config, hidden_dim, proj_dim)
    for name, shape in expected.items():
        if name not in tensors:
            raise ModelFormatError(f"missing tensor {name!r}")
        if tensors[name].dtype != np.float32:
            raise ModelFormatError(
                f"tensor {name!r}: unsupported dtype {tensors[name].dtype} (model tensors must be F32)"
            )
        if tensors[name].shape != shape:
            raise ModelFormatError(
                f"tensor {name!r}: expected shape {shape}, found {tensors[name].shape}"
            )
    unknown = sorted(set(tensors) - set(expected))
    if unknown:
        raise ModelFormatError(f"unexpected tensors in container: {unknown}")
    return ModelBundle(config=config, tensors=tensors, provenance=digest)


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    """Write a bundle as container + sidecar config. Inverse of load_model."""
    path = Path(path)
    write_tensors(path, bundle.tensors)
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(bundle.config.to_json(), indent=2) + "\n")


def new_random_bundle(config: ViTConfig, seed: int = 0, *, hidden_mult: int = 4, proj_dim: int | None = None) -> ModelBundle:
    """Random-weight bundle for a configuration.

    Useful for synthetic pipelines and tests: layer norms are initialized to
    identity (weight 1, bias 0) and the remaining tensors to small centered
    gaussians so forwards stay well conditioned.
    """
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    hidden = hidden_mult * d
    proj = proj_dim if proj_dim is not None else d
    shapes = expected_tensor_shapes(config, hidden, proj)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name.endswith(("ln1.weight", "ln2.weight")) or name in ("ln_pre.weight", "ln_post.weight"):
            arr = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bias"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            arr = rng.normal(0.0, 0.05, size=shape).astype(np.float32)
        arr.flags.writeable = False
        tensors[name] = arr
    return ModelBundle(config=config, tensors=tensors, provenance="synthetic")


# -- text-embedding bank -------------------------------------------------


@dataclass
class TextEmbeddingBank:
    """Ordered labeled embedding vectors, one per class or caption."""

    labels: list[str]
    vectors: np.ndarray  # (n, d) float32
    normalized: bool = False
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {label: i for i, label in enumerate(self.labels)}
        if self.normalized:
            norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-5):
                raise ValueError("normalized bank contains non-unit vectors")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def entries(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self.labels, self.vectors))

    def index_of(self, label: str) -> int:
        if label not in self._index:
            raise KeyError(f"label {label!r} not in bank")
        return self._index[label]

    def vector_for(self, label: str) -> np.ndarray:
        return self.vectors[self.index_of(label)]


def load_text_bank(path: str | Path, *, normalize: bool = False, expected_dim: int | None = None) -> TextEmbeddingBank:
    """Load a text-embedding bank.

    JSON format: ``{"dim": d, "entries": [{"label": str, "vector": [...]}, ...]}``.
    A non-JSON path is read as a named-tensor container with one vector per
    label. Order is preserved; duplicate labels and dimension mismatches are
    errors.
    """
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        dim = int(data["dim"])
        labels = [str(e["label"]) for e in data["entries"]]
        rows = []
        for entry in data["entries"]:
            vec = np.asarray(entry["vector"], dtype=np.float32)
            if vec.shape != (dim,):
                raise ValueError(
                    f"label {entry['label']!r}: vector has dimension {vec.shape}, expected ({dim},)"
                )
            rows.append(vec)
        vectors = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    else:
        tensors, _ = read_tensors(path)
        labels = sorted(tensors)
        dims = {tensors[l].shape for l in labels}
        if len(dims) > 1:
            raise ValueError(f"bank vectors have inconsistent dimensions: {sorted(dims)}")
        vectors = np.stack([tensors[l].astype(np.float32) for l in labels])
    if len(set(labels)) != len(labels):
        dupes = sorted({l for l in labels if labels.count(l) > 1})
        raise ValueError(f"duplicate labels in bank: {dupes}")
    if expected_dim is not None and vectors.shape[1] != expected_dim:
        raise ValueError(f"bank dimension {vectors.shape[1]} does not match expected {expected_dim}")
    if normalize:
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("cannot normalize zero-norm vector in bank")
        vectors = (vectors / norms).astype(np.float32)
    return TextEmbeddingBank(labels=labels, vectors=vectors, normalized=normalize)


def save_text_bank(bank: TextEmbeddingBank, path: str | Path) -> None:
    payload = {
        "dim": bank.dim,
        "entries": [
            {"label": label, "vector": [float(v) for v in vec]} for label, vec in bank.entries
        ],
    }
    Path(path).write_text(json.dumps(payload) + "\n")


# -- preprocessing -------------------------------------------------------


def preprocess(image, config: ViTConfig) -> np.ndarray:
    """Decoded RGB raster -> standardized (3, S, S) float32 model input.

    Bicubic resize (anti-aliasing off, half-pixel mapping), scale to [0, 1],
    then per-channel standardization with the config mean/std. Pure function:
    identical bytes in give identical tensors out.
    """
    arr = _as_rgb_array(image)
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("zero-area image")
    x = arr.astype(np.float64) / 255.0
    s = config.image_size
    if arr.shape[0] != s or arr.shape[1] != s:
        x = resize_bicubic(x, s, s)
    mean = np.asarray(config.preprocess_mean, dtype=np.float64)
    std = np.asarray(config.preprocess_std, dtype=np.float64)
    x = (x - mean) / std
    return np.ascontiguousarray(x.transpose(2, 0, 1)).astype(np.float32)


def _as_rgb_array(image) -> np.ndarray:
    try:
        from PIL import Image

        if isinstance(image, Image.Image):
            if image.mode != "RGB":
                raise ValueError(f"non-RGB input (mode {image.mode!r})")
            return np.asarray(image)
    except ImportError:  # pragma: no cover - Pillow is a hard dependency
        pass
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"non-RGB input (shape {arr.shape})")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 raster, got {arr.dtype}")
    return arr
