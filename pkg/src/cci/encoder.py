"""Image-encoder forward pass with per-layer, all-head attention attenuation.

The encoder is a standard pre-norm ViT: patch projection, class token,
position embeddings, an embedding layer norm, L transformer blocks, a final
layer norm, and a projection of the class token into the shared image-text
space. A cluster mask attenuates attention at every layer and head by forcing
the logits toward masked patch keys to the most negative finite float32
before the softmax (the row max is subtracted first, so masked keys get
exactly zero weight and nothing overflows).

Everything runs in float32 with no mixed precision, and is pure given an
immutable bundle, so concurrent evaluations are safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .model_io import ModelBundle

_MASK_LOGIT = np.float32(np.finfo(np.float32).min)
_LN_EPS = np.float32(1e-5)


@dataclass(frozen=True)
class ClusterMask:
    """Boolean flags over the N patch positions; the class token is never maskable."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        object.__setattr__(self, "bits", bits)
        if bits.ndim != 1:
            raise ValueError("mask bits must be one-dimensional")

    @property
    def all_masked(self) -> bool:
        return bool(self.bits.all())


@dataclass(frozen=True)
class TokenSequence:
    """Per-layer token states, row 0 is the class token."""

    tokens: np.ndarray  # (N+1, d)
    layer_index: int

    @property
    def cls(self) -> np.ndarray:
        return self.tokens[0]

    @property
    def patches(self) -> np.ndarray:
        return self.tokens[1:]


@dataclass(frozen=True)
class EncodedImage:
    cls: np.ndarray  # (e,) projected class embedding
    patches: np.ndarray  # (N, d) final patch tokens, post final norm, pre projection
    mask_applied: ClusterMask | None = None
    cls_only: bool = False  # True when the mask covered every patch


def _layer_norm(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float32)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True, dtype=np.float32)
    return centered / np.sqrt(var + _LN_EPS) * weight + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    return x * np.float32(0.5) * (np.float32(1.0) + erf(x * np.float32(0.7071067811865476)))


def _quick_gelu(x: np.ndarray) -> np.ndarray:
    return x / (np.float32(1.0) + np.exp(np.float32(-1.702) * x))


def masked_softmax(logits: np.ndarray, key_mask: np.ndarray | None) -> np.ndarray:
    """Row softmax over the last axis with optional key masking.

    ``key_mask`` is boolean over keys; True keys receive exactly zero weight.
    Rows must keep at least one unmasked key (guaranteed here because the
    class token is never masked).
    """
    if key_mask is not None:
        logits = np.where(key_mask, _MASK_LOGIT, logits)
    logits = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=-1, keepdims=True)


class VitEncoder:
    """Forward-pass engine bound to one immutable bundle.

    The embedding stage (patch projection + class token + positions + the
    embedding norm) is independent of any cluster mask, so callers running
    many masked variants of one image should call :meth:`embed` once and
    :meth:`forward_tokens` per mask.
    """

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle
        self.config = bundle.config
        t = bundle.tensors
        d = self.config.embed_dim
        p = self.config.patch_size
        self._patch_w = t["patch_embed.weight"].reshape(d, 3 * p * p)
        self._act = _quick_gelu if self.config.activation == "quick_gelu" else _gelu

    # -- stages --

    def embed(self, image: np.ndarray) -> np.ndarray:
        """Standardized image (3, S, S) -> layer-0 tokens (N+1, d), float32."""
        cfg = self.config
        image = np.asarray(image, dtype=np.float32)
        if image.shape != (3, cfg.image_size, cfg.image_size):
            raise ValueError(
                f"image shape {image.shape} does not match config (3, {cfg.image_size}, {cfg.image_size})"
            )
        if not np.isfinite(image).all():
            raise ValueError("image tensor contains non-finite values")
        g, p = cfg.grid_size, cfg.patch_size
        patches = (
            image.reshape(3, g, p, g, p).transpose(1, 3, 0, 2, 4).reshape(cfg.patch_count, 3 * p * p)
        )
        x = patches @ self._patch_w.T
        t = self.bundle.tensors
        tokens = np.concatenate([t["cls_token"][None, :], x], axis=0) + t["pos_embed"]
        return _layer_norm(tokens, t["ln_pre.weight"], t["ln_pre.bias"])

    def forward_tokens(
        self,
        tokens: np.ndarray,
        mask: ClusterMask | None = None,
        *,
        collect_layers: bool = False,
    ) -> EncodedImage | tuple[EncodedImage, list[np.ndarray]]:
        """Run the block stack on layer-0 tokens, optionally attenuated by a mask."""
        cfg = self.config
        t = self.bundle.tensors
        key_mask = None
        if mask is not None:
            if mask.bits.shape != (cfg.patch_count,):
                raise ValueError(
                    f"mask length {mask.bits.shape} does not match patch count {cfg.patch_count}"
                )
            key_mask = np.concatenate([[False], mask.bits])
        x = np.asarray(tokens, dtype=np.float32)
        layers: list[np.ndarray] = []
        for i in range(cfg.depth):
            prefix = f"blocks.{i}."
            h = _layer_norm(x, t[prefix + "ln1.weight"], t[prefix + "ln1.bias"])
            x = x + self._attention(h, prefix, key_mask)
            h = _layer_norm(x, t[prefix + "ln2.weight"], t[prefix + "ln2.bias"])
            h = self._act(h @ t[prefix + "mlp.fc1.weight"].T + t[prefix + "mlp.fc1.bias"])
            x = x + h @ t[prefix + "mlp.fc2.weight"].T + t[prefix + "mlp.fc2.bias"]
            if collect_layers:
                layers.append(x)
        final = _layer_norm(x, t["ln_post.weight"], t["ln_post.bias"])
        encoded = EncodedImage(
            cls=final[0] @ t["proj"],
            patches=final[1:],
            mask_applied=mask,
            cls_only=bool(mask is not None and mask.all_masked),
        )
        return (encoded, layers) if collect_layers else encoded

    def _attention(self, x: np.ndarray, prefix: str, key_mask: np.ndarray | None) -> np.ndarray:
        t = self.bundle.tensors
        cfg = self.config
        n = x.shape[0]
        heads, dh = cfg.heads, cfg.embed_dim // cfg.heads
        qkv = x @ t[prefix + "attn.qkv.weight"].T + t[prefix + "attn.qkv.bias"]
        q, k, v = (
            part.reshape(n, heads, dh).transpose(1, 0, 2) for part in np.split(qkv, 3, axis=1)
        )
        logits = (q @ k.transpose(0, 2, 1)) * np.float32(1.0 / np.sqrt(dh))
        weights = masked_softmax(logits, key_mask)
        ctx = (weights @ v).transpose(1, 0, 2).reshape(n, cfg.embed_dim)
        return ctx @ t[prefix + "attn.out.weight"].T + t[prefix + "attn.out.bias"]

    # -- full passes --

    def encode(self, image: np.ndarray, mask: ClusterMask | None = None) -> EncodedImage:
        return self.forward_tokens(self.embed(image), mask)

    def image_embedding(self, image: np.ndarray) -> np.ndarray:
        """Projected class embedding of an unmasked forward."""
        return self.encode(image).cls

    def token_states(
        self, image: np.ndarray, *, layer: int = -1, apply_final_norm: bool = True
    ) -> TokenSequence:
        """Token states of one block output, optionally passed through the final norm.

        Default is the final layer after the final norm, the space the class
        embedding is formed in. ``layer`` selects an earlier block output
        (0-based; -1 means last).
        """
        _, layers = self.forward_tokens(self.embed(image), collect_layers=True)
        layer_index = self.config.depth - 1 if layer == -1 else layer
        state = layers[layer_index]
        if apply_final_norm:
            t = self.bundle.tensors
            state = _layer_norm(state, t["ln_post.weight"], t["ln_post.bias"])
        return TokenSequence(tokens=state, layer_index=layer_index)

    def patch_features(
        self, image: np.ndarray, *, layer: int = -1, apply_final_norm: bool = True
    ) -> np.ndarray:
        """(N, d) patch rows of :meth:`token_states`, the clustering features."""
        return self.token_states(image, layer=layer, apply_final_norm=apply_final_norm).patches


# Functional wrappers; constructing VitEncoder is cheap (no tensor copies).


def encode(bundle: ModelBundle, image: np.ndarray, mask: ClusterMask | None = None) -> EncodedImage:
    return VitEncoder(bundle).encode(image, mask)


def patch_tokens(bundle: ModelBundle, image: np.ndarray, *, layer: int = -1, apply_final_norm: bool = True) -> TokenSequence:
    """Final token states whose patch rows serve as clustering features."""
    return VitEncoder(bundle).token_states(image, layer=layer, apply_final_norm=apply_final_norm)
