"""Frozen stand-in for a wav2vec2.0-style convolutional feature encoder.

Seven strided 1-D convs (kernels 10,3,3,3,3,2,2; strides 5,2,2,2,2,2,2;
total downsampling 320), each followed by tanh-approximated GELU. Every
layer is left-padded by ``kernel - stride`` samples, so an ``L``-sample
wave gives ``L // 320`` frames. Parameters never receive gradients, but
the encoder is differentiable with respect to its input wave.

The default weights ship as ``data/ssl_encoder_d64.svws``, drawn once from
seed 20240 with :func:`build_ssl_encoder`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, TooShortError
from .weights import checksum, load_weights, save_weights

KERNELS = (10, 3, 3, 3, 3, 2, 2)
STRIDES = (5, 2, 2, 2, 2, 2, 2)
DOWNSAMPLE = math.prod(STRIDES)
FIXTURE_SEED = 20240
FIXTURE_NAME = "ssl_encoder_d64.svws"

#: wav2vec2.0 (HF transformers naming) feature-extractor tensors -> ours.
#: HF conv weights are (out, in, k) like ours; conv_bias=True variants map bias too.
EXTERNAL_NAME_MAP = {
    f"feature_extractor.conv_layers.{i}.conv.{kind}": f"conv.{i}.{kind}"
    for i in range(len(KERNELS))
    for kind in ("weight", "bias")
}


@dataclass
class SslRepresentation:
    """``frames`` is ``(F, D)`` (or ``(B, F, D)`` when batched)."""

    frames: np.ndarray
    downsample_factor: int = DOWNSAMPLE


class SslEncoder:
    def __init__(self, params: dict[str, ad.Tensor], width: int):
        self.params = params
        self.width = width
        for p in params.values():
            p.requires_grad = False

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def checksum(self) -> str:
        return checksum(self.state_dict())

    def astype(self, dtype) -> "SslEncoder":
        return SslEncoder({k: ad.Tensor(v.data.astype(dtype)) for k, v in self.params.items()}, self.width)

    def __call__(self, wave) -> ad.Tensor:
        """``(B, L)`` wave tensor to ``(B, F, D)`` representation tensor."""
        if not isinstance(wave, ad.Tensor):
            wave = ad.Tensor(np.asarray(wave, dtype=self.dtype))
        if wave.ndim == 1:
            wave = ad.reshape(wave, (1, wave.shape[0]))
        if wave.ndim != 2:
            raise ShapeError(f"encoder expects (B, L) input, got {wave.shape}")
        if wave.shape[1] < DOWNSAMPLE:
            raise TooShortError(f"need at least {DOWNSAMPLE} samples, got {wave.shape[1]}")
        x = ad.reshape(wave, (wave.shape[0], 1, wave.shape[1]))
        for i, (k, s) in enumerate(zip(KERNELS, STRIDES)):
            x = ad.conv1d(x, self.params[f"conv.{i}.weight"], self.params[f"conv.{i}.bias"], stride=s, padding=(k - s, 0))
            x = ad.gelu(x)
        return ad.transpose(x, (0, 2, 1))

    def encode(self, wave) -> SslRepresentation:
        samples = getattr(wave, "samples", wave)
        with ad.no_grad():
            out = self(np.asarray(samples, dtype=self.dtype))
        return SslRepresentation(out.data[0] if np.ndim(samples) == 1 else out.data)


def build_ssl_encoder(seed: int = FIXTURE_SEED, width: int = 64, dtype=np.float32) -> SslEncoder:
    rng = np.random.default_rng(seed)
    params = {}
    cin = 1
    for i, k in enumerate(KERNELS):
        fan_in = cin * k
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(width, cin, k))
        b = rng.normal(0.0, 0.02, size=(width,))
        params[f"conv.{i}.weight"] = ad.Tensor(w.astype(np.float32).astype(dtype))
        params[f"conv.{i}.bias"] = ad.Tensor(b.astype(np.float32).astype(dtype))
        cin = width
    return SslEncoder(params, width)


def save_ssl_encoder(enc: SslEncoder, path) -> None:
    save_weights(path, enc.state_dict(), {"kind": "ssl_encoder", "width": enc.width, "kernels": KERNELS, "strides": STRIDES})


def load_ssl_encoder(path=None, dtype=np.float32) -> SslEncoder:
    """Load encoder weights; the bundled fixture when ``path`` is None."""
    if path is None:
        with resources.as_file(resources.files("streamvoc") / "data" / FIXTURE_NAME) as p:
            tensors, meta = load_weights(p)
    else:
        tensors, meta = load_weights(path)
    return SslEncoder({k: ad.Tensor(v.astype(dtype)) for k, v in tensors.items()}, int(meta["width"]))


def encode(wave, encoder: SslEncoder | None = None) -> SslRepresentation:
    return (encoder or load_ssl_encoder()).encode(wave)
