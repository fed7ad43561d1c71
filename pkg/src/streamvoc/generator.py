"""BigVGAN-style Mel-to-waveform generator, causal or non-causal.

Layout per upsampling stage: Snake -> transposed conv (kernel 2*stride) ->
average of residual blocks, each a chain of ``y = y + conv(snake(y))`` with
the block's dilations. Input and output convs use kernel 7; the output goes
through tanh. Anti-aliased activations of the original AMP block are not
modelled.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import InvalidConfigError, ShapeError
from .frontend import FrontendConfig, MelSpectrogram, Waveform
from .weights import load_weights, save_weights

#: stride setups: small/large at frame shift 256, small/large at frame shift 128
STRIDE_SETUPS = {
    "small_original": (8, 8, 2, 2),
    "small": (8, 4, 2, 2),
    "large_original": (4, 4, 2, 2, 2, 2),
    "large": (4, 2, 2, 2, 2, 2),
}


@dataclass(frozen=True)
class GeneratorConfig:
    stride_setup: tuple[int, ...] = (8, 4, 2, 2)
    causal: bool = True
    base_channels: int = 32
    mel_bands: int = 80
    upsample_kernel_sizes: tuple[int, ...] | None = None
    resblock_kernel_sizes: tuple[int, ...] = (3, 5)
    resblock_dilations: tuple[tuple[int, ...], ...] = ((1, 3), (1, 3))
    input_kernel_size: int = 7
    output_kernel_size: int = 7
    min_channels: int = 2

    def __post_init__(self):
        object.__setattr__(self, "stride_setup", tuple(int(s) for s in self.stride_setup))
        if self.upsample_kernel_sizes is None:
            object.__setattr__(self, "upsample_kernel_sizes", tuple(2 * s for s in self.stride_setup))
        else:
            object.__setattr__(self, "upsample_kernel_sizes", tuple(int(k) for k in self.upsample_kernel_sizes))
        object.__setattr__(self, "resblock_kernel_sizes", tuple(self.resblock_kernel_sizes))
        object.__setattr__(self, "resblock_dilations", tuple(tuple(d) for d in self.resblock_dilations))
        self.validate()

    def validate(self) -> None:
        if not self.stride_setup or any(s < 1 for s in self.stride_setup):
            raise InvalidConfigError(f"strides must be >= 1, got {self.stride_setup}")
        if len(self.upsample_kernel_sizes) != len(self.stride_setup):
            raise InvalidConfigError("one upsampling kernel size per stride required")
        for k, s in zip(self.upsample_kernel_sizes, self.stride_setup):
            if k < s:
                raise InvalidConfigError(f"upsampling kernel {k} smaller than stride {s}")
        if len(self.resblock_kernel_sizes) != len(self.resblock_dilations):
            raise InvalidConfigError("one dilation list per residual-block kernel size required")
        if self.base_channels < 1 or self.mel_bands < 1:
            raise InvalidConfigError("base_channels and mel_bands must be positive")

    @property
    def hop_length(self) -> int:
        return math.prod(self.stride_setup)

    def channels(self) -> list[int]:
        """Channel count entering each stage plus the final stage's output width."""
        chans = [self.base_channels]
        for _ in self.stride_setup:
            chans.append(max(chans[-1] // 2, self.min_channels))
        return chans

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


def _normal(rng: np.random.Generator, shape, dtype, std: float = 0.01) -> ad.Tensor:
    return ad.Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


class Generator:
    """Parameter container plus functional forward."""

    def __init__(self, config: GeneratorConfig, params: dict[str, ad.Tensor]):
        self.config = config
        self.params = params

    @property
    def causal(self) -> bool:
        return self.config.causal

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def astype(self, dtype) -> "Generator":
        return Generator(self.config, {k: ad.Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.params.items()})

    def copy(self) -> "Generator":
        return self.astype(self.dtype)

    # -- layer plan -------------------------------------------------------
    def conv_specs(self) -> list[tuple[str, int, int]]:
        """(name, kernel, dilation) for every plain conv, in forward order."""
        cfg = self.config
        specs = [("input_conv", cfg.input_kernel_size, 1)]
        for i in range(len(cfg.stride_setup)):
            for r, (k, dils) in enumerate(zip(cfg.resblock_kernel_sizes, cfg.resblock_dilations)):
                specs += [(f"blocks.{i}.{r}.{j}", k, d) for j, d in enumerate(dils)]
        specs.append(("output_conv", cfg.output_kernel_size, 1))
        return specs

    def _synthesize(self, x, conv: Callable, upconv: Callable):
        P = self.params
        cfg = self.config
        x = conv("input_conv", x, 1)
        n_res = len(cfg.resblock_kernel_sizes)
        for i, s in enumerate(cfg.stride_setup):
            x = ad.snake(x, P[f"ups.{i}.alpha"])
            x = upconv(f"ups.{i}", x, s)
            acc = None
            for r, dils in enumerate(cfg.resblock_dilations):
                y = x
                for j, d in enumerate(dils):
                    name = f"blocks.{i}.{r}.{j}"
                    y = y + conv(name, ad.snake(y, P[name + ".alpha"]), d)
                acc = y if acc is None else acc + y
            x = acc if n_res == 1 else acc * (1.0 / n_res)
        x = ad.snake(x, P["output.alpha"])
        x = conv("output_conv", x, 1)
        return ad.tanh(x)

    def __call__(self, mel) -> ad.Tensor:
        """Batched forward: ``(B, M, T)`` log-Mel tensor to ``(B, T*hop)`` waveform tensor."""
        mel = mel if isinstance(mel, ad.Tensor) else ad.Tensor(np.asarray(mel, dtype=self.dtype))
        if mel.ndim != 3 or mel.shape[1] != self.config.mel_bands:
            raise ShapeError(f"expected (B, {self.config.mel_bands}, T) mel input, got {mel.shape}")
        mode = "causal" if self.causal else "same"
        P = self.params

        def conv(name, x, dilation):
            return ad.conv1d(x, P[name + ".weight"], P[name + ".bias"], dilation=dilation, padding=mode)

        def upconv(name, x, stride):
            return ad.conv_transpose1d(x, P[name + ".weight"], P[name + ".bias"], stride=stride, padding=mode)

        out = self._synthesize(mel, conv, upconv)
        return ad.reshape(out, (out.shape[0], out.shape[2]))

    def forward(self, mel: MelSpectrogram, sample_rate_hz: int = 16000) -> Waveform:
        """Offline synthesis of a whole utterance (no gradient tracking)."""
        data = mel.data if isinstance(mel, MelSpectrogram) else np.asarray(mel)
        if data.ndim != 2 or data.shape[1] != self.config.mel_bands:
            raise ShapeError(f"expected T x {self.config.mel_bands} mel, got {data.shape}")
        with ad.no_grad():
            out = self(data.T[None].astype(self.dtype))
        return Waveform(out.data[0], sample_rate_hz)

    # -- delay accounting -------------------------------------------------
    def right_context_plan(self) -> list[tuple]:
        """Per-layer right context from output back to input.

        ``("conv", r)``: output n reads input up to n + r.
        ``("up", stride, shift)``: output n reads input frames up to (n + shift) // stride.
        ``("max", [plans])``: parallel residual blocks.
        """
        cfg = self.config

        def conv_right(k, d):
            if self.causal:
                return 0
            total = (k - 1) * d
            return total - total // 2

        plan = [("conv", conv_right(cfg.output_kernel_size, 1))]
        for i in reversed(range(len(cfg.stride_setup))):
            branches = [
                sum(conv_right(k, d) for d in dils)
                for k, dils in zip(cfg.resblock_kernel_sizes, cfg.resblock_dilations)
            ]
            plan.append(("conv", max(branches)))
            s, k = cfg.stride_setup[i], cfg.upsample_kernel_sizes[i]
            plan.append(("up", s, 0 if self.causal else (k - s) // 2))
        plan.append(("conv", conv_right(cfg.input_kernel_size, 1)))
        return plan

    def last_frame_needed(self, n: int) -> int:
        """Index of the latest mel frame that can influence output sample ``n``."""
        for step in self.right_context_plan():
            if step[0] == "conv":
                n = n + step[1]
            else:
                n = (n + step[2]) // step[1]
        return n

    def lookahead_samples(self) -> int:
        """Future waveform samples (beyond the frame's own position) any output sample depends on."""
        hop = self.config.hop_length
        return max(0, max(self.last_frame_needed(n) * hop - n for n in range(hop)))

    def algorithmic_delay_ms(self, frontend: FrontendConfig) -> float:
        return (frontend.window_len + self.lookahead_samples()) / frontend.sample_rate_hz * 1000.0

    # -- persistence ------------------------------------------------------
    def save(self, path) -> None:
        save_weights(path, self.state_dict(), {"kind": "generator", "generator_config": self.config.to_dict()})

    @classmethod
    def load(cls, path, dtype=np.float32) -> "Generator":
        tensors, meta = load_weights(path)
        cfg = GeneratorConfig.from_dict(meta["generator_config"])
        return cls.from_state(cfg, tensors, dtype)

    @classmethod
    def from_state(cls, cfg: GeneratorConfig, tensors: dict, dtype=np.float32) -> "Generator":
        ref = build_generator(cfg, seed=0, dtype=dtype, hop_length=cfg.hop_length)
        missing = set(ref.params) ^ set(tensors)
        if missing:
            raise ShapeError(f"checkpoint/config parameter mismatch: {sorted(missing)[:5]}")
        for k, p in ref.params.items():
            if tuple(tensors[k].shape) != p.shape:
                raise ShapeError(f"{k}: checkpoint shape {tensors[k].shape} != {p.shape}")
            p.data = np.array(tensors[k], dtype=dtype)
        return ref


def build_generator(
    cfg: GeneratorConfig,
    seed: int = 0,
    frontend: FrontendConfig | None = None,
    dtype=None,
    hop_length: int | None = None,
    weight_std: float = 0.01,
) -> Generator:
    """Create a generator with N(0, weight_std) conv weights, zero biases and Snake alpha = 1.

    The stride product must equal the frame shift of ``frontend`` (default
    front-end: 128) or ``hop_length`` when given explicitly.
    """
    if hop_length is None:
        hop_length = (frontend or FrontendConfig()).frame_shift
    if cfg.hop_length != hop_length:
        raise InvalidConfigError(
            f"stride product {cfg.hop_length} of {cfg.stride_setup} != frame shift {hop_length}"
        )
    dtype = np.dtype(dtype or ad.get_default_dtype())
    rng = np.random.default_rng(seed)
    chans = cfg.channels()
    P: dict[str, ad.Tensor] = {}

    def conv(name, cout, cin, k):
        P[name + ".weight"] = _normal(rng, (cout, cin, k), dtype, weight_std)
        P[name + ".bias"] = ad.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def alpha(name, c):
        P[name] = ad.Tensor(np.ones(c, dtype=dtype), requires_grad=True)

    conv("input_conv", chans[0], cfg.mel_bands, cfg.input_kernel_size)
    for i, (s, k) in enumerate(zip(cfg.stride_setup, cfg.upsample_kernel_sizes)):
        cin, cout = chans[i], chans[i + 1]
        alpha(f"ups.{i}.alpha", cin)
        P[f"ups.{i}.weight"] = _normal(rng, (cin, cout, k), dtype, weight_std)
        P[f"ups.{i}.bias"] = ad.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        for r, (rk, dils) in enumerate(zip(cfg.resblock_kernel_sizes, cfg.resblock_dilations)):
            for j, _ in enumerate(dils):
                name = f"blocks.{i}.{r}.{j}"
                alpha(name + ".alpha", cout)
                conv(name, cout, cout, rk)
    alpha("output.alpha", chans[-1])
    conv("output_conv", 1, chans[-1], cfg.output_kernel_size)
    return Generator(cfg, P)


def config_json(cfg: GeneratorConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
