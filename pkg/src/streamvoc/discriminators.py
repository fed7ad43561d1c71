"""Multi-period (MPD) and multi-resolution (MRD) discriminator bank.

Every discriminator returns a score map and the post-activation output of
each conv layer; the score map itself is the last feature. The bank keeps a
fixed (discriminator, layer) order: all periods first, then all
resolutions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidConfigError, ShapeError, TooShortError
from .frontend import hann_window
from .weights import load_weights, save_weights


@dataclass(frozen=True)
class DiscriminatorBankConfig:
    periods: tuple[int, ...] = (2, 3, 5, 7, 11)
    # (dft_size, shift, window)
    stft_resolutions: tuple[tuple[int, int, int], ...] = ((512, 128, 512), (1024, 256, 1024), (256, 64, 256))
    mpd_channels: tuple[int, ...] = (16, 32, 64, 64)
    mpd_strides: tuple[int, ...] = (3, 3, 3, 1)
    mpd_kernel: int = 5
    mrd_channels: int = 16
    mrd_layers: int = 4
    leaky_slope: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        object.__setattr__(self, "stft_resolutions", tuple(tuple(int(v) for v in r) for r in self.stft_resolutions))
        object.__setattr__(self, "mpd_channels", tuple(self.mpd_channels))
        object.__setattr__(self, "mpd_strides", tuple(self.mpd_strides))
        if len(set(self.periods)) != len(self.periods) or any(p < 1 for p in self.periods):
            raise InvalidConfigError(f"periods must be distinct and >= 1, got {self.periods}")
        if len(set(self.stft_resolutions)) != len(self.stft_resolutions):
            raise InvalidConfigError("STFT resolutions must be distinct")
        for n_fft, hop, win in self.stft_resolutions:
            if win > n_fft or hop < 1 or win < 2 or win % 2:
                raise InvalidConfigError(f"bad STFT resolution {(n_fft, hop, win)}")
        if len(self.mpd_channels) != len(self.mpd_strides):
            raise InvalidConfigError("one MPD stride per MPD layer required")
        if not self.periods and not self.stft_resolutions:
            raise InvalidConfigError("empty discriminator bank")

    @property
    def count(self) -> int:
        return len(self.periods) + len(self.stft_resolutions)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorBankConfig":
        return cls(**d)


@dataclass
class DiscriminatorFeatures:
    """Per discriminator ``i``: score ``scores[i]`` and hidden states ``features[i][l]``."""

    scores: list[ad.Tensor] = field(default_factory=list)
    features: list[list[ad.Tensor]] = field(default_factory=list)
    names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.scores)


def _lecun(rng, shape, dtype):
    fan_in = int(np.prod(shape[1:]))
    return ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(dtype), requires_grad=True)


class DiscriminatorBank:
    def __init__(self, config: DiscriminatorBankConfig, params: dict[str, ad.Tensor]):
        self.config = config
        self.params = params
        self._dft_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def copy(self) -> "DiscriminatorBank":
        return DiscriminatorBank(
            self.config, {k: ad.Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.params.items()}
        )

    # -- individual discriminators --------------------------------------
    def mpd_forward(self, wave: ad.Tensor, period: int) -> tuple[ad.Tensor, list[ad.Tensor]]:
        """Fold ``(B, L)`` into ``(B, L/p, p)`` columns and run strided convs along time.

        The tail is zero-padded to a multiple of ``p``. Columns are moved into
        the batch axis, so each (k, 1) 2-D kernel becomes a 1-D conv.
        """
        cfg = self.config
        B, L = wave.shape
        if L < period:
            raise TooShortError(f"wave of {L} samples shorter than period {period}")
        padded = -(-L // period) * period
        x = ad.pad(wave, ((0, 0), (0, padded - L))) if padded != L else wave
        x = ad.reshape(x, (B, padded // period, period))
        x = ad.transpose(x, (0, 2, 1))
        x = ad.reshape(x, (B * period, 1, padded // period))
        feats = []
        k = cfg.mpd_kernel
        for layer, stride in enumerate(cfg.mpd_strides):
            name = f"mpd.{period}.{layer}"
            x = ad.conv1d(x, self.params[name + ".weight"], self.params[name + ".bias"], stride=stride, padding=(k // 2, k // 2))
            x = ad.leaky_relu(x, cfg.leaky_slope)
            feats.append(x)
        name = f"mpd.{period}.post"
        score = ad.conv1d(x, self.params[name + ".weight"], self.params[name + ".bias"], padding=(1, 1))
        feats.append(score)
        return score, feats

    def _dft_basis(self, n_fft: int, win: int) -> tuple[np.ndarray, np.ndarray]:
        key = (n_fft, win, str(self.dtype))
        if key not in self._dft_cache:
            w = np.zeros(n_fft)
            off = (n_fft - win) // 2
            w[off : off + win] = hann_window(win)
            n = np.arange(n_fft)[:, None]
            k = np.arange(n_fft // 2 + 1)[None, :]
            ang = 2.0 * np.pi * n * k / n_fft
            self._dft_cache[key] = (
                (w[:, None] * np.cos(ang)).astype(self.dtype),
                (-w[:, None] * np.sin(ang)).astype(self.dtype),
            )
        return self._dft_cache[key]

    def spectrogram(self, wave: ad.Tensor, resolution: tuple[int, int, int]) -> ad.Tensor:
        """Magnitude STFT ``(B, T, n_fft/2+1)``, valid framing."""
        n_fft, hop, win = resolution
        if wave.shape[1] < n_fft:
            raise TooShortError(f"wave of {wave.shape[1]} samples shorter than STFT size {n_fft}")
        frames = ad.frame(wave, n_fft, hop)
        cos_b, sin_b = self._dft_basis(n_fft, win)
        return ad.magnitude(frames @ ad.Tensor(cos_b), frames @ ad.Tensor(sin_b))

    def mrd_forward(self, wave: ad.Tensor, index: int) -> tuple[ad.Tensor, list[ad.Tensor]]:
        cfg = self.config
        spec = self.spectrogram(wave, cfg.stft_resolutions[index])
        x = ad.reshape(spec, (spec.shape[0], 1) + spec.shape[1:])
        feats = []
        for layer in range(cfg.mrd_layers + 1):
            name = f"mrd.{index}.{layer}"
            stride = (1, 1) if layer == 0 or layer == cfg.mrd_layers else (1, 2)
            kw = 3 if layer == cfg.mrd_layers else 9
            x = ad.conv2d(x, self.params[name + ".weight"], self.params[name + ".bias"], stride=stride, padding=(1, kw // 2))
            x = ad.leaky_relu(x, cfg.leaky_slope)
            feats.append(x)
        name = f"mrd.{index}.post"
        score = ad.conv2d(x, self.params[name + ".weight"], self.params[name + ".bias"], padding=(1, 1))
        feats.append(score)
        return score, feats

    def __call__(self, wave) -> DiscriminatorFeatures:
        return bank_forward(self, wave)

    def save(self, path) -> None:
        save_weights(path, self.state_dict(), {"kind": "discriminator_bank", "bank_config": self.config.to_dict()})

    @classmethod
    def load(cls, path, dtype=np.float32) -> "DiscriminatorBank":
        tensors, meta = load_weights(path)
        bank = build_bank(DiscriminatorBankConfig.from_dict(meta["bank_config"]), dtype=dtype)
        bank.load_state(tensors)
        return bank

    def load_state(self, tensors: dict) -> None:
        if set(tensors) != set(self.params):
            raise ShapeError("discriminator state does not match bank config")
        for k, p in self.params.items():
            p.data = np.array(tensors[k], dtype=p.dtype).reshape(p.shape)


def bank_forward(bank: DiscriminatorBank, wave) -> DiscriminatorFeatures:
    """Run every discriminator on ``wave`` (``(B, L)`` tensor, 1-D array or Waveform)."""
    if hasattr(wave, "samples"):
        wave = wave.samples
    if not isinstance(wave, ad.Tensor):
        arr = np.asarray(wave, dtype=bank.dtype)
        wave = ad.Tensor(arr[None] if arr.ndim == 1 else arr)
    if wave.ndim != 2:
        raise ShapeError(f"bank expects (B, L) waves, got {wave.shape}")
    out = DiscriminatorFeatures()
    for p in bank.config.periods:
        score, feats = bank.mpd_forward(wave, p)
        out.scores.append(score)
        out.features.append(feats)
        out.names.append(f"mpd{p}")
    for i, res in enumerate(bank.config.stft_resolutions):
        score, feats = bank.mrd_forward(wave, i)
        out.scores.append(score)
        out.features.append(feats)
        out.names.append(f"mrd{res[0]}")
    return out


def build_bank(config: DiscriminatorBankConfig = DiscriminatorBankConfig(), seed: int = 0, dtype=None) -> DiscriminatorBank:
    dtype = np.dtype(dtype or ad.get_default_dtype())
    rng = np.random.default_rng(seed)
    P: dict[str, ad.Tensor] = {}

    def conv(name, shape):
        P[name + ".weight"] = _lecun(rng, shape, dtype)
        P[name + ".bias"] = ad.Tensor(np.zeros(shape[0], dtype=dtype), requires_grad=True)

    for p in config.periods:
        cin = 1
        for layer, cout in enumerate(config.mpd_channels):
            conv(f"mpd.{p}.{layer}", (cout, cin, config.mpd_kernel))
            cin = cout
        conv(f"mpd.{p}.post", (1, cin, 3))
    c = config.mrd_channels
    for i, _ in enumerate(config.stft_resolutions):
        for layer in range(config.mrd_layers + 1):
            kw = 3 if layer == config.mrd_layers else 9
            conv(f"mrd.{i}.{layer}", (c, 1 if layer == 0 else c, 3, kw))
        conv(f"mrd.{i}.post", (1, c, 3, 3))
    return DiscriminatorBank(config, P)
