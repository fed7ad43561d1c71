"""Evaluation: Mel-cepstral distance, Mel-L1 distance and a FLOPs counter."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct

from .errors import InvalidConfigError, ShapeError
from .frontend import FrontendConfig, Waveform, wav2mel
from .generator import Generator

MCD_SCALE = 10.0 / math.log(10.0) * math.sqrt(2.0)


@dataclass(frozen=True)
class McdConfig:
    order: int = 13
    include_c0: bool = False
    frontend: FrontendConfig = field(default_factory=FrontendConfig)

    def __post_init__(self):
        if not 1 <= self.order <= self.frontend.mel_bands - 1:
            raise InvalidConfigError(f"cepstral order {self.order} must be in [1, M-1]")


@dataclass
class McdResult:
    mcd_db: float
    frames: int
    truncated: bool = False
    conventions: dict = field(default_factory=dict)


def mel_cepstrum(log_mel: np.ndarray) -> np.ndarray:
    """Orthonormal type-II DCT over the band axis of a T x M log-Mel matrix."""
    return dct(np.asarray(log_mel, dtype=np.float64), type=2, norm="ortho", axis=-1)


def mcd_from_mel(log_mel: np.ndarray, log_mel_hat: np.ndarray, cfg: McdConfig = McdConfig()) -> float:
    """Frame-aligned MCD (dB) between two T x M log-Mel matrices (natural log)."""
    if np.shape(log_mel) != np.shape(log_mel_hat):
        raise ShapeError(f"mel shapes {np.shape(log_mel)} and {np.shape(log_mel_hat)} differ")
    c, c_hat = mel_cepstrum(log_mel), mel_cepstrum(log_mel_hat)
    lo = 0 if cfg.include_c0 else 1
    diff = c[:, lo : cfg.order + 1] - c_hat[:, lo : cfg.order + 1]
    return float(np.mean(MCD_SCALE * np.sqrt(np.sum(diff * diff, axis=1))))


def mcd(s, s_hat, cfg: McdConfig = McdConfig()) -> McdResult:
    """MCD between two waveforms; frames aligned by index, no DTW.

    Unequal lengths are truncated to the shorter one and flagged.
    """
    x = s.samples if isinstance(s, Waveform) else np.asarray(s)
    y = s_hat.samples if isinstance(s_hat, Waveform) else np.asarray(s_hat)
    n = min(x.size, y.size)
    truncated = x.size != y.size
    S = wav2mel(x[:n], cfg.frontend).data
    S_hat = wav2mel(y[:n], cfg.frontend).data
    return McdResult(
        mcd_db=mcd_from_mel(S, S_hat, cfg),
        frames=S.shape[0],
        truncated=truncated,
        conventions={"order": cfg.order, "include_c0": cfg.include_c0, "dct": "II-ortho", "dtw": False, "log": "natural"},
    )


def mel_l1_metric(s, s_hat, frontend: FrontendConfig = FrontendConfig()) -> float:
    x = s.samples if isinstance(s, Waveform) else np.asarray(s)
    y = s_hat.samples if isinstance(s_hat, Waveform) else np.asarray(s_hat)
    n = min(x.size, y.size)
    return float(np.mean(np.abs(wav2mel(x[:n], frontend).data - wav2mel(y[:n], frontend).data)))


# ---------------------------------------------------------------------------
# complexity
# ---------------------------------------------------------------------------


def conv1d_flops(cin: int, cout: int, k: int, l_out: int) -> int:
    return 2 * cin * cout * k * l_out


def conv_transpose1d_flops(cin: int, cout: int, k: int, l_in: int) -> int:
    # every input sample is scattered through all k taps, trimmed samples included
    return 2 * cin * cout * k * l_in


def activation_flops(channels: int, length: int) -> int:
    # one multiply-accumulate per element
    return 2 * channels * length


@dataclass
class FlopsReport:
    gflops: float
    layers: list[tuple[str, int]]
    params: int

    @property
    def total(self) -> int:
        return sum(f for _, f in self.layers)


def count_flops(g: Generator, seconds: float = 1.0, sample_rate_hz: int = 16000) -> FlopsReport:
    """Analytic FLOPs of synthesising ``seconds`` of audio; depends only on the config."""
    cfg = g.config
    hop = cfg.hop_length
    frames = int(round(seconds * sample_rate_hz / hop))
    chans = cfg.channels()
    layers: list[tuple[str, int]] = []
    L = frames
    layers.append(("input_conv", conv1d_flops(cfg.mel_bands, chans[0], cfg.input_kernel_size, L)))
    for i, (s, k) in enumerate(zip(cfg.stride_setup, cfg.upsample_kernel_sizes)):
        cin, cout = chans[i], chans[i + 1]
        layers.append((f"ups.{i}.snake", activation_flops(cin, L)))
        layers.append((f"ups.{i}", conv_transpose1d_flops(cin, cout, k, L)))
        L *= s
        for r, (rk, dils) in enumerate(zip(cfg.resblock_kernel_sizes, cfg.resblock_dilations)):
            for j, _ in enumerate(dils):
                name = f"blocks.{i}.{r}.{j}"
                layers.append((name + ".snake", activation_flops(cout, L)))
                layers.append((name, conv1d_flops(cout, cout, rk, L)))
    layers.append(("output.snake", activation_flops(chans[-1], L)))
    layers.append(("output_conv", conv1d_flops(chans[-1], 1, cfg.output_kernel_size, L)))
    layers.append(("tanh", activation_flops(1, L)))
    total = sum(f for _, f in layers)
    params = sum(p.data.size for p in g.parameters())
    return FlopsReport(gflops=total / seconds / 1e9, layers=layers, params=params)
