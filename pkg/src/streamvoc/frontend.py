"""wav2mel: framing, periodic Hann window, DFT power spectrum, Mel filterbank, log.

Numerical conventions:

* "valid" framing, no centre padding: frame ``t`` covers samples
  ``[t*Ns, t*Ns + Nw)``.
* HTK mel scale ``2595*log10(1 + f/700)`` with Slaney area normalisation.
* natural log after clamping at ``log_floor``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidConfigError, ShapeError, TooShortError


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int = 16000
    window_len: int = 512
    frame_shift: int = 128
    dft_size: int = 512
    mel_bands: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float | None = 8000.0
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.fmax_hz is None:
            object.__setattr__(self, "fmax_hz", self.sample_rate_hz / 2)
        self.validate()

    def validate(self) -> None:
        if self.sample_rate_hz <= 0:
            raise InvalidConfigError("sample_rate_hz must be positive")
        if self.window_len < 2 or self.window_len % 2:
            raise InvalidConfigError(f"window_len must be even and >= 2, got {self.window_len}")
        if self.frame_shift < 1:
            raise InvalidConfigError("frame_shift must be >= 1")
        k = self.dft_size
        if k < self.window_len:
            raise InvalidConfigError(f"dft_size {k} smaller than window_len {self.window_len}")
        if k & (k - 1):
            raise InvalidConfigError(f"dft_size must be a power of two, got {k}")
        if self.mel_bands < 1 or self.mel_bands > k // 2 + 1:
            raise InvalidConfigError(f"mel_bands={self.mel_bands} exceeds the {k // 2 + 1} DFT bins")
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2:
            raise InvalidConfigError("need 0 <= fmin < fmax <= sample_rate/2")
        if not self.log_floor > 0:
            raise InvalidConfigError("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.dft_size // 2 + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FrontendConfig":
        return cls(**d)


#: front-end of the original high-delay models (Nw'=1024, Ns'=256, K=1024)
ORIGINAL_FRONTEND = FrontendConfig(window_len=1024, frame_shift=256, dft_size=1024)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ShapeError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise TooShortError("empty waveform")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if np.max(np.abs(self.samples)) > 1.0:
            raise ValueError("waveform samples must lie in [-1, 1]")

    def __len__(self) -> int:
        return self.samples.size


@dataclass
class MelSpectrogram:
    """``data`` is T x M, natural-log Mel energies."""

    data: np.ndarray

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def band_count(self) -> int:
        return self.data.shape[1]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window ``0.5*(1 - cos(2*pi*k/n))``."""
    if n < 2 or n % 2:
        raise InvalidConfigError(f"Hann window length must be even and >= 2, got {n}")
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


def num_frames(length: int, cfg: FrontendConfig) -> int:
    if length < cfg.window_len:
        raise TooShortError(f"signal of {length} samples is shorter than the {cfg.window_len}-sample window")
    return (length - cfg.window_len) // cfg.frame_shift + 1


def frame_signal(wave, cfg: FrontendConfig) -> np.ndarray:
    """Split into ``T`` overlapping frames (T x Nw), without padding.

    Accepts a :class:`Waveform` or an array whose last axis is time; leading
    axes are kept as batch axes.
    """
    x = wave.samples if isinstance(wave, Waveform) else np.asarray(wave)
    T = num_frames(x.shape[-1], cfg)
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len, axis=-1)
    return view[..., :: cfg.frame_shift, :][..., :T, :]


def dft_power(frames: np.ndarray, window: np.ndarray, dft_size: int) -> np.ndarray:
    """Squared magnitude of the K-point DFT of windowed frames, bins 0..K/2."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] > dft_size:
        raise InvalidConfigError(f"frame length {frames.shape[-1]} exceeds dft_size {dft_size}")
    spec = np.fft.rfft(frames * window, n=dft_size, axis=-1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: FrontendConfig) -> np.ndarray:
    """M+2 frequencies (Hz): lower edge, centres, upper edge of every triangle."""
    mels = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.mel_bands + 2)
    return mel_to_hz(mels)


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """M x (K/2+1) triangular filters, each scaled by ``2/(f_hi - f_lo)``."""
    edges = mel_band_edges(cfg)
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate_hz / cfg.dft_size
    lo, centre, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (centre - lo)
    falling = (hi - freqs) / (hi - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb *= 2.0 / (hi - lo)
    return fb


def mel_energies(wave, cfg: FrontendConfig, fb: np.ndarray | None = None) -> np.ndarray:
    """Pre-log Mel energies, ``(..., T, M)``."""
    if fb is None:
        fb = mel_filterbank(cfg)
    frames = frame_signal(wave, cfg)
    power = dft_power(frames, hann_window(cfg.window_len), cfg.dft_size)
    # Per-band sums over each filter's support instead of one matrix product:
    # the result for a frame then never depends on how many frames share the
    # call, which keeps earlier frames bit-identical when samples are appended.
    out = np.empty(power.shape[:-1] + (fb.shape[0],), dtype=np.result_type(power, fb))
    for m, row in enumerate(fb):
        nz = np.flatnonzero(row)
        out[..., m] = (power[..., nz[0] : nz[-1] + 1] * row[nz[0] : nz[-1] + 1]).sum(axis=-1) if nz.size else 0.0
    return out


def wav2mel(wave, cfg: FrontendConfig = FrontendConfig(), fb: np.ndarray | None = None) -> MelSpectrogram:
    """Log-Mel spectrogram ``ln(max(fb @ |DFT|^2, log_floor))`` of a waveform."""
    return MelSpectrogram(np.log(np.maximum(mel_energies(wave, cfg, fb), cfg.log_floor)))


def wav2mel_batch(waves: np.ndarray, cfg: FrontendConfig, fb: np.ndarray | None = None) -> np.ndarray:
    """``(B, L)`` waveforms to ``(B, T, M)`` log-Mel arrays."""
    return np.log(np.maximum(mel_energies(waves, cfg, fb), cfg.log_floor))
