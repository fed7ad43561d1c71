"""Frame-in / frame-out synthesis with a causal generator.

Each plain conv keeps the last ``(k-1)*dilation`` input samples it saw;
each transposed conv keeps the ``k - stride`` output samples that the next
input frame still adds to. Zero-initialised state equals the left zero
padding of the offline causal forward, so streamed output matches offline
output from the very first sample.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ModeError, ShapeError
from .frontend import FrontendConfig
from .generator import Generator


class StreamSession:
    def __init__(self, generator: Generator):
        if not generator.causal:
            raise ModeError("streaming needs a causal generator")
        self.generator = generator
        self.hop = generator.config.hop_length
        self._conv_hist: dict[str, np.ndarray] = {}
        self._up_tail: dict[str, np.ndarray] = {}
        self.frames_consumed = 0
        self.samples_emitted = 0
        self.reset()

    def reset(self) -> None:
        g = self.generator
        dtype = g.dtype
        for name, k, d in g.conv_specs():
            cin = g.params[name + ".weight"].shape[1]
            self._conv_hist[name] = np.zeros((1, cin, (k - 1) * d), dtype=dtype)
        for i, s in enumerate(g.config.stride_setup):
            w = g.params[f"ups.{i}.weight"]
            cout, k = w.shape[1], w.shape[2]
            self._up_tail[f"ups.{i}"] = np.zeros((1, cout, k - s), dtype=dtype)
        self.frames_consumed = 0
        self.samples_emitted = 0

    def _conv(self, name, x, dilation):
        P = self.generator.params
        hist = self._conv_hist[name]
        xp = np.concatenate([hist, x.data], axis=-1)
        if hist.shape[-1]:
            self._conv_hist[name] = xp[:, :, xp.shape[-1] - hist.shape[-1] :].copy()
        return ad.conv1d(ad.Tensor(xp), P[name + ".weight"], P[name + ".bias"], dilation=dilation, padding="valid")

    def _upconv(self, name, x, stride):
        P = self.generator.params
        full = ad.conv_transpose1d(x, P[name + ".weight"], None, stride=stride, padding="full").data
        tail = self._up_tail[name]
        n = tail.shape[-1]
        if n:
            full[:, :, :n] += tail
        emit = x.shape[-1] * stride
        self._up_tail[name] = full[:, :, emit:].copy()
        return ad.Tensor(full[:, :, :emit] + P[name + ".bias"].data[:, None])

    def push_frames(self, frames: np.ndarray) -> np.ndarray:
        """Push ``n x M`` mel frames, get ``n * hop`` samples back."""
        frames = np.asarray(frames)
        if frames.ndim == 1:
            frames = frames[None]
        M = self.generator.config.mel_bands
        if frames.ndim != 2 or frames.shape[1] != M:
            raise ShapeError(f"expected frames of width {M}, got shape {frames.shape}")
        if frames.shape[0] == 0:
            return np.zeros(0, dtype=self.generator.dtype)
        x = ad.Tensor(np.ascontiguousarray(frames.T[None], dtype=self.generator.dtype))
        with ad.no_grad():
            out = self.generator._synthesize(x, self._conv, self._upconv).data[0, 0]
        self.frames_consumed += frames.shape[0]
        self.samples_emitted += out.size
        return out

    def push_mel_frame(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame)
        if frame.ndim != 1:
            raise ShapeError(f"a single mel frame must be 1-D, got shape {frame.shape}")
        return self.push_frames(frame[None])


def open_session(generator: Generator) -> StreamSession:
    return StreamSession(generator)


def stream_synthesize(generator: Generator, mel: np.ndarray, chunk_sizes=None) -> np.ndarray:
    """Stream a T x M mel, frame by frame or in the given chunk sizes (cycled)."""
    sess = StreamSession(generator)
    out = []
    t = 0
    T = mel.shape[0]
    i = 0
    while t < T:
        n = 1 if not chunk_sizes else chunk_sizes[i % len(chunk_sizes)]
        out.append(sess.push_frames(mel[t : t + n]))
        t += n
        i += 1
    return np.concatenate(out) if out else np.zeros(0, dtype=generator.dtype)


@dataclass
class LatencyReport:
    algorithmic_ms: float
    per_frame_us: list[float]
    histogram_edges_us: list[float]
    histogram_counts: list[int]
    real_time_factor: float
    mean_push_us: float = field(default=0.0)

    def to_dict(self) -> dict:
        return {
            "algorithmic_ms": self.algorithmic_ms,
            "mean_push_us": self.mean_push_us,
            "real_time_factor": self.real_time_factor,
            "histogram_edges_us": self.histogram_edges_us,
            "histogram_counts": self.histogram_counts,
        }


def measure_latency(
    sess: StreamSession,
    n_frames: int,
    frontend: FrontendConfig = FrontendConfig(),
    clock=time.perf_counter,
    bins: int = 10,
    seed: int = 0,
) -> LatencyReport:
    """Time ``n_frames`` pushes of random frames.

    Real-time factor is frame-shift duration over mean push time, so values
    above 1 mean faster than real time.
    """
    rng = np.random.default_rng(seed)
    frames = rng.normal(-5.0, 2.0, size=(n_frames, sess.generator.config.mel_bands))
    times = []
    for f in frames:
        t0 = clock()
        sess.push_mel_frame(f)
        times.append((clock() - t0) * 1e6)
    counts, edges = np.histogram(times, bins=bins)
    mean_us = float(np.mean(times))
    hop_s = frontend.frame_shift / frontend.sample_rate_hz
    return LatencyReport(
        algorithmic_ms=sess.generator.algorithmic_delay_ms(frontend),
        per_frame_us=times,
        histogram_edges_us=edges.tolist(),
        histogram_counts=counts.tolist(),
        real_time_factor=hop_s / (mean_us * 1e-6),
        mean_push_us=mean_us,
    )
