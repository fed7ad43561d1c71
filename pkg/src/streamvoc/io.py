"""File formats: MEL1 spectrogram files and 16-bit PCM mono WAV."""

from __future__ import annotations

import struct
import wave
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .errors import FormatError, MissingFileError
from .frontend import MelSpectrogram, Waveform

MEL1_MAGIC = b"MEL1"
_HEADER = struct.Struct("<4sII")


def mel1_bytes(mel) -> bytes:
    data = np.asarray(getattr(mel, "data", mel), dtype="<f4")
    if data.ndim != 2:
        raise FormatError(f"MEL1 needs a T x M matrix, got shape {data.shape}")
    return _HEADER.pack(MEL1_MAGIC, data.shape[0], data.shape[1]) + np.ascontiguousarray(data).tobytes()


def write_mel1(path, mel) -> None:
    Path(path).write_bytes(mel1_bytes(mel))


def parse_mel1(buf: bytes) -> MelSpectrogram:
    if len(buf) < _HEADER.size:
        raise FormatError("MEL1 file shorter than its header")
    magic, T, M = _HEADER.unpack_from(buf)
    if magic != MEL1_MAGIC:
        raise FormatError(f"bad MEL1 magic {magic!r}")
    expected = _HEADER.size + 4 * T * M
    if len(buf) != expected:
        raise FormatError(f"MEL1 payload is {len(buf) - _HEADER.size} bytes, header implies {4 * T * M}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(T, M).astype(np.float32)
    return MelSpectrogram(data)


def read_mel1(path) -> MelSpectrogram:
    return parse_mel1(_read_bytes(path))


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    while n:
        b = stream.read(n)
        if not b:
            break
        chunks.append(b)
        n -= len(b)
    return b"".join(chunks)


def iter_mel1_frames(stream: BinaryIO) -> Iterator[np.ndarray]:
    """Yield ``(M,)`` frames from a MEL1 byte stream as they arrive.

    Only one frame is held at a time; a truncated trailing frame raises
    FormatError.
    """
    head = _read_exact(stream, _HEADER.size)
    if len(head) != _HEADER.size:
        raise FormatError("MEL1 stream shorter than its header")
    magic, T, M = _HEADER.unpack(head)
    if magic != MEL1_MAGIC:
        raise FormatError(f"bad MEL1 magic {magic!r}")
    for _ in range(T):
        raw = _read_exact(stream, 4 * M)
        if len(raw) != 4 * M:
            raise FormatError("MEL1 stream ended inside a frame")
        yield np.frombuffer(raw, dtype="<f4").astype(np.float32)


def _read_bytes(path) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"no such file: {p}")
    return p.read_bytes()


# ---------------------------------------------------------------------------
# PCM / WAV
# ---------------------------------------------------------------------------


def quantize_pcm16(x: np.ndarray) -> np.ndarray:
    """Float samples in [-1, 1] to int16, scale 32767, round half to even."""
    y = np.rint(np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0) * 32767.0)
    return y.astype("<i2")


def pcm16_to_float(x: np.ndarray) -> np.ndarray:
    # -32768 maps just below -1; clip so the result is a valid Waveform
    return np.clip(np.asarray(x, dtype=np.float64) / 32767.0, -1.0, 1.0)


def write_wav(path, samples, sample_rate_hz: int = 16000) -> None:
    s = getattr(samples, "samples", samples)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate_hz))
        w.writeframes(quantize_pcm16(s).tobytes())


def read_wav(path, sample_rate_hz: int | None = 16000) -> Waveform:
    """Read 16-bit PCM mono; ``sample_rate_hz`` (if given) must match the file."""
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"no such file: {p}")
    try:
        with wave.open(str(p), "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2:
                raise FormatError(f"{p}: need 16-bit PCM mono, got {w.getnchannels()} ch x {8 * w.getsampwidth()} bit")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as e:
        raise FormatError(f"{p}: {e}") from e
    if sample_rate_hz is not None and rate != sample_rate_hz:
        raise FormatError(f"{p}: sample rate {rate} Hz, expected {sample_rate_hz} Hz (no resampling)")
    return Waveform(pcm16_to_float(np.frombuffer(raw, dtype="<i2")), rate)
