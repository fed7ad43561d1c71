import io
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamvoc.errors import FormatError, IntegrityError, MissingFileError
from streamvoc.io import (
    iter_mel1_frames,
    mel1_bytes,
    parse_mel1,
    pcm16_to_float,
    quantize_pcm16,
    read_mel1,
    read_wav,
    write_mel1,
    write_wav,
)
from streamvoc.weights import checksum, load_weights, save_weights


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 30), st.integers(1, 100), st.integers(0, 10_000))
def test_mel1_round_trip_bit_exact(T, M, seed):
    mel = np.random.default_rng(seed).normal(size=(T, M)).astype(np.float32)
    back = parse_mel1(mel1_bytes(mel)).data
    assert back.shape == (T, M)
    assert back.tobytes() == mel.tobytes()


def test_mel1_header_layout():
    buf = mel1_bytes(np.zeros((3, 80), np.float32))
    assert buf[:4] == b"MEL1"
    assert int.from_bytes(buf[4:8], "little") == 3
    assert int.from_bytes(buf[8:12], "little") == 80
    assert len(buf) == 12 + 3 * 80 * 4


def test_mel1_file(tmp_path):
    mel = np.arange(160, dtype=np.float32).reshape(2, 80)
    write_mel1(tmp_path / "a.mel", mel)
    np.testing.assert_array_equal(read_mel1(tmp_path / "a.mel").data, mel)
    with pytest.raises(MissingFileError):
        read_mel1(tmp_path / "missing.mel")


@pytest.mark.parametrize("buf", [b"MEL", b"MEL2" + bytes(8), mel1_bytes(np.zeros((2, 4), np.float32))[:-1]])
def test_mel1_malformed(buf):
    with pytest.raises(FormatError):
        parse_mel1(buf)


def test_mel1_stream_frames():
    mel = np.random.default_rng(0).normal(size=(5, 80)).astype(np.float32)
    frames = list(iter_mel1_frames(io.BytesIO(mel1_bytes(mel))))
    np.testing.assert_array_equal(np.stack(frames), mel)
    with pytest.raises(FormatError):
        list(iter_mel1_frames(io.BytesIO(mel1_bytes(mel)[:-10])))


def test_pcm_quantisation():
    q = quantize_pcm16(np.array([0.0, 1.0, -1.0, 2.0, 0.5 / 32767]))
    assert q.tolist() == [0, 32767, -32767, 32767, 0]  # 0.5 rounds to even
    assert pcm16_to_float(np.array([-32768], dtype=np.int16))[0] == -1.0


def test_wav_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    write_wav(tmp_path / "a.wav", x)
    w = read_wav(tmp_path / "a.wav")
    assert w.sample_rate_hz == 16000
    np.testing.assert_allclose(w.samples, quantize_pcm16(x) / 32767.0)
    assert np.max(np.abs(w.samples - x)) <= 0.5 / 32767 + 1e-12


def test_wav_rate_mismatch(tmp_path):
    write_wav(tmp_path / "a.wav", np.zeros(10), 22050)
    with pytest.raises(FormatError):
        read_wav(tmp_path / "a.wav")
    assert read_wav(tmp_path / "a.wav", None).sample_rate_hz == 22050


def test_wav_stereo_rejected(tmp_path):
    with wave.open(str(tmp_path / "s.wav"), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(bytes(40))
    with pytest.raises(FormatError):
        read_wav(tmp_path / "s.wav")


def test_weight_store_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = {"a": rng.normal(size=(3, 4)).astype(np.float32), "b.c": rng.normal(size=(5,)).astype(np.float32)}
    save_weights(tmp_path / "w.svws", t, {"kind": "x", "n": [1, 2]})
    back, meta = load_weights(tmp_path / "w.svws")
    assert meta == {"kind": "x", "n": [1, 2]}
    assert checksum(back) == checksum(t)


def test_weight_store_truncated(tmp_path):
    save_weights(tmp_path / "w.svws", {"a": np.ones(100, np.float32)})
    raw = (tmp_path / "w.svws").read_bytes()
    for cut in (4, 20, len(raw) - 1):
        (tmp_path / "t.svws").write_bytes(raw[:cut])
        with pytest.raises(IntegrityError):
            load_weights(tmp_path / "t.svws")


def test_weight_store_corrupted(tmp_path):
    save_weights(tmp_path / "w.svws", {"a": np.ones(100, np.float32)})
    raw = bytearray((tmp_path / "w.svws").read_bytes())
    raw[-1] ^= 0xFF
    (tmp_path / "c.svws").write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        load_weights(tmp_path / "c.svws")
    (tmp_path / "m.svws").write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(FormatError):
        load_weights(tmp_path / "m.svws")
