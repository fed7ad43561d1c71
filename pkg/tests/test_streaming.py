import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamvoc import autodiff as ad
from streamvoc.errors import ModeError, ShapeError
from streamvoc.generator import GeneratorConfig, build_generator
from streamvoc.streaming import StreamSession, measure_latency, open_session, stream_synthesize

SETUPS = [(8, 4, 2, 2), (4, 2, 2, 2, 2, 2), (8, 8, 2, 2), (4, 4, 2, 2, 2, 2)]


def make(strides, seed=0, dtype=np.float32):
    return build_generator(GeneratorConfig(strides), seed=seed, dtype=dtype, hop_length=int(np.prod(strides)), weight_std=0.05)


def offline(g, mel):
    with ad.no_grad():
        return g(ad.Tensor(mel.T[None].astype(g.dtype))).data[0]


def test_open_rejects_non_causal():
    g = build_generator(GeneratorConfig((8, 4, 2, 2), causal=False))
    with pytest.raises(ModeError):
        open_session(g)


def test_fresh_session_counters():
    s = open_session(make((8, 4, 2, 2)))
    assert s.frames_consumed == 0 and s.samples_emitted == 0


def test_push_emits_hop_samples():
    s = open_session(make((8, 4, 2, 2)))
    out = s.push_mel_frame(np.random.default_rng(0).normal(size=80))
    assert out.shape == (128,)
    assert s.frames_consumed == 1 and s.samples_emitted == 128


def test_wrong_width():
    with pytest.raises(ShapeError):
        open_session(make((8, 4, 2, 2))).push_mel_frame(np.zeros(40))


def test_first_zero_frame_matches_offline():
    g = make((8, 4, 2, 2))
    z = np.zeros((1, 80), dtype=np.float32)
    np.testing.assert_allclose(open_session(g).push_frames(z), offline(g, z), atol=1e-6)


@pytest.mark.parametrize("strides", SETUPS)
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-10)])
def test_stream_matches_offline(strides, dtype, tol):
    for seed in range(3):
        g = make(strides, seed=seed, dtype=dtype)
        mel = np.random.default_rng(seed).normal(-4, 1.5, size=(12, 80))
        err = np.max(np.abs(stream_synthesize(g, mel) - offline(g, mel)))
        assert err <= tol


@settings(max_examples=10, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.integers(0, 1000))
def test_chunk_invariance(chunks, seed):
    g = make((4, 2, 2, 2, 2, 2), seed=seed % 5, dtype=np.float64)
    mel = np.random.default_rng(seed).normal(-4, 1.5, size=(11, 80))
    one = stream_synthesize(g, mel)
    grouped = stream_synthesize(g, mel, chunks)
    np.testing.assert_allclose(grouped, one, atol=1e-12)


def test_independent_sessions_and_reset():
    g = make((8, 4, 2, 2))
    rng = np.random.default_rng(0)
    a, x = rng.normal(size=(3, 80)), rng.normal(size=(2, 80))
    s1, s2 = open_session(g), open_session(g)
    s1.push_frames(a)
    fresh = s2.push_frames(x)
    s1.reset()
    s1.reset()
    assert s1.frames_consumed == 0 and s1.samples_emitted == 0
    np.testing.assert_array_equal(s1.push_frames(x), fresh)


def test_emitted_samples_never_revised():
    g = make((8, 4, 2, 2))
    rng = np.random.default_rng(1)
    mel = rng.normal(size=(6, 80))
    s = StreamSession(g)
    first = [s.push_mel_frame(f) for f in mel[:3]]
    s.push_mel_frame(rng.normal(size=80))  # a different future
    replay = StreamSession(g)
    again = [replay.push_mel_frame(f) for f in mel[:3]]
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a, b)


def test_latency_report():
    ticks = iter(np.arange(0, 1, 0.0005))
    rep = measure_latency(open_session(make((8, 4, 2, 2))), 20, clock=lambda: next(ticks))
    assert rep.algorithmic_ms == 32.0
    assert sum(rep.histogram_counts) == 20
    assert rep.real_time_factor == pytest.approx((128 / 16000) / 0.0005)
    assert set(rep.to_dict()) >= {"algorithmic_ms", "real_time_factor", "histogram_counts"}


def test_real_time_on_this_machine():
    rep = measure_latency(open_session(make((8, 4, 2, 2))), 50)
    assert rep.real_time_factor > 1.0
