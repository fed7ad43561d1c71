import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamvoc import autodiff as ad
from streamvoc.errors import InvalidConfigError, ShapeError
from streamvoc.frontend import wav2mel
from streamvoc.generator import GeneratorConfig, build_generator
from streamvoc.metrics import (
    McdConfig,
    conv1d_flops,
    count_flops,
    mcd,
    mcd_from_mel,
    mel_cepstrum,
    mel_l1_metric,
)


def wave(n=8000, seed=0):
    return np.random.default_rng(seed).uniform(-0.5, 0.5, n)


def dct_basis(M, k):
    n = np.arange(M)
    scale = math.sqrt(1 / M) if k == 0 else math.sqrt(2 / M)
    return scale * np.cos(math.pi * (n + 0.5) * k / M)


def test_identity_is_exactly_zero():
    x = wave()
    assert mcd(x, x).mcd_db == 0.0


def test_symmetric():
    a, b = wave(seed=0), wave(seed=1)
    assert mcd(a, b).mcd_db == pytest.approx(mcd(b, a).mcd_db, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 1000))
def test_single_coefficient_closed_form(delta, seed):
    L = np.random.default_rng(seed).normal(-5, 2, size=(1, 80))
    L_hat = L + delta * dct_basis(80, 1)
    expected = (10 / math.log(10)) * math.sqrt(2) * abs(delta)
    assert abs(mcd_from_mel(L, L_hat) - expected) <= 1e-9


def test_cepstrum_matches_basis():
    L = np.random.default_rng(0).normal(size=(3, 80))
    B = np.stack([dct_basis(80, k) for k in range(80)])
    np.testing.assert_allclose(mel_cepstrum(L), L @ B.T, atol=1e-10)


def test_c0_excluded_by_default():
    L = np.random.default_rng(0).normal(size=(4, 80))
    assert mcd_from_mel(L, L + 1.0) == pytest.approx(0.0, abs=1e-12)
    assert mcd_from_mel(L, L + 1.0, McdConfig(include_c0=True)) > 0


def test_truncation_flagged():
    a = wave(8000)
    r = mcd(a, a[:6000])
    assert r.truncated and r.mcd_db == 0.0
    assert r.frames == wav2mel(a[:6000]).data.shape[0]
    assert r.conventions["dtw"] is False


def test_mcd_errors():
    with pytest.raises(ShapeError):
        mcd_from_mel(np.zeros((2, 80)), np.zeros((3, 80)))
    with pytest.raises(InvalidConfigError):
        McdConfig(order=80)


def test_mel_l1_metric_agrees():
    a, b = wave(seed=0), wave(seed=1)
    ref = np.mean(np.abs(wav2mel(a).data - wav2mel(b).data))
    assert mel_l1_metric(a, b) == pytest.approx(ref)
    assert mel_l1_metric(a, a) == 0.0


def test_single_conv_example():
    assert conv1d_flops(1, 1, 3, 16000) == 96000


def graph_flops(g, frames):
    """Count FLOPs from the shapes of a real forward pass."""
    mel = np.zeros((1, g.config.mel_bands, frames), dtype=np.float32)
    out = g(ad.Tensor(mel))
    seen, stack, total = set(), [out], 0
    while stack:
        t = stack.pop()
        if t.id in seen:
            continue
        seen.add(t.id)
        stack.extend(t._parents)
        if t.op == "conv1d":
            cout, cin, k = t._parents[1].shape
            total += 2 * cin * cout * k * t.shape[-1]
        elif t.op == "conv_transpose1d":
            cin, cout, k = t._parents[1].shape
            total += 2 * cin * cout * k * t._parents[0].shape[-1]
        elif t.op in ("snake", "tanh"):
            total += 2 * int(np.prod(t.shape[1:]))
    return total


@pytest.mark.parametrize("strides", [(8, 4, 2, 2), (4, 2, 2, 2, 2, 2)])
def test_count_matches_graph_oracle(strides):
    g = build_generator(GeneratorConfig(strides, causal=True), hop_length=int(np.prod(strides)))
    frames = 16000 // g.config.hop_length
    oracle = graph_flops(g, frames)
    rep = count_flops(g)
    assert abs(rep.total - oracle) <= 0.05 * oracle
    assert rep.gflops == pytest.approx(rep.total / 1e9)


def test_causal_equals_non_causal():
    a = count_flops(build_generator(GeneratorConfig((8, 4, 2, 2), causal=True)))
    b = count_flops(build_generator(GeneratorConfig((8, 4, 2, 2), causal=False)))
    assert a.total == b.total and a.params == b.params


def test_independent_of_weights():
    a = count_flops(build_generator(GeneratorConfig((8, 4, 2, 2)), seed=0))
    b = count_flops(build_generator(GeneratorConfig((8, 4, 2, 2)), seed=9, weight_std=1.0))
    assert a.total == b.total


def test_layers_named_and_positive():
    rep = count_flops(build_generator(GeneratorConfig((8, 4, 2, 2))))
    assert rep.layers[0][0] == "input_conv" and rep.layers[-1][0] == "tanh"
    assert all(f > 0 for _, f in rep.layers)
