import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamvoc import autodiff as ad
from streamvoc.errors import InvalidConfigError, ShapeError
from streamvoc.frontend import ORIGINAL_FRONTEND, FrontendConfig, MelSpectrogram
from streamvoc.generator import STRIDE_SETUPS, Generator, GeneratorConfig, build_generator

OUR_FS = [(8, 4, 2, 2), (4, 2, 2, 2, 2, 2)]
ORIG_FS = [(8, 8, 2, 2), (4, 4, 2, 2, 2, 2)]


def make(strides, causal=True, seed=0, std=0.05, dtype=np.float32):
    hop = int(np.prod(strides))
    return build_generator(GeneratorConfig(strides, causal=causal), seed=seed, dtype=dtype, hop_length=hop, weight_std=std)


def run(g, mel):
    with ad.no_grad():
        return g(ad.Tensor(mel.T[None].astype(g.dtype))).data[0]


def probe_lookahead(g, T=40, t=20, seed=0):
    """Brute-force oracle: perturb one frame, find the earliest output sample that moves."""
    rng = np.random.default_rng(seed)
    mel = rng.normal(-4.0, 1.0, size=(T, 80))
    base = run(g, mel)
    mel2 = mel.copy()
    mel2[t] += rng.normal(0.0, 3.0, size=80)
    changed = np.flatnonzero(run(g, mel2) != base)
    return t * g.config.hop_length - changed[0]


def test_build_ok_and_stride_mismatch():
    build_generator(GeneratorConfig((8, 4, 2, 2)))
    with pytest.raises(InvalidConfigError):
        build_generator(GeneratorConfig((8, 8, 2, 2)))
    build_generator(GeneratorConfig((8, 8, 2, 2)), frontend=ORIGINAL_FRONTEND)


def test_stride_setup_table():
    assert {np.prod(s) for s in STRIDE_SETUPS.values()} == {128, 256}


@pytest.mark.parametrize(
    "kw",
    [dict(stride_setup=()), dict(stride_setup=(0, 128)), dict(upsample_kernel_sizes=(4, 4, 2, 2)), dict(resblock_kernel_sizes=(3,))],
)
def test_config_validation(kw):
    with pytest.raises(InvalidConfigError):
        GeneratorConfig(**kw)


def test_same_seed_identical():
    a, b = build_generator(GeneratorConfig(), seed=3), build_generator(GeneratorConfig(), seed=3)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    c = build_generator(GeneratorConfig(), seed=4)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params if k.endswith("weight"))


def test_init_statistics():
    g = build_generator(GeneratorConfig(), seed=0)
    w = np.concatenate([p.data.ravel() for k, p in g.params.items() if k.endswith("weight")])
    assert abs(w.std() - 0.01) < 5e-4
    assert all(np.all(p.data == 0) for k, p in g.params.items() if k.endswith("bias"))
    assert all(np.all(p.data == 1) for k, p in g.params.items() if k.endswith("alpha"))


@pytest.mark.parametrize("causal", [True, False])
def test_output_length(causal):
    g = make((8, 4, 2, 2), causal)
    out = g.forward(MelSpectrogram(np.random.default_rng(0).normal(-5, 1, (5, 80))))
    assert len(out) == 640


def test_zero_output_conv_gives_silence():
    g = make((8, 4, 2, 2))
    g.params["output_conv.weight"].data[:] = 0
    assert np.all(run(g, np.random.default_rng(0).normal(size=(6, 80))) == 0)


def test_band_mismatch():
    with pytest.raises(ShapeError):
        make((8, 4, 2, 2)).forward(MelSpectrogram(np.zeros((5, 40))))


def test_output_bounded():
    g = make((8, 4, 2, 2), std=0.5)
    y = run(g, np.random.default_rng(1).normal(0, 10, size=(6, 80)))
    assert np.all(np.abs(y) <= 1.0)


def test_causal_example_frame3():
    g = make((8, 4, 2, 2))
    rng = np.random.default_rng(0)
    mel = rng.normal(-4, 1, size=(8, 80))
    a = run(g, mel)
    mel[3:] += rng.normal(size=(5, 80))
    b = run(g, mel)
    np.testing.assert_array_equal(a[:384], b[:384])
    assert not np.array_equal(a[384:], b[384:])


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(OUR_FS + ORIG_FS), st.integers(0, 10**6), st.integers(1, 7))
def test_causality_property(strides, seed, t):
    g = make(strides, seed=seed % 50)
    rng = np.random.default_rng(seed)
    mel = rng.normal(-4, 1, size=(8, 80))
    a = run(g, mel)
    mel[t:] = rng.normal(-4, 1, size=(8 - t, 80))
    b = run(g, mel)
    n = t * g.config.hop_length
    np.testing.assert_array_equal(a[:n], b[:n])


def test_non_causal_looks_ahead():
    g = make((8, 4, 2, 2), causal=False)
    assert probe_lookahead(g) > 0


@pytest.mark.parametrize("strides", OUR_FS + ORIG_FS)
def test_causal_lookahead_zero(strides):
    assert make(strides).lookahead_samples() == 0


def test_single_conv_lookahead():
    # only the output conv (k=3) has right context
    cfg = GeneratorConfig(
        (8, 4, 2, 2), causal=False, upsample_kernel_sizes=(8, 4, 2, 2), resblock_kernel_sizes=(1, 1),
        input_kernel_size=1, output_kernel_size=3,
    )
    g = build_generator(cfg, weight_std=0.1, dtype=np.float64)
    assert g.lookahead_samples() == 1
    assert probe_lookahead(g) == 1


@pytest.mark.parametrize("strides", OUR_FS + ORIG_FS)
def test_lookahead_matches_probe(strides):
    # std 0.1: small enough to keep tanh out of saturation, large enough that
    # the longest dependency path still moves the output in float64
    g = make(strides, causal=False, dtype=np.float64, std=0.1)
    probe = max(probe_lookahead(g, seed=s) for s in range(3))
    assert g.lookahead_samples() == probe


def test_delays():
    fe = FrontendConfig()
    for strides in OUR_FS:
        assert make(strides).algorithmic_delay_ms(fe) == 32.0
    for strides in ORIG_FS:
        assert make(strides).algorithmic_delay_ms(ORIGINAL_FRONTEND) == 64.0
    nc = make((8, 4, 2, 2), causal=False)
    assert nc.algorithmic_delay_ms(fe) == (512 + nc.lookahead_samples()) / 16.0


def test_save_load_roundtrip(tmp_path):
    g = make((4, 2, 2, 2, 2, 2), causal=False)
    g.save(tmp_path / "g.svws")
    h = Generator.load(tmp_path / "g.svws")
    assert h.config == g.config
    for k in g.params:
        np.testing.assert_array_equal(g.params[k].data, h.params[k].data)


def test_config_dict_roundtrip():
    cfg = GeneratorConfig((4, 4, 2, 2, 2, 2), causal=False, base_channels=16)
    assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg


def test_channels_plan():
    assert GeneratorConfig((4, 2, 2, 2, 2, 2)).channels() == [32, 16, 8, 4, 2, 2, 2]
