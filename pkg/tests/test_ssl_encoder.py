import numpy as np
import pytest

from streamvoc import autodiff as ad
from streamvoc.errors import TooShortError
from streamvoc.gradcheck import grad_check
from streamvoc.ssl_encoder import (
    DOWNSAMPLE,
    EXTERNAL_NAME_MAP,
    build_ssl_encoder,
    encode,
    load_ssl_encoder,
    save_ssl_encoder,
)


def test_fixture_matches_seeded_build():
    shipped = load_ssl_encoder()
    rebuilt = build_ssl_encoder()
    assert shipped.checksum() == rebuilt.checksum()


@pytest.mark.parametrize("n,frames", [(3200, 10), (320, 1), (3519, 10), (8192, 25)])
def test_frame_count(n, frames):
    rep = encode(np.random.default_rng(0).uniform(-1, 1, n))
    assert rep.frames.shape == (frames, 64)
    assert rep.downsample_factor == DOWNSAMPLE


def test_too_short():
    with pytest.raises(TooShortError):
        encode(np.zeros(319))


def test_deterministic_and_finite():
    x = np.random.default_rng(1).uniform(-1, 1, 4000)
    a, b = encode(x), encode(x)
    np.testing.assert_array_equal(a.frames, b.frames)
    assert np.all(np.isfinite(a.frames))


def test_frozen_params():
    enc = load_ssl_encoder()
    assert all(not p.requires_grad for p in enc.params.values())
    before = enc.checksum()
    x = ad.Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 640)).astype(np.float32), requires_grad=True)
    ad.backward(ad.tsum(enc(x)))
    assert all(p.grad is None for p in enc.params.values())
    assert x.grad is not None and np.any(x.grad != 0)
    assert enc.checksum() == before


def test_gradient_wrt_wave():
    with ad.precision(np.float64):
        enc = load_ssl_encoder(dtype=np.float64)
        x = ad.Tensor(np.random.default_rng(2).uniform(-0.5, 0.5, (1, 960)), requires_grad=True)
        proj = np.random.default_rng(3).normal(size=(1, 3, 64))
        fn = lambda: ad.tsum(enc(x) * ad.Tensor(proj))
        assert grad_check(fn, {"x": x}, n_samples=60).max_rel_err < 1e-4


def test_save_load_roundtrip(tmp_path):
    enc = build_ssl_encoder(seed=7, width=8)
    save_ssl_encoder(enc, tmp_path / "e.svws")
    back = load_ssl_encoder(tmp_path / "e.svws")
    assert back.width == 8 and back.checksum() == enc.checksum()


def test_wide_variant_shape():
    enc = build_ssl_encoder(seed=0, width=768)
    assert enc.encode(np.zeros(640)).frames.shape == (2, 768)


def test_external_name_map_covers_all_params():
    assert set(EXTERNAL_NAME_MAP.values()) == set(load_ssl_encoder().params)
