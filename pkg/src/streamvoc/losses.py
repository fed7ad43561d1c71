"""Training objectives for the causal student vocoder.

* LSGAN adversarial pair,
* L1 distance of log-Mel spectrograms,
* feature matching over discriminator hidden states (student bank on
  (s, s_hat); teacher bank on (s_bar, s_hat)),
* SSL representation similarity: cosine (default), MSE or MAE,
* the weighted sum used for the generator update.

All functions accept autodiff tensors so the generator update can
backpropagate through them.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DegenerateInputError, InvalidConfigError, ShapeError
from .frontend import FrontendConfig, MelSpectrogram, hann_window, mel_filterbank

SSL_VARIANTS = ("cosine", "mse", "mae")


@dataclass(frozen=True)
class LossWeights:
    lambda_mel: float = 45.0
    lambda_fm: float = 2.0
    lambda_ssl: float = 4.0

    def __post_init__(self):
        if min(self.lambda_mel, self.lambda_fm, self.lambda_ssl) < 0:
            raise InvalidConfigError("loss weights must be >= 0")


@dataclass
class LossReport:
    j_adv: float
    j_mel: float
    j_fm_s: float
    j_fm_t: float | None = None
    j_ssl: float | None = None
    j_gen: float = math.nan

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, step: int | None = None) -> str:
        d = self.to_dict()
        if step is not None:
            d = {"step": step, **d}
        return json.dumps(d)


def _as_tensor(x) -> ad.Tensor:
    if isinstance(x, ad.Tensor):
        return x
    if isinstance(x, MelSpectrogram):
        return ad.Tensor(x.data)
    if hasattr(x, "frames"):
        return ad.Tensor(x.frames)
    return ad.Tensor(np.asarray(x))


# ---------------------------------------------------------------------------
# adversarial
# ---------------------------------------------------------------------------


def adv_loss_generator(fake_scores: Sequence[ad.Tensor]) -> ad.Tensor:
    """mean_i mean((y_hat_i - 1)^2)."""
    if not fake_scores:
        raise ContractError("empty discriminator bank")
    terms = [ad.mean((_as_tensor(y) - 1.0) ** 2) for y in fake_scores]
    return _average(terms)


def adv_loss_discriminator(real_scores: Sequence[ad.Tensor], fake_scores: Sequence[ad.Tensor]) -> ad.Tensor:
    """mean_i [mean((y_i - 1)^2) + mean(y_hat_i^2)]."""
    if not real_scores or len(real_scores) != len(fake_scores):
        raise ContractError("need matching, nonempty real and fake score lists")
    terms = []
    for y, y_hat in zip(real_scores, fake_scores):
        y, y_hat = _as_tensor(y), _as_tensor(y_hat)
        terms.append(ad.mean((y - 1.0) ** 2) + ad.mean(y_hat * y_hat))
    return _average(terms)


def _average(terms: list[ad.Tensor]) -> ad.Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


# ---------------------------------------------------------------------------
# spectral
# ---------------------------------------------------------------------------


def mel_l1(S, S_hat) -> ad.Tensor:
    """Mean absolute difference over all T*M log-Mel entries."""
    S, S_hat = _as_tensor(S), _as_tensor(S_hat)
    if S.shape != S_hat.shape:
        raise ShapeError(f"mel shapes {S.shape} and {S_hat.shape} differ")
    return ad.l1_mean(S_hat, S)


class DifferentiableWav2Mel:
    """wav2mel rebuilt from autodiff ops, so the Mel loss reaches the waveform.

    Uses the same window, DFT size, filterbank and clamp as
    :func:`streamvoc.frontend.wav2mel`; the DFT is a matrix product with the
    first ``Nw`` rows of the K-point basis (zero padding is implicit).
    """

    def __init__(self, cfg: FrontendConfig = FrontendConfig(), dtype=None):
        self.cfg = cfg
        dtype = np.dtype(dtype or ad.get_default_dtype())
        n = np.arange(cfg.window_len)[:, None]
        k = np.arange(cfg.n_bins)[None, :]
        ang = 2.0 * np.pi * n * k / cfg.dft_size
        w = hann_window(cfg.window_len)[:, None]
        self.cos_basis = (w * np.cos(ang)).astype(dtype)
        self.sin_basis = (-w * np.sin(ang)).astype(dtype)
        self.fb_t = mel_filterbank(cfg).T.astype(dtype)

    def __call__(self, wave: ad.Tensor) -> ad.Tensor:
        """``(B, L)`` -> ``(B, T, M)``."""
        if not isinstance(wave, ad.Tensor):
            wave = ad.Tensor(np.asarray(wave, dtype=self.cos_basis.dtype))
        if wave.ndim == 1:
            wave = ad.reshape(wave, (1, wave.shape[0]))
        frames = ad.frame(wave, self.cfg.window_len, self.cfg.frame_shift)
        re = frames @ ad.Tensor(self.cos_basis)
        im = frames @ ad.Tensor(self.sin_basis)
        power = re * re + im * im
        mel = power @ ad.Tensor(self.fb_t)
        return ad.log(ad.clamp_min(mel, self.cfg.log_floor))


# ---------------------------------------------------------------------------
# feature matching
# ---------------------------------------------------------------------------


def _feature_lists(f):
    return f.features if hasattr(f, "features") else f


def feature_matching(features_a, features_b) -> ad.Tensor:
    """(1/|I|) sum_i (1/|L_i|) sum_l mean|f_il(a) - f_il(b)|.

    With the same layer count for every discriminator this is the
    1/(|I|*|L|) double sum; each L1 norm is the per-element mean.
    """
    fa, fb = _feature_lists(features_a), _feature_lists(features_b)
    if len(fa) != len(fb) or not fa:
        raise ContractError(f"feature lists differ in discriminator count: {len(fa)} vs {len(fb)}")
    per_disc = []
    for la, lb in zip(fa, fb):
        if len(la) != len(lb) or not la:
            raise ContractError("feature lists differ in layer count")
        terms = []
        for a, b in zip(la, lb):
            a, b = _as_tensor(a), _as_tensor(b)
            if a.shape != b.shape:
                raise ShapeError(f"feature shapes {a.shape} and {b.shape} differ")
            terms.append(ad.l1_mean(a, b))
        per_disc.append(_average(terms))
    return _average(per_disc)


# ---------------------------------------------------------------------------
# SSL similarity
# ---------------------------------------------------------------------------


def ssl_loss(E_ref, E_hat, variant: str = "cosine", reduction: str = "frame") -> ad.Tensor:
    """Distance between SSL representations ``(..., F, D)``.

    ``cosine``: 1 - cos(e, e_hat), per frame and averaged when
    ``reduction="frame"``; over each flattened utterance when
    ``reduction="utterance"``. ``mse`` / ``mae``: mean over all entries.
    """
    E_ref, E_hat = _as_tensor(E_ref), _as_tensor(E_hat)
    if E_ref.shape != E_hat.shape:
        raise ShapeError(f"representation shapes {E_ref.shape} and {E_hat.shape} differ")
    if variant == "mse":
        return ad.mse_mean(E_hat, E_ref)
    if variant == "mae":
        return ad.l1_mean(E_hat, E_ref)
    if variant != "cosine":
        raise InvalidConfigError(f"unknown SSL loss variant {variant!r}; expected one of {SSL_VARIANTS}")
    if reduction == "utterance":
        lead = E_ref.shape[:-2]
        E_ref = ad.reshape(E_ref, lead + (1, -1))
        E_hat = ad.reshape(E_hat, lead + (1, -1))
    elif reduction != "frame":
        raise InvalidConfigError(f"unknown reduction {reduction!r}")
    n_ref = ad.l2_norm(E_ref)
    n_hat = ad.l2_norm(E_hat)
    if np.any(n_ref.data == 0) or np.any(n_hat.data == 0):
        raise DegenerateInputError("zero-norm representation frame in cosine SSL loss")
    cos = ad.dot(E_ref, E_hat) / (n_ref * n_hat)
    return 1.0 - ad.mean(cos)


# ---------------------------------------------------------------------------
# combined objective
# ---------------------------------------------------------------------------


def total_generator_loss(parts, w: LossWeights = LossWeights()):
    """J_adv + l_mel*J_mel + l_fm*J_fm_s + l_fm*J_fm_t + l_ssl*J_ssl.

    ``parts`` is a LossReport or a mapping with keys ``j_adv``, ``j_mel``,
    ``j_fm_s`` and optionally ``j_fm_t``, ``j_ssl`` (floats or tensors); a
    missing or None term is left out, which gives the pre-training objective.
    """
    if isinstance(parts, LossReport):
        parts = parts.to_dict()
    get = parts.get
    for key in ("j_adv", "j_mel", "j_fm_s", "j_fm_t", "j_ssl"):
        v = get(key)
        if v is None:
            continue
        val = v.data if isinstance(v, ad.Tensor) else v
        if not np.all(np.isfinite(val)):
            raise ContractError(f"{key} is not finite")
    total = get("j_adv") + w.lambda_mel * get("j_mel") + w.lambda_fm * get("j_fm_s")
    if get("j_fm_t") is not None:
        total = total + w.lambda_fm * get("j_fm_t")
    if get("j_ssl") is not None:
        total = total + w.lambda_ssl * get("j_ssl")
    return total
