"""Two-stage training: adversarial pre-training, then teacher/SSL fine-tuning.

Stage 1 (and the non-causal teacher) minimise
``J_adv + l_mel*J_mel + l_fm*J_fm_s`` against a freshly trained student
discriminator bank. Stage 2 keeps those terms and adds teacher-bank feature
matching and SSL similarity, with the teacher generator, teacher bank and
SSL encoder frozen.

Every step alternates one discriminator update and one generator update on
a batch of random crops.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .discriminators import DiscriminatorBank, DiscriminatorBankConfig, build_bank
from .errors import DivergenceError, InvalidConfigError, TooShortError
from .frontend import FrontendConfig, wav2mel_batch
from .generator import Generator, GeneratorConfig
from .losses import (
    SSL_VARIANTS,
    DifferentiableWav2Mel,
    LossReport,
    LossWeights,
    adv_loss_discriminator,
    adv_loss_generator,
    feature_matching,
    mel_l1,
    ssl_loss,
    total_generator_loss,
)
from .ssl_encoder import SslEncoder
from .weights import checksum, load_weights, save_weights

log = logging.getLogger(__name__)

TARGETS = ("ground_truth", "teacher_output")
DEFAULT_LR = {"pretrain": 1e-4, "finetune": 3e-4}

# Preset for single-CPU runs. 4096-sample crops in batches of 2 keep a step
# under a second; a 0.05 init std gives the untrained generator an output
# loud enough that its log-Mel clears the clamp floor, otherwise the Mel term
# has no gradient at step 0.
DESK_WEIGHT_STD = 0.05
DESK_SEGMENT_LENGTH = 4096
DESK_BATCH_SIZE = 2

# background noise of the toy corpus, about 30 dB below the harmonic part
TOY_NOISE_STD = 0.01


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "pretrain"
    steps: int = 2000
    learning_rate: float | None = None
    betas: tuple[float, float] = (0.8, 0.99)
    weight_decay: float = 0.0
    lr_decay: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    ssl_variant: str = "cosine"
    ssl_reduction: str = "frame"
    ssl_target: str = "ground_truth"
    ts_target: str = "teacher_output"
    seed: int = 0
    segment_length: int = 8192
    batch_size: int = 4

    def __post_init__(self):
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", LossWeights(**self.weights))
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.learning_rate is None:
            if self.stage not in DEFAULT_LR:
                raise InvalidConfigError(f"unknown stage {self.stage!r}")
            object.__setattr__(self, "learning_rate", DEFAULT_LR[self.stage])
        if self.stage not in DEFAULT_LR:
            raise InvalidConfigError(f"unknown stage {self.stage!r}")
        if self.steps <= 0 or self.learning_rate <= 0:
            raise InvalidConfigError("steps and learning_rate must be positive")
        if self.ssl_variant not in SSL_VARIANTS:
            raise InvalidConfigError(f"ssl_variant must be one of {SSL_VARIANTS}")
        if self.ssl_target not in TARGETS or self.ts_target not in TARGETS:
            raise InvalidConfigError(f"targets must be one of {TARGETS}")
        if self.batch_size < 1 or self.segment_length < 1:
            raise InvalidConfigError("batch_size and segment_length must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def desk_config(**overrides) -> "TrainConfig":
    """TrainConfig with the single-CPU crop and batch sizes."""
    kw = {"segment_length": DESK_SEGMENT_LENGTH, "batch_size": DESK_BATCH_SIZE, **overrides}
    return TrainConfig(**kw)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    utterances: list[np.ndarray]
    sample_rate_hz: int = 16000

    def __len__(self) -> int:
        return len(self.utterances)


def make_toy_dataset(
    seed: int, n_utterances: int, duration_s: float, sample_rate_hz: int = 16000, noise_std: float = TOY_NOISE_STD
) -> Dataset:
    """Synthetic harmonic utterances: 2-4 harmonics of an f0 in [80, 300] Hz.

    Each harmonic gets a random amplitude and phase, the sum is shaped by a
    random attack/decay envelope with a slow tremolo, white background noise
    of ``noise_std`` is added and the result is peak-normalised to 0.9.

    Without the noise floor most log-Mel bands of a pure harmonic signal sit on
    the clamp floor, and the Mel loss gradient (1/energy there) drowns every
    other training term.
    """
    if duration_s < 0.2:
        raise InvalidConfigError(f"duration must be >= 0.2 s, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    utts = []
    for _ in range(n_utterances):
        f0 = rng.uniform(80.0, 300.0)
        n_harm = int(rng.integers(2, 5))
        x = np.zeros(n)
        for h in range(1, n_harm + 1):
            x += rng.uniform(0.2, 1.0) / h * np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi))
        attack = rng.uniform(0.01, 0.05)
        decay = rng.uniform(0.05, 0.2)
        env = np.minimum(1.0, t / attack) * np.minimum(1.0, (duration_s - t) / decay)
        env *= 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(1.0, 5.0) * t)
        x *= np.clip(env, 0.0, None)
        x *= 0.9 / np.max(np.abs(x))
        if noise_std > 0:
            x += rng.normal(0.0, noise_std, n)
            x *= 0.9 / np.max(np.abs(x))
        utts.append(x.astype(np.float32))
    return Dataset(utts, sample_rate_hz)


def load_wav_dir(path, sample_rate_hz: int = 16000) -> Dataset:
    from .io import read_wav

    files = sorted(Path(path).glob("*.wav"))
    if not files:
        raise TooShortError(f"no .wav files in {path}")
    return Dataset([read_wav(f, sample_rate_hz).samples.astype(np.float32) for f in files], sample_rate_hz)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction; decoupled weight decay when ``weight_decay > 0``."""

    def __init__(self, params: dict[str, ad.Tensor], lr: float, betas=(0.8, 0.99), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                upd = upd + self.weight_decay * p.data
            p.data -= self.lr * upd

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.m.{k}": v for k, v in self.m.items()}
        out.update({f"{prefix}.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, tensors: dict, prefix: str, t: int) -> None:
        for k in self.params:
            self.m[k] = np.array(tensors[f"{prefix}.m.{k}"], dtype=self.m[k].dtype)
            self.v[k] = np.array(tensors[f"{prefix}.v.{k}"], dtype=self.v[k].dtype)
        self.t = t


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------


def params_checksum(params: dict[str, ad.Tensor]) -> str:
    return checksum({k: v.data for k, v in params.items()})


class Trainer:
    """Holds models, optimisers and the batch RNG of one training run."""

    def __init__(
        self,
        generator: Generator,
        bank: DiscriminatorBank,
        cfg: TrainConfig,
        dataset: Dataset,
        frontend: FrontendConfig = FrontendConfig(),
        teacher: Generator | None = None,
        teacher_bank: DiscriminatorBank | None = None,
        encoder: SslEncoder | None = None,
    ):
        if not dataset.utterances:
            raise InvalidConfigError("empty dataset")
        if generator.config.hop_length != frontend.frame_shift:
            raise InvalidConfigError("generator stride product does not match the front-end frame shift")
        if cfg.segment_length < frontend.window_len + frontend.frame_shift * 4:
            raise InvalidConfigError("segment too short for the front-end window")
        self.generator = generator
        self.bank = bank
        self.cfg = cfg
        self.dataset = dataset
        self.frontend = frontend
        self.teacher = teacher
        self.teacher_bank = teacher_bank
        self.encoder = encoder
        if cfg.stage == "finetune":
            if teacher is None or teacher_bank is None or encoder is None:
                raise InvalidConfigError("fine-tuning needs a teacher, a teacher bank and an SSL encoder")
            if teacher.config.stride_setup != generator.config.stride_setup:
                raise InvalidConfigError("teacher and student stride setups differ")
            for p in teacher.parameters() + teacher_bank.parameters():
                p.requires_grad = False
        self.mel_fn = DifferentiableWav2Mel(frontend, dtype=generator.dtype)
        self.rng = np.random.default_rng(cfg.seed)
        self.opt_g = Adam(generator.params, cfg.learning_rate, cfg.betas, weight_decay=cfg.weight_decay)
        self.opt_d = Adam(bank.params, cfg.learning_rate, cfg.betas, weight_decay=cfg.weight_decay)
        self.step_count = 0
        self.epoch_steps = max(1, math.ceil(len(dataset) / cfg.batch_size))

    # -- data ---------------------------------------------------------------
    def sample_batch(self) -> np.ndarray:
        seg = self.cfg.segment_length
        out = np.zeros((self.cfg.batch_size, seg), dtype=self.generator.dtype)
        for b in range(self.cfg.batch_size):
            utt = self.dataset.utterances[int(self.rng.integers(len(self.dataset)))]
            if utt.size <= seg:
                out[b, : utt.size] = utt
            else:
                start = int(self.rng.integers(utt.size - seg + 1))
                out[b] = utt[start : start + seg]
        return out

    def prepare(self, waves: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Conditioning mel ``(B, M, T)`` and the aligned ``T*hop``-sample target."""
        mel = wav2mel_batch(waves, self.frontend).astype(self.generator.dtype)
        T = mel.shape[1]
        return np.ascontiguousarray(mel.transpose(0, 2, 1)), np.ascontiguousarray(waves[:, : T * self.frontend.frame_shift])

    def current_lr(self) -> float:
        return self.cfg.learning_rate * self.cfg.lr_decay ** (self.step_count // self.epoch_steps)

    # -- losses -------------------------------------------------------------
    def generator_terms(self, mel_in: np.ndarray, target: np.ndarray, s_hat: ad.Tensor) -> dict[str, ad.Tensor]:
        """All generator-side loss terms for one batch (graph through ``s_hat``)."""
        cfg = self.cfg
        real = ad.Tensor(target)
        with ad.no_grad():
            d_real = self.bank(real)
            target_mel = ad.Tensor(wav2mel_batch(target, self.frontend).astype(target.dtype))
        d_fake = self.bank(s_hat)
        terms = {
            "j_adv": adv_loss_generator(d_fake.scores),
            "j_mel": mel_l1(target_mel, self.mel_fn(s_hat)),
            "j_fm_s": feature_matching(d_real, d_fake),
        }
        if cfg.stage == "finetune":
            with ad.no_grad():
                s_bar = self.teacher(ad.Tensor(mel_in))
                ts_ref = s_bar if cfg.ts_target == "teacher_output" else real
                ssl_ref = s_bar if cfg.ssl_target == "teacher_output" else real
                f_ref = self.teacher_bank(ts_ref)
                e_ref = self.encoder(ssl_ref)
            terms["j_fm_t"] = feature_matching(f_ref, self.teacher_bank(s_hat))
            terms["j_ssl"] = ssl_loss(e_ref, self.encoder(s_hat), cfg.ssl_variant, cfg.ssl_reduction)
        return terms

    def step(self) -> dict:
        cfg = self.cfg
        lr = self.current_lr()
        self.opt_g.lr = self.opt_d.lr = lr
        mel_in, target = self.prepare(self.sample_batch())
        s_hat = self.generator(ad.Tensor(mel_in))

        # discriminator update
        self.bank.set_requires_grad(True)
        d_real = self.bank(ad.Tensor(target))
        d_fake = self.bank(ad.Tensor(s_hat.data))
        j_disc = adv_loss_discriminator(d_real.scores, d_fake.scores)
        _check_finite("j_disc", j_disc)
        self.opt_d.zero_grad()
        ad.backward(j_disc)
        self.opt_d.step()

        # generator update
        self.bank.set_requires_grad(False)
        terms = self.generator_terms(mel_in, target, s_hat)
        for k, v in terms.items():
            _check_finite(k, v)
        j_gen = total_generator_loss(terms, cfg.weights)
        _check_finite("j_gen", j_gen)
        self.opt_g.zero_grad()
        ad.backward(j_gen)
        self.opt_g.step()
        self.bank.set_requires_grad(True)

        self.step_count += 1
        report = LossReport(
            j_adv=terms["j_adv"].item(),
            j_mel=terms["j_mel"].item(),
            j_fm_s=terms["j_fm_s"].item(),
            j_fm_t=terms["j_fm_t"].item() if "j_fm_t" in terms else None,
            j_ssl=terms["j_ssl"].item() if "j_ssl" in terms else None,
            j_gen=j_gen.item(),
        )
        return {"step": self.step_count, **report.to_dict(), "j_disc": j_disc.item(), "lr": lr}

    def run(self, n_steps: int | None = None, log_path=None, callback: Callable[[dict], None] | None = None) -> list[dict]:
        n_steps = self.cfg.steps - self.step_count if n_steps is None else n_steps
        records = []
        fh = open(log_path, "a") if log_path else None
        try:
            for _ in range(n_steps):
                rec = self.step()
                records.append(rec)
                if fh:
                    fh.write(json.dumps(rec) + "\n")
                if callback:
                    callback(rec)
                if rec["step"] % 100 == 0:
                    log.info("step %d  j_gen %.4f  j_mel %.4f", rec["step"], rec["j_gen"], rec["j_mel"])
        finally:
            if fh:
                fh.close()
        return records

    # -- held-out evaluation -------------------------------------------------
    def evaluate(self, waves: np.ndarray) -> dict:
        """Generator-side loss terms on fixed ``(B, L)`` waves, no updates."""
        mel_in, target = self.prepare(np.asarray(waves, dtype=self.generator.dtype))
        with ad.no_grad():
            s_hat = self.generator(ad.Tensor(mel_in))
            terms = self.generator_terms(mel_in, target, s_hat)
        return {k: v.item() for k, v in terms.items()}

    # -- checkpoints -------------------------------------------------------
    def save(self, path) -> None:
        tensors = {f"student.{k}": v.data for k, v in self.generator.params.items()}
        tensors.update({f"student_bank.{k}": v.data for k, v in self.bank.params.items()})
        tensors.update(self.opt_g.state("opt_g"))
        tensors.update(self.opt_d.state("opt_d"))
        meta = {
            "kind": "checkpoint",
            "step": self.step_count,
            "opt_g_t": self.opt_g.t,
            "opt_d_t": self.opt_d.t,
            "rng_state": self.rng.bit_generator.state,
            "generator_config": self.generator.config.to_dict(),
            "bank_config": self.bank.config.to_dict(),
            "train_config": self.cfg.to_dict(),
            "frontend_config": self.frontend.to_dict(),
        }
        save_weights(path, tensors, _jsonable(meta))

    def load_state(self, path) -> None:
        """Restore parameters, optimiser state, step and RNG from a checkpoint."""
        tensors, meta = load_weights(path)
        for k, p in self.generator.params.items():
            p.data = np.array(tensors[f"student.{k}"], dtype=p.dtype)
        for k, p in self.bank.params.items():
            p.data = np.array(tensors[f"student_bank.{k}"], dtype=p.dtype)
        self.opt_g.load_state(tensors, "opt_g", meta["opt_g_t"])
        self.opt_d.load_state(tensors, "opt_d", meta["opt_d_t"])
        self.step_count = meta["step"]
        self.rng.bit_generator.state = _rng_state(meta["rng_state"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _rng_state(state: dict) -> dict:
    return state


def _check_finite(name: str, t: ad.Tensor) -> None:
    if not np.all(np.isfinite(t.data)):
        raise DivergenceError(f"{name} became non-finite")


def load_checkpoint(path, dtype=np.float32) -> tuple[Generator, DiscriminatorBank, dict]:
    """Student generator and bank of a checkpoint, plus its meta."""
    tensors, meta = load_weights(path)
    gcfg = GeneratorConfig.from_dict(meta["generator_config"])
    g = Generator.from_state(gcfg, {k[len("student.") :]: v for k, v in tensors.items() if k.startswith("student.")}, dtype)
    bank = build_bank(DiscriminatorBankConfig.from_dict(meta["bank_config"]), dtype=dtype)
    bank.load_state({k[len("student_bank.") :]: v for k, v in tensors.items() if k.startswith("student_bank.")})
    return g, bank, meta


def resume(path, dataset: Dataset, **models) -> Trainer:
    """Rebuild a trainer from a checkpoint; fine-tuning runs need teacher/teacher_bank/encoder."""
    g, bank, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["train_config"])
    tr = Trainer(g, bank, cfg, dataset, FrontendConfig.from_dict(meta["frontend_config"]), **models)
    tr.load_state(path)
    return tr


# ---------------------------------------------------------------------------
# protocol entry points
# ---------------------------------------------------------------------------


def stage1_pretrain(student: Generator, student_bank: DiscriminatorBank, dataset: Dataset, cfg: TrainConfig, frontend: FrontendConfig = FrontendConfig(), log_path=None):
    """Adversarial pre-training of the causal student. Returns ``(student, log)``."""
    if not student.causal:
        raise InvalidConfigError("stage 1 trains the causal student; got a non-causal generator")
    cfg = replace(cfg, stage="pretrain") if cfg.stage != "pretrain" else cfg
    tr = Trainer(student, student_bank, cfg, dataset, frontend)
    return student, tr.run(log_path=log_path)


def train_teacher(
    teacher: Generator,
    teacher_bank: DiscriminatorBank,
    dataset: Dataset,
    cfg: TrainConfig,
    student_config: GeneratorConfig | None = None,
    frontend: FrontendConfig = FrontendConfig(),
    out_path=None,
    log_path=None,
):
    """Same protocol as stage 1 for the non-causal teacher. Returns ``(teacher, teacher_bank, log)``."""
    if teacher.causal:
        raise InvalidConfigError("the teacher must be non-causal")
    if student_config is not None and student_config.stride_setup != teacher.config.stride_setup:
        raise InvalidConfigError("teacher stride setup must match the student's")
    cfg = replace(cfg, stage="pretrain") if cfg.stage != "pretrain" else cfg
    tr = Trainer(teacher, teacher_bank, cfg, dataset, frontend)
    records = tr.run(log_path=log_path)
    if out_path is not None:
        save_teacher(out_path, teacher, teacher_bank)
    return teacher, teacher_bank, records


def save_teacher(path, teacher: Generator, teacher_bank: DiscriminatorBank) -> None:
    tensors = {f"teacher.{k}": v.data for k, v in teacher.params.items()}
    tensors.update({f"teacher_bank.{k}": v.data for k, v in teacher_bank.params.items()})
    save_weights(
        path,
        tensors,
        {"kind": "teacher", "generator_config": teacher.config.to_dict(), "bank_config": teacher_bank.config.to_dict()},
    )


def load_teacher(path, dtype=np.float32) -> tuple[Generator, DiscriminatorBank]:
    tensors, meta = load_weights(path)
    g = Generator.from_state(
        GeneratorConfig.from_dict(meta["generator_config"]),
        {k[len("teacher.") :]: v for k, v in tensors.items() if k.startswith("teacher.")},
        dtype,
    )
    bank = build_bank(DiscriminatorBankConfig.from_dict(meta["bank_config"]), dtype=dtype)
    bank.load_state({k[len("teacher_bank.") :]: v for k, v in tensors.items() if k.startswith("teacher_bank.")})
    return g, bank


def stage2_finetune(
    student: Generator,
    student_bank: DiscriminatorBank,
    teacher,
    teacher_bank: DiscriminatorBank | None,
    encoder: SslEncoder,
    dataset: Dataset,
    cfg: TrainConfig,
    frontend: FrontendConfig = FrontendConfig(),
    log_path=None,
    heldout: np.ndarray | None = None,
    eval_steps: Iterable[int] = (),
):
    """Fine-tune the student with teacher feature matching and SSL similarity.

    ``teacher`` is a Generator or a teacher checkpoint path (then the teacher
    bank comes from the same file). Returns ``(student, log, evals)`` where
    ``evals`` maps each step in ``eval_steps`` to held-out loss terms.
    """
    if not student.causal:
        raise InvalidConfigError("the student must be causal")
    if not isinstance(teacher, Generator):
        teacher, ckpt_bank = load_teacher(teacher, dtype=student.dtype)
        teacher_bank = teacher_bank or ckpt_bank
    cfg = replace(cfg, stage="finetune") if cfg.stage != "finetune" else cfg
    tr = Trainer(student, student_bank, cfg, dataset, frontend, teacher=teacher, teacher_bank=teacher_bank, encoder=encoder)
    evals = {}
    eval_steps = set(eval_steps)

    def cb(rec):
        if heldout is not None and rec["step"] in eval_steps:
            evals[rec["step"]] = tr.evaluate(heldout)

    records = tr.run(log_path=log_path, callback=cb)
    return student, records, evals
