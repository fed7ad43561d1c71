"""Central finite-difference gradient checks for the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    worst: tuple[str, int, float, float] | None = None  # (param, flat index, analytic, numeric)
    per_param: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def rel_err(analytic: float, numeric: float, tiny: float = 1e-7) -> float:
    """|a - n| / max(|a|, |n|, tiny); ``tiny`` keeps exact zeros from blowing up."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), tiny)


def grad_check(
    loss_fn: Callable[[], ad.Tensor],
    params: dict[str, ad.Tensor] | Sequence[ad.Tensor],
    eps: float = 1e-5,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    tiny: float = 1e-7,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call. Parameters must be float64; ``n_samples`` entries are checked
    (all entries when None), drawn uniformly over the union of parameters.
    """
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ad.ContractError(f"grad_check needs float64 parameters, {name} is {p.dtype}")
        p.grad = None
        p.requires_grad = True
    loss = loss_fn()
    ad.backward(loss)
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    index = [(k, i) for k, p in params.items() for i in range(p.data.size)]
    if n_samples is not None and n_samples < len(index):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(index), size=n_samples, replace=False)
        index = [index[i] for i in sorted(pick)]

    report = GradCheckReport(max_rel_err=0.0, n_checked=0)
    with ad.no_grad():
        for name, i in index:
            flat = params[name].data.reshape(-1)
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            a = float(analytic[name].reshape(-1)[i])
            err = rel_err(a, num, tiny)
            report.n_checked += 1
            report.per_param[name] = max(report.per_param.get(name, 0.0), err)
            if err >= report.max_rel_err:
                report.max_rel_err = err
                report.worst = (name, i, a, num)
    return report


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------


def _away_from_kinks(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def _projected(out: ad.Tensor, proj: np.ndarray) -> ad.Tensor:
    # random projection so every output entry contributes with its own weight
    return ad.tsum(out * ad.Tensor(proj))


def op_cases(seed: int = 0) -> list[tuple[str, Callable[[], ad.Tensor], dict[str, ad.Tensor]]]:
    """One (name, loss_fn, params) case per differentiable op, all float64."""
    rng = np.random.default_rng(seed)

    def T(a):
        return ad.Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)

    cases = []

    def unary(name, fn, x):
        out_shape = fn(x).shape
        proj = rng.normal(size=out_shape)
        cases.append((name, lambda: _projected(fn(x), proj), {"x": x}))

    def binary(name, fn, a, b):
        proj = rng.normal(size=fn(a, b).shape)
        cases.append((name, lambda: _projected(fn(a, b), proj), {"a": a, "b": b}))

    binary("add", ad.add, T(rng.normal(size=(3, 4))), T(rng.normal(size=(4,))))
    binary("sub", ad.sub, T(rng.normal(size=(3, 4))), T(rng.normal(size=(3, 1))))
    binary("mul", ad.mul, T(rng.normal(size=(3, 4))), T(rng.normal(size=(3, 4))))
    binary("div", ad.div, T(rng.normal(size=(3, 4))), T(rng.uniform(0.5, 2.0, size=(3, 4))))
    binary("matmul", ad.matmul, T(rng.normal(size=(2, 3, 4))), T(rng.normal(size=(4, 5))))
    binary("magnitude", ad.magnitude, T(rng.normal(size=(3, 4))), T(rng.normal(size=(3, 4))))
    unary("power", lambda x: ad.power(x, 3.0), T(rng.normal(size=(3, 4))))
    unary("exp", ad.exp, T(rng.normal(size=(3, 4))))
    unary("log", ad.log, T(rng.uniform(0.5, 2.0, size=(3, 4))))
    unary("sqrt", ad.sqrt, T(rng.uniform(0.5, 2.0, size=(3, 4))))
    unary("tanh", ad.tanh, T(rng.normal(size=(3, 4))))
    unary("sin", ad.sin, T(rng.normal(size=(3, 4))))
    unary("abs", ad.abs_, T(_away_from_kinks(rng, (3, 4))))
    unary("clamp_min", lambda x: ad.clamp_min(x, 0.0), T(_away_from_kinks(rng, (3, 4))))
    unary("leaky_relu", lambda x: ad.leaky_relu(x, 0.1), T(_away_from_kinks(rng, (3, 4))))
    unary("gelu", ad.gelu, T(rng.normal(size=(3, 4))))
    unary("sum", lambda x: ad.tsum(x, axis=1), T(rng.normal(size=(3, 4))))
    unary("mean", lambda x: ad.mean(x, axis=0), T(rng.normal(size=(3, 4))))
    unary("reshape", lambda x: ad.reshape(x, (4, 3)), T(rng.normal(size=(3, 4))))
    unary("transpose", lambda x: ad.transpose(x, (1, 0)), T(rng.normal(size=(3, 4))))
    unary("getitem", lambda x: x[:, 1:3], T(rng.normal(size=(3, 4))))
    unary("pad", lambda x: ad.pad(x, ((1, 0), (0, 2))), T(rng.normal(size=(3, 4))))
    unary("frame", lambda x: ad.frame(x, 6, 2), T(rng.normal(size=(2, 16))))
    unary("frame_uneven", lambda x: ad.frame(x, 5, 3), T(rng.normal(size=(2, 17))))
    binary("concat", lambda a, b: ad.concat([a, b], axis=1), T(rng.normal(size=(2, 3))), T(rng.normal(size=(2, 2))))

    x, a = T(rng.normal(size=(2, 3, 7))), T(rng.uniform(0.5, 2.0, size=(3,)))
    proj = rng.normal(size=(2, 3, 7))
    cases.append(("snake", lambda x=x, a=a, proj=proj: _projected(ad.snake(x, a), proj), {"x": x, "alpha": a}))

    for pad_mode, stride, dil in (("causal", 1, 2), ("same", 1, 1), ("valid", 2, 1)):
        x, w, b = T(rng.normal(size=(2, 3, 11))), T(rng.normal(size=(4, 3, 3))), T(rng.normal(size=(4,)))
        fn = lambda x=x, w=w, b=b, p=pad_mode, s=stride, d=dil: ad.conv1d(x, w, b, stride=s, dilation=d, padding=p)
        proj = rng.normal(size=fn().shape)
        cases.append((f"conv1d_{pad_mode}", lambda fn=fn, proj=proj: _projected(fn(), proj), {"x": x, "w": w, "b": b}))

    for pad_mode in ("causal", "same", "full"):
        x, w, b = T(rng.normal(size=(2, 3, 5))), T(rng.normal(size=(3, 2, 4))), T(rng.normal(size=(2,)))
        fn = lambda x=x, w=w, b=b, p=pad_mode: ad.conv_transpose1d(x, w, b, stride=2, padding=p)
        proj = rng.normal(size=fn().shape)
        cases.append((f"conv_transpose1d_{pad_mode}", lambda fn=fn, proj=proj: _projected(fn(), proj), {"x": x, "w": w, "b": b}))

    x, w, b = T(rng.normal(size=(2, 2, 6, 9))), T(rng.normal(size=(3, 2, 3, 5))), T(rng.normal(size=(3,)))
    fn = lambda x=x, w=w, b=b: ad.conv2d(x, w, b, stride=(1, 2), padding=(1, 2))
    proj = rng.normal(size=fn().shape)
    cases.append(("conv2d", lambda fn=fn, proj=proj: _projected(fn(), proj), {"x": x, "w": w, "b": b}))

    a, b = T(_away_from_kinks(rng, (3, 4))), T(np.zeros((3, 4)))
    cases.append(("l1_mean", lambda a=a, b=b: ad.l1_mean(a, b), {"a": a}))
    a, b = T(rng.normal(size=(3, 4))), T(rng.normal(size=(3, 4)))
    cases.append(("mse_mean", lambda a=a, b=b: ad.mse_mean(a, b), {"a": a, "b": b}))
    cases.append(("dot", lambda a=a, b=b: ad.tsum(ad.dot(a, b) ** 2), {"a": a, "b": b}))
    cases.append(("l2_norm", lambda a=a: ad.tsum(ad.l2_norm(a)), {"a": a}))
    return cases


def composite_case(seed: int = 0, frames: int = 10):
    """Full generator + weighted generator objective (all five terms), float64.

    Returns ``(loss_fn, generator_params)``. Uses a causal (8,4,2,2) student,
    a non-causal teacher, independent student and teacher banks and the
    bundled SSL encoder.
    """
    from .discriminators import build_bank
    from .frontend import FrontendConfig, wav2mel_batch
    from .generator import GeneratorConfig, build_generator
    from .losses import DifferentiableWav2Mel, adv_loss_generator, feature_matching, mel_l1, ssl_loss, total_generator_loss
    from .ssl_encoder import load_ssl_encoder

    rng = np.random.default_rng(seed)
    fe = FrontendConfig()
    dt = np.float64
    student = build_generator(GeneratorConfig((8, 4, 2, 2), causal=True), seed=seed, dtype=dt, weight_std=0.1)
    teacher = build_generator(GeneratorConfig((8, 4, 2, 2), causal=False), seed=seed + 1, dtype=dt, weight_std=0.1)
    bank_s = build_bank(seed=seed + 2, dtype=dt)
    bank_t = build_bank(seed=seed + 3, dtype=dt)
    for p in teacher.parameters() + bank_s.parameters() + bank_t.parameters():
        p.requires_grad = False
    enc = load_ssl_encoder(dtype=dt)
    mel_fn = DifferentiableWav2Mel(fe, dtype=dt)

    n = (frames - 1) * fe.frame_shift + fe.window_len
    t = np.arange(n) / fe.sample_rate_hz
    wave = 0.5 * np.sin(2 * np.pi * 180.0 * t) + 0.05 * rng.normal(size=n)
    mel = wav2mel_batch(wave[None], fe)
    mel_in = ad.Tensor(mel.transpose(0, 2, 1))
    target = ad.Tensor(wave[None, : frames * fe.frame_shift])
    with ad.no_grad():
        s_bar = teacher(mel_in)
        f_real = bank_s(target)
        f_teacher = bank_t(s_bar)
        e_ref = enc(target)
    target_mel = ad.Tensor(wav2mel_batch(target.data, fe))

    def loss_fn():
        s_hat = student(mel_in)
        d_fake = bank_s(s_hat)
        parts = {
            "j_adv": adv_loss_generator(d_fake.scores),
            "j_mel": mel_l1(target_mel, mel_fn(s_hat)),
            "j_fm_s": feature_matching(f_real, d_fake),
            "j_fm_t": feature_matching(f_teacher, bank_t(s_hat)),
            "j_ssl": ssl_loss(e_ref, enc(s_hat)),
        }
        return total_generator_loss(parts)

    return loss_fn, student.params


def run_suite(seed: int = 0, n_composite: int = 200, tol: float = 1e-4) -> dict:
    """Check every op case and the composite; returns a JSON-ready summary."""
    results = {}
    with ad.precision(np.float64):
        for name, fn, params in op_cases(seed):
            r = grad_check(fn, params)
            results[name] = {"max_rel_err": r.max_rel_err, "n_checked": r.n_checked}
        fn, params = composite_case(seed)
        # smaller step: the composite is piecewise smooth (abs, leaky ReLU, clamp) and
        # a 1e-5 step crosses kinks often enough to show up at the 1e-5 level
        r = grad_check(fn, params, eps=1e-6, n_samples=n_composite, rng=np.random.default_rng(seed))
        results["composite"] = {"max_rel_err": r.max_rel_err, "n_checked": r.n_checked, "worst": list(r.worst) if r.worst else None}
    worst = max(v["max_rel_err"] for v in results.values())
    return {"passed": worst < tol, "max_rel_err": worst, "tolerance": tol, "cases": results}
