import json

import numpy as np
import pytest

from streamvoc.discriminators import DiscriminatorBankConfig, build_bank
from streamvoc.errors import DivergenceError, InvalidConfigError
from streamvoc.generator import GeneratorConfig, build_generator
from streamvoc.losses import LossWeights, total_generator_loss
from streamvoc.ssl_encoder import load_ssl_encoder
from streamvoc.trainer import (
    Adam,
    Trainer,
    TrainConfig,
    desk_config,
    load_checkpoint,
    load_teacher,
    make_toy_dataset,
    params_checksum,
    resume,
    save_teacher,
    stage1_pretrain,
    stage2_finetune,
    train_teacher,
)
from streamvoc import autodiff as ad

BANK = DiscriminatorBankConfig(periods=(2,), stft_resolutions=((256, 64, 256),))


def tiny_gen(causal=True, seed=0):
    return build_generator(GeneratorConfig((8, 4, 2, 2), causal=causal, base_channels=8), seed=seed, weight_std=0.05)


def tiny_cfg(**kw):
    return TrainConfig(**{"segment_length": 1280, "batch_size": 2, "steps": 4, **kw})


@pytest.fixture(scope="module")
def data():
    return make_toy_dataset(0, 3, 0.3)


@pytest.fixture(scope="module")
def teacher_file(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("t") / "teacher.svws"
    train_teacher(tiny_gen(False, 5), build_bank(BANK, seed=6), data, tiny_cfg(steps=2), out_path=path)
    return path


def finetune_trainer(data, teacher_file, **kw):
    teacher, tbank = load_teacher(teacher_file)
    return Trainer(
        tiny_gen(), build_bank(BANK, seed=1), tiny_cfg(stage="finetune", **kw), data,
        teacher=teacher, teacher_bank=tbank, encoder=load_ssl_encoder(),
    )


# -- config -----------------------------------------------------------------


def test_config_defaults():
    c = TrainConfig()
    assert c.learning_rate == 1e-4 and c.betas == (0.8, 0.99) and c.lr_decay == 0.999
    assert TrainConfig(stage="finetune").learning_rate == 3e-4
    assert c.weights == LossWeights(45.0, 2.0, 4.0)
    d = desk_config()
    assert (d.segment_length, d.batch_size) == (4096, 2)


@pytest.mark.parametrize(
    "kw", [dict(stage="x"), dict(steps=0), dict(ssl_variant="huber"), dict(ssl_target="teacher"), dict(batch_size=0)]
)
def test_config_validation(kw):
    with pytest.raises(InvalidConfigError):
        TrainConfig(**kw)


def test_config_dict_round_trip():
    c = TrainConfig(stage="finetune", weights={"lambda_ssl": 1.0})
    assert TrainConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


# -- data -------------------------------------------------------------------


def test_toy_dataset_properties():
    d = make_toy_dataset(3, 10, 1.0)
    assert len(d) == 10 and d.sample_rate_hz == 16000
    for u in d.utterances:
        assert u.size == 16000 and u.dtype == np.float32
        assert np.max(np.abs(u)) == pytest.approx(0.9, abs=1e-6)
    e = make_toy_dataset(3, 10, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(d.utterances, e.utterances))
    with pytest.raises(InvalidConfigError):
        make_toy_dataset(0, 2, 0.1)


def test_toy_dataset_f0_in_range():
    u = make_toy_dataset(1, 1, 1.0).utterances[0]
    spec = np.abs(np.fft.rfft(u))
    peak = np.argmax(spec[1:]) + 1  # 1 Hz bins
    assert 80 <= peak <= 4 * 300


# -- optimiser --------------------------------------------------------------


def test_adam_first_step_is_lr_times_sign():
    p = ad.Tensor(np.array([1.0, -2.0, 3.0], np.float32), requires_grad=True)
    p.grad = np.array([0.5, -4.0, 0.0], np.float32)
    opt = Adam({"p": p}, lr=0.1)
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9, 3.0], atol=1e-6)


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(5, 4))
    p = ad.Tensor(np.zeros(4, np.float64), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01, betas=(0.8, 0.99))
    m = v = np.zeros(4)
    x = np.zeros(4)
    for t, g in enumerate(grads, 1):
        p.grad = g.copy()
        opt.step()
        m = 0.8 * m + 0.2 * g
        v = 0.99 * v + 0.01 * g * g
        x = x - 0.01 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-8)
    np.testing.assert_allclose(p.data, x, rtol=1e-6)


# -- trainer ----------------------------------------------------------------


def test_constructor_checks(data):
    with pytest.raises(InvalidConfigError):
        Trainer(build_generator(GeneratorConfig((8, 4, 2)), hop_length=64), build_bank(BANK), tiny_cfg(), data)
    with pytest.raises(InvalidConfigError):
        Trainer(tiny_gen(), build_bank(BANK), tiny_cfg(segment_length=600), data)
    with pytest.raises(InvalidConfigError):
        Trainer(tiny_gen(), build_bank(BANK), tiny_cfg(stage="finetune"), data)


def test_step_bookkeeping(data):
    tr = Trainer(tiny_gen(), build_bank(BANK, seed=1), tiny_cfg(), data)
    rec = tr.step()
    assert rec["step"] == 1 and rec["j_fm_t"] is None and rec["j_ssl"] is None
    assert rec["j_gen"] == pytest.approx(total_generator_loss(rec), abs=1e-6 * max(1, rec["j_gen"]))


def test_lr_decays_per_epoch(data):
    tr = Trainer(tiny_gen(), build_bank(BANK, seed=1), tiny_cfg(lr_decay=0.5), data)
    assert tr.epoch_steps == 2
    lrs = [r["lr"] for r in tr.run(5)]
    assert lrs == pytest.approx([1e-4, 1e-4, 5e-5, 5e-5, 2.5e-5])


def test_deterministic_per_seed(data, tmp_path):
    a = stage1_pretrain(tiny_gen(), build_bank(BANK, seed=1), data, tiny_cfg())[1]
    b = stage1_pretrain(tiny_gen(), build_bank(BANK, seed=1), data, tiny_cfg())[1]
    c = stage1_pretrain(tiny_gen(), build_bank(BANK, seed=1), data, tiny_cfg(seed=1))[1]
    assert a == b
    assert a != c


def test_stage1_requires_causal(data):
    with pytest.raises(InvalidConfigError):
        stage1_pretrain(tiny_gen(causal=False), build_bank(BANK), data, tiny_cfg())


def test_teacher_checks(data):
    with pytest.raises(InvalidConfigError):
        train_teacher(tiny_gen(causal=True), build_bank(BANK), data, tiny_cfg())
    with pytest.raises(InvalidConfigError):
        train_teacher(tiny_gen(False), build_bank(BANK), data, tiny_cfg(), student_config=GeneratorConfig((4, 2, 2, 2, 2, 2)))


def test_log_file(data, tmp_path):
    tr = Trainer(tiny_gen(), build_bank(BANK, seed=1), tiny_cfg(), data)
    tr.run(3, log_path=tmp_path / "log.jsonl")
    lines = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [l["step"] for l in lines] == [1, 2, 3]


def test_checkpoint_round_trip_bit_exact(data, tmp_path):
    tr = Trainer(tiny_gen(), build_bank(BANK, seed=1), tiny_cfg(), data)
    tr.run(2)
    tr.save(tmp_path / "c.svws")
    g, bank, meta = load_checkpoint(tmp_path / "c.svws")
    assert meta["step"] == 2 and meta["kind"] == "checkpoint"
    assert params_checksum(g.params) == params_checksum(tr.generator.params)
    assert params_checksum(bank.params) == params_checksum(tr.bank.params)


def test_resume_equals_uninterrupted(data, tmp_path):
    full = Trainer(tiny_gen(), build_bank(BANK, seed=1), tiny_cfg(), data).run(4)
    first = Trainer(tiny_gen(), build_bank(BANK, seed=1), tiny_cfg(), data)
    head = first.run(2)
    first.save(tmp_path / "k.svws")
    tail = resume(tmp_path / "k.svws", data).run()
    assert head + tail == full


def test_divergence_guard(data):
    tr = Trainer(tiny_gen(), build_bank(BANK, seed=1), tiny_cfg(), data)
    tr.generator.params["input_conv.weight"].data[:] = np.nan
    with pytest.raises(DivergenceError):
        tr.step()


def test_teacher_file_round_trip(tmp_path):
    g, bank = tiny_gen(False), build_bank(BANK, seed=2)
    save_teacher(tmp_path / "t.svws", g, bank)
    g2, bank2 = load_teacher(tmp_path / "t.svws")
    assert params_checksum(g2.params) == params_checksum(g.params)
    assert params_checksum(bank2.params) == params_checksum(bank.params)


def test_finetune_logs_five_terms_and_freezes(data, teacher_file):
    tr = finetune_trainer(data, teacher_file)
    before = (params_checksum(tr.teacher.params), params_checksum(tr.teacher_bank.params), tr.encoder.checksum())
    recs = tr.run(2)
    for r in recs:
        for k in ("j_adv", "j_mel", "j_fm_s", "j_fm_t", "j_ssl"):
            assert np.isfinite(r[k])
        assert r["j_gen"] == pytest.approx(total_generator_loss(r), rel=1e-6)
    assert (params_checksum(tr.teacher.params), params_checksum(tr.teacher_bank.params), tr.encoder.checksum()) == before
    assert recs[0]["lr"] == 3e-4


def test_finetune_resume(data, teacher_file, tmp_path):
    full = finetune_trainer(data, teacher_file).run(3)
    tr = finetune_trainer(data, teacher_file)
    head = tr.run(1)
    tr.save(tmp_path / "f.svws")
    teacher, tbank = load_teacher(teacher_file)
    tail = resume(tmp_path / "f.svws", data, teacher=teacher, teacher_bank=tbank, encoder=load_ssl_encoder()).run(2)
    assert head + tail == full


@pytest.mark.parametrize(
    "kw",
    [
        dict(ssl_variant="mse"),
        dict(ssl_variant="mae"),
        dict(ssl_target="teacher_output"),
        dict(ts_target="ground_truth"),
    ],
)
def test_ablation_configs_run(data, teacher_file, kw):
    base = finetune_trainer(data, teacher_file).run(1)[0]
    rec = finetune_trainer(data, teacher_file, **kw).run(1)[0]
    changed = "j_ssl" if "ssl_variant" in kw or "ssl_target" in kw else "j_fm_t"
    assert rec[changed] != base[changed]


def test_stage2_entry_point_with_path(data, teacher_file):
    held = np.stack([u[:1280] for u in data.utterances[:2]])
    student, recs, evals = stage2_finetune(
        tiny_gen(), build_bank(BANK, seed=1), teacher_file, None, load_ssl_encoder(), data,
        tiny_cfg(steps=2), heldout=held, eval_steps=(1, 2),
    )
    assert len(recs) == 2 and set(evals) == {1, 2}
    assert set(evals[1]) == {"j_adv", "j_mel", "j_fm_s", "j_fm_t", "j_ssl"}
