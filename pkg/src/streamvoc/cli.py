"""Command-line entry point: ``streamvoc <command> ...``.

Errors are printed to stderr as one JSON object
``{"error": kind, "message": ..., "code": n}`` and the process exits with
``code`` (each error class has its own).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .discriminators import DiscriminatorBankConfig, build_bank
from .errors import FormatError, InvalidConfigError, MissingFileError, StreamvocError
from .frontend import FrontendConfig, wav2mel
from .generator import Generator, GeneratorConfig, build_generator
from .io import iter_mel1_frames, quantize_pcm16, read_mel1, read_wav, write_mel1, write_wav
from .trainer import DESK_WEIGHT_STD, desk_config
from .weights import load_weights

log = logging.getLogger("streamvoc")

CONFIG_SECTIONS = ("frontend", "generator", "teacher", "bank", "train", "toy")


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def load_config(path) -> dict:
    """Read and validate a JSON experiment config; missing sections get defaults."""
    if path is None:
        raw = {}
    else:
        p = Path(path)
        if not p.is_file():
            raise MissingFileError(f"no such config file: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise InvalidConfigError(f"{p}: not valid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise InvalidConfigError("config must be a JSON object")
    unknown = set(raw) - set(CONFIG_SECTIONS)
    if unknown:
        raise InvalidConfigError(f"unknown config sections {sorted(unknown)}; allowed {CONFIG_SECTIONS}")

    def build(cls, key, default):
        d = raw.get(key)
        if d is None:
            return default
        try:
            return cls.from_dict(d) if hasattr(cls, "from_dict") else cls(**d)
        except TypeError as e:
            raise InvalidConfigError(f"section {key!r}: {e}") from e

    gen = build(GeneratorConfig, "generator", GeneratorConfig((8, 4, 2, 2), causal=True))
    teacher = build(GeneratorConfig, "teacher", GeneratorConfig(gen.stride_setup, causal=False))
    toy = {"n_utterances": 10, "duration_s": 1.0, "seed": 0, **raw.get("toy", {})}
    return {
        "frontend": build(FrontendConfig, "frontend", FrontendConfig()),
        "generator": gen,
        "teacher": teacher,
        "bank": build(DiscriminatorBankConfig, "bank", DiscriminatorBankConfig()),
        "train": _train_section(raw.get("train")),
        "toy": toy,
    }


def _train_section(d):
    try:
        return desk_config(**(d or {}))
    except TypeError as e:
        raise InvalidConfigError(f"section 'train': {e}") from e


def load_generator(path, dtype=np.float32) -> tuple[Generator, FrontendConfig | None]:
    """Generator from a generator file, a training checkpoint or a teacher file."""
    from .trainer import load_checkpoint, load_teacher

    _, meta = load_weights(_existing(path))
    kind = meta.get("kind")
    fe = FrontendConfig.from_dict(meta["frontend_config"]) if "frontend_config" in meta else None
    if kind == "generator":
        return Generator.load(path, dtype), fe
    if kind == "checkpoint":
        return load_checkpoint(path, dtype)[0], fe
    if kind == "teacher":
        return load_teacher(path, dtype)[0], fe
    raise FormatError(f"{path}: weight file of kind {kind!r} holds no generator")


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"no such file: {p}")
    return p


def _dataset(args, cfg):
    from .trainer import load_wav_dir, make_toy_dataset

    if args.toy:
        t = cfg["toy"]
        return make_toy_dataset(t["seed"], t["n_utterances"], t["duration_s"], cfg["frontend"].sample_rate_hz)
    if not args.data_dir or not Path(args.data_dir).is_dir():
        raise MissingFileError(f"data directory not found: {args.data_dir}")
    return load_wav_dir(args.data_dir, cfg["frontend"].sample_rate_hz)


def _emit(obj) -> None:
    print(json.dumps(obj))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_mel(args) -> int:
    cfg = load_config(args.config)
    fe = cfg["frontend"]
    wave = read_wav(args.input, fe.sample_rate_hz)
    mel = wav2mel(wave, fe)
    write_mel1(args.output, mel)
    _emit({"frames": mel.frame_count, "bands": mel.band_count, "output": str(args.output)})
    return 0


def cmd_synth(args) -> int:
    g, _ = load_generator(args.checkpoint)
    if args.stream:
        return _synth_stream(args, g)
    mel = read_mel1(args.input)
    with ad.no_grad():
        y = g(ad.Tensor(mel.data.T[None].astype(g.dtype))).data[0]
    if args.dump_float:
        np.save(args.dump_float, y)
    _write_audio(args.output, y, g)
    return 0


def _synth_stream(args, g: Generator) -> int:
    from .streaming import StreamSession

    sess = StreamSession(g)
    src = sys.stdin.buffer if args.input == "-" else open(_existing(args.input), "rb")
    to_stdout = args.output == "-"
    chunks = []
    peak_frames = 0
    try:
        hop = g.config.hop_length
        for frame in iter_mel1_frames(src):
            y = sess.push_mel_frame(frame)
            # the frame just read plus any consumed frames not yet turned into samples
            peak_frames = max(peak_frames, 1 + sess.frames_consumed - sess.samples_emitted // hop)
            if to_stdout:
                sys.stdout.buffer.write(quantize_pcm16(y).tobytes())
                sys.stdout.buffer.flush()
            else:
                chunks.append(y)
    finally:
        if src is not sys.stdin.buffer:
            src.close()
    y = np.concatenate(chunks) if chunks else np.zeros(0, dtype=g.dtype)
    if args.dump_float:
        np.save(args.dump_float, y)
    if not to_stdout:
        _write_audio(args.output, y, g)
    if args.instrument:
        fe = FrontendConfig()
        buffered_samples = peak_frames * g.config.hop_length
        report = {
            "peak_buffered_frames": peak_frames,
            "peak_buffered_ms": 1000.0 * (buffered_samples + fe.window_len - fe.frame_shift) / fe.sample_rate_hz,
            "frames": sess.frames_consumed,
        }
        if peak_frames > 1:
            raise InvalidConfigError(f"streaming buffered {peak_frames} frames")
        print(json.dumps(report), file=sys.stderr)
    return 0


def _write_audio(path, y, g: Generator) -> None:
    if path == "-":
        sys.stdout.buffer.write(quantize_pcm16(y).tobytes())
        sys.stdout.buffer.flush()
    else:
        write_wav(path, y, 16000)


def cmd_train(args) -> int:
    from dataclasses import replace

    from .trainer import Trainer, save_teacher

    cfg = load_config(args.config)
    tcfg = replace(cfg["train"], stage="pretrain", seed=args.seed)
    if args.steps:
        tcfg = replace(tcfg, steps=args.steps)
    fe = cfg["frontend"]
    gcfg = cfg["teacher"] if args.teacher else cfg["generator"]
    if args.teacher and gcfg.causal:
        raise InvalidConfigError("teacher config must be non-causal")
    if args.teacher and gcfg.stride_setup != cfg["generator"].stride_setup:
        raise InvalidConfigError("teacher stride setup must match the student's")
    g = build_generator(gcfg, seed=args.seed, frontend=fe, weight_std=args.init_std)
    bank = build_bank(cfg["bank"], seed=args.seed + 1)
    tr = Trainer(g, bank, tcfg, _dataset(args, cfg), fe)
    records = tr.run(log_path=args.log)
    if args.teacher:
        save_teacher(args.output, g, bank)
    else:
        tr.save(args.output)
    _emit({"steps": tr.step_count, "final": records[-1] if records else None, "output": str(args.output)})
    return 0


def cmd_finetune(args) -> int:
    from dataclasses import replace

    from .ssl_encoder import load_ssl_encoder
    from .trainer import Trainer, load_checkpoint, load_teacher

    cfg = load_config(args.config)
    tcfg = replace(cfg["train"], stage="finetune", seed=args.seed, learning_rate=None)
    if args.steps:
        tcfg = replace(tcfg, steps=args.steps)
    student, bank, meta = load_checkpoint(_existing(args.student))
    teacher, teacher_bank = load_teacher(_existing(args.teacher))
    encoder = load_ssl_encoder(args.encoder)
    fe = FrontendConfig.from_dict(meta["frontend_config"])
    tr = Trainer(student, bank, tcfg, _dataset(args, cfg), fe, teacher=teacher, teacher_bank=teacher_bank, encoder=encoder)
    records = tr.run(log_path=args.log)
    tr.save(args.output)
    _emit({"steps": tr.step_count, "final": records[-1] if records else None, "output": str(args.output)})
    return 0


def cmd_eval(args) -> int:
    from .metrics import McdConfig, count_flops, mcd, mel_l1_metric

    cfg = load_config(args.config)
    fe = cfg["frontend"]
    ref = read_wav(args.reference, fe.sample_rate_hz)
    hyp = read_wav(args.hypothesis, fe.sample_rate_hz)
    res = mcd(ref, hyp, McdConfig(frontend=fe))
    if args.checkpoint:
        g, _ = load_generator(args.checkpoint)
    else:
        g = build_generator(cfg["generator"], frontend=fe)
    fl = count_flops(g, sample_rate_hz=fe.sample_rate_hz)
    out = {
        "mcd_db": res.mcd_db,
        "mel_l1": mel_l1_metric(ref, hyp, fe),
        "flops_g": fl.gflops,
        "params": fl.params,
        "truncated": res.truncated,
        "mcd_conventions": res.conventions,
    }
    if args.output:
        Path(args.output).write_text(json.dumps(out, indent=2))
    _emit(out)
    return 0


def cmd_delay(args) -> int:
    g, fe = load_generator(args.checkpoint)
    if args.config:
        fe = load_config(args.config)["frontend"]
    ms = g.algorithmic_delay_ms(fe or FrontendConfig())
    print(float(ms))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    res = run_suite(seed=args.seed, n_composite=args.samples)
    _emit(res)
    return 0 if res["passed"] else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamvoc", description="Causal streaming GAN vocoder toolkit.")
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mel", help="wave -> MEL1 log-Mel file")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--config")
    s.set_defaults(func=cmd_mel)

    s = sub.add_parser("synth", help="MEL1 -> wave with a trained generator")
    s.add_argument("input", help="MEL1 file, or - for stdin in --stream mode")
    s.add_argument("checkpoint")
    s.add_argument("output", help="WAV file, or - for raw PCM16 on stdout")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--stream", action="store_true", help="frame-by-frame causal synthesis")
    mode.add_argument("--offline", action="store_true", help="whole-utterance synthesis (default)")
    s.add_argument("--dump-float", help="also save pre-quantisation samples as .npy")
    s.add_argument("--instrument", action="store_true", help="report peak buffered input on stderr (stream mode)")
    s.set_defaults(func=cmd_synth)

    for name, fn, helptext in (("train", cmd_train, "stage-1 pre-training or teacher training"), ("finetune", cmd_finetune, "stage-2 fine-tuning")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config")
        data = s.add_mutually_exclusive_group(required=True)
        data.add_argument("--toy", action="store_true", help="use the synthetic harmonic corpus")
        data.add_argument("--data-dir", help="directory of 16-bit mono .wav files")
        s.add_argument("--out", dest="output", required=True)
        s.add_argument("--steps", type=int, help="override train.steps")
        s.add_argument("--log", help="append JSON-lines step log here")
        if name == "train":
            s.add_argument("--teacher", action="store_true", help="train the non-causal teacher instead")
            s.add_argument("--init-std", type=float, default=DESK_WEIGHT_STD, help="std of the normal weight init")
        else:
            s.add_argument("--student", required=True, help="stage-1 checkpoint")
            s.add_argument("--teacher", required=True, help="teacher checkpoint")
            s.add_argument("--encoder", help="SSL encoder weights (default: bundled fixture)")
        s.set_defaults(func=fn)

    s = sub.add_parser("eval", help="MCD, Mel-L1 and complexity report")
    s.add_argument("reference")
    s.add_argument("hypothesis")
    s.add_argument("output", nargs="?")
    s.add_argument("--checkpoint", help="generator whose FLOPs/params to report")
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("delay", help="print algorithmic delay in ms")
    s.add_argument("checkpoint")
    s.add_argument("--config", help="front-end override")
    s.set_defaults(func=cmd_delay)

    s = sub.add_parser("gradcheck", help="finite-difference check of every op and the full objective")
    s.add_argument("--config")
    s.add_argument("--samples", type=int, default=200, help="parameters sampled in the composite check")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr)
    try:
        return args.func(args)
    except StreamvocError as e:
        print(json.dumps({"error": e.kind, "message": str(e), "code": e.code}), file=sys.stderr)
        return e.code
    except OSError as e:
        err = MissingFileError(str(e))
        print(json.dumps({"error": err.kind, "message": str(e), "code": err.code}), file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
