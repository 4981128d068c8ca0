"""Command line for the distillation toolkit (synth, features,
import-embeddings, distill, finetune, evaluate, bench).

Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data or
file-format errors. Verbosity comes from the ``DISTILLKIT_LOG`` environment
variable (a logging level name, default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .augment import AugmentConfig
from .errors import ConfigError, DataError
from .evaluate import read_trials, run_trials, write_scores
from .features import FbankConfig, VadConfig, extract_features, read_archive, read_wav, write_archive
from .losses import ALL_LOSSES, AamConfig, ContrastiveConfig
from .nnet import STUDENT_PRESETS, StudentNet, measure_params_and_rtf, student_config
from .synth import SynthSpec, generate_corpus, read_labels, write_corpus
from .teacher import read_store, read_tsv_embeddings, write_store
from .trainer import TrainConfig, dense_labels, finetune_supervised, train_distill

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("distillkit")

FORMATS = """file formats (all binary formats little endian):
  FTR1  feature archive: "FTR1", u32 count; per record u16 id length, UTF-8 id,
        u32 T, u32 D, T*D float32 row-major
  EMB1  embedding store: "EMB1", u32 dim, u32 count; per record u16 id length,
        UTF-8 id, u32 dim, dim float32
  NET1  student checkpoint: "NET1", u32 config length, config JSON,
        sha256 of the config, u64 param count, float32 params
  labels.tsv  utt-id<TAB>speaker-id per line
  trials      <1|0> <enroll-id> <test-id> per line (1 = same speaker)
  scores      <enroll-id> <test-id> <score> <target|nontarget> per line
  reports     JSON lines ({"type": "header" | "epoch" | "final" | ...})

--config FILE reads TOML: top-level keys apply to every command that has them,
a [<command>] table to that command only; command-line flags win."""


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with status 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _sub(subs, name, help_text, required=()):
    p = subs.add_parser(
        name,
        help=help_text,
        description=help_text,
        epilog=FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.set_defaults(command=name, required=tuple(required))
    p.add_argument("--config", type=Path, help="TOML file with defaults for this command's flags")
    return p


def _train_flags(p, loss_default):
    p.add_argument("--features", type=Path, help="FTR1 training features")
    p.add_argument("--out", type=Path, help="output directory for checkpoints and report.jsonl")
    p.add_argument("--loss", choices=ALL_LOSSES, default=loss_default, help="training loss")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch", type=int, default=64, help="utterances per batch")
    p.add_argument("--seed", type=int, default=0, help="seed for init, batch order and augmentation")
    p.add_argument("--student", choices=sorted(STUDENT_PRESETS), default="tdnn-small")
    p.add_argument("--pooling", choices=("stats", "gap"), default="stats")
    p.add_argument("--init", type=Path, help="NET1 checkpoint to start from (overrides --student)")
    p.add_argument("--lr-start", type=float, default=0.1)
    p.add_argument("--lr-end", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--max-grad-norm", type=float, default=5.0, help="gradient clip; <= 0 disables")
    p.add_argument("--subset-fraction", type=float, default=1.0, help="fraction of utterances per epoch")
    p.add_argument("--crop-min-s", type=float, default=2.0)
    p.add_argument("--crop-max-s", type=float, default=3.0)
    p.add_argument("--no-augment", action="store_true", help="crop only; no warping or masking")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="distillkit", description=__doc__.split("\n\n")[0])
    subs = parser.add_subparsers(metavar="command", parser_class=_Parser)

    p = _sub(subs, "synth", "generate a synthetic corpus with known speakers", ["out"])
    p.add_argument("--speakers", type=int, default=40)
    p.add_argument("--utts", type=int, default=50, help="utterances per speaker")
    p.add_argument("--heldout", type=int, help="held-out utterances per speaker (default utts // 5, at least 2)")
    p.add_argument("--dim", type=int, default=256, help="teacher embedding dimension")
    p.add_argument("--teacher-noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", type=Path, help="output directory")

    p = _sub(subs, "features", "extract log-mel features from a directory of WAV files", ["wav_dir", "out"])
    p.add_argument("--wav-dir", type=Path, help="directory of *.wav files; ids are file stems")
    p.add_argument("--out", type=Path, help="FTR1 output path")
    p.add_argument("--window-ms", type=float, default=25.0)
    p.add_argument("--hop-ms", type=float, default=10.0)
    p.add_argument("--n-mels", type=int, default=80)
    p.add_argument("--preemphasis", type=float, default=0.0)
    p.add_argument("--cmn-window-s", type=float, default=3.0, help="sliding mean window; <= 0 disables")
    p.add_argument("--no-vad", action="store_true")
    p.add_argument("--order", choices=("vad-cmn", "cmn-vad"), default="vad-cmn")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    p = _sub(subs, "import-embeddings", "convert id<TAB>v1,...,vD text to an EMB1 store", ["tsv", "out"])
    p.add_argument("--tsv", type=Path)
    p.add_argument("--out", type=Path)

    p = _sub(subs, "distill", "label-free distillation of teacher embeddings", ["features", "teacher", "out"])
    _train_flags(p, "contrastive")
    p.add_argument("--teacher", type=Path, help="EMB1 teacher embeddings")
    p.add_argument("--temperature", type=float, default=0.1, help="contrastive temperature")

    p = _sub(subs, "finetune", "supervised AAM-softmax training on speaker labels", ["features", "labels", "out"])
    _train_flags(p, "aam")
    p.add_argument("--labels", type=Path, help="labels.tsv")
    p.add_argument("--aam-scale", type=float, default=30.0)
    p.add_argument("--aam-margin", type=float, default=0.3)
    p.add_argument("--aam-warmup", type=int, default=30, help="epochs trained with margin 0")

    p = _sub(subs, "evaluate", "score a trial list and report the EER", ["ckpt", "features", "trials"])
    p.add_argument("--ckpt", type=Path, help="NET1 checkpoint")
    p.add_argument("--features", type=Path, help="FTR1 test features")
    p.add_argument("--trials", type=Path)
    p.add_argument("--scores-out", type=Path)
    p.add_argument("--report", type=Path, help="write a JSON-lines summary here")

    p = _sub(subs, "bench", "parameter count and real-time factor")
    p.add_argument("--ckpt", type=Path, help="NET1 checkpoint (default: untrained --student)")
    p.add_argument("--student", choices=sorted(STUDENT_PRESETS), default="tdnn-small")
    p.add_argument("--seconds", type=float, default=10.0, help="input duration")
    p.add_argument("--runs", type=int, default=5, help="timed runs (median reported)")
    p.add_argument("--warmups", type=int, default=2)
    p.add_argument("--report", type=Path, help="write a JSON-lines summary here")
    return parser


def _apply_config(parser, sub, argv, args):
    """Re-parse with TOML values as defaults so explicit flags still win."""
    try:
        with open(args.config, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{args.config}: {exc}") from exc
    known = {a.dest for a in sub._actions} - {"help", "config", "command", "required"}
    section = data.get(args.command, {})
    if not isinstance(section, dict):
        raise ConfigError(f"{args.config}: [{args.command}] must be a table")
    unknown = sorted(k for k in section if k.replace("-", "_") not in known)
    if unknown:
        raise ConfigError(f"{args.config}: unknown keys for {args.command}: {', '.join(unknown)}")
    values = {k.replace("-", "_"): v for k, v in data.items() if not isinstance(v, dict)}
    values = {k: v for k, v in values.items() if k in known}
    values.update({k.replace("-", "_"): v for k, v in section.items()})
    for action in sub._actions:
        if action.dest in values and action.type is Path and values[action.dest] is not None:
            values[action.dest] = Path(values[action.dest])
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _train_config(args, **extra) -> TrainConfig:
    aug = AugmentConfig(crop_min_s=args.crop_min_s, crop_max_s=args.crop_max_s)
    if args.no_augment:
        aug = replace(aug, n_freq_masks=0, n_time_masks=0, max_warp_frames=0)
    return TrainConfig(
        loss=args.loss,
        batch_size=args.batch,
        epochs=args.epochs,
        lr_start=args.lr_start,
        lr_end=args.lr_end,
        momentum=args.momentum,
        epoch_subset_fraction=args.subset_fraction,
        max_grad_norm=args.max_grad_norm if args.max_grad_norm > 0 else None,
        seed=args.seed,
        augment=aug,
        **extra,
    )


def _student(args) -> StudentNet:
    if args.init is not None:
        return StudentNet.load(args.init)
    return StudentNet(student_config(args.student, args.pooling), seed=args.seed)


def _summary(report) -> str:
    last = report.epochs[-1]
    return f"epochs {len(report.epochs)} final loss {last.mean_loss:.6f} skipped/epoch {last.skipped}"


def cmd_synth(args):
    spec = SynthSpec(
        n_speakers=args.speakers,
        utts_per_speaker=args.utts,
        heldout_per_speaker=args.heldout,
        teacher_dim=args.dim,
        teacher_noise=args.teacher_noise,
        seed=args.seed,
    )
    corpus = generate_corpus(spec)
    paths = write_corpus(corpus, args.out)
    print(f"{len(corpus.train_features)} train / {len(corpus.test_features)} test utterances, {len(corpus.trials)} trials")
    for p in paths.values():
        print(p)


def _extract_one(job):
    path, fbank_cfg, vad, cmn, order = job
    try:
        return extract_features(read_wav(path), fbank_cfg, VadConfig() if vad else None, cmn, order)
    except DataError as exc:
        raise DataError(f"{path.name}: {exc}") from None


def cmd_features(args):
    wavs = sorted(args.wav_dir.glob("*.wav"))
    if not wavs:
        raise DataError(f"no .wav files in {args.wav_dir}")
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    cfg = FbankConfig(window_ms=args.window_ms, hop_ms=args.hop_ms, n_mels=args.n_mels, preemphasis=args.preemphasis)
    cmn = args.cmn_window_s if args.cmn_window_s > 0 else None
    jobs = [(w, cfg, not args.no_vad, cmn, args.order) for w in wavs]
    if args.workers == 1:
        feats = list(map(_extract_one, jobs))
    else:
        with ProcessPoolExecutor(args.workers) as pool:
            feats = list(pool.map(_extract_one, jobs))  # map keeps input order
    write_archive({w.stem: f for w, f in zip(wavs, feats)}, args.out)
    print(f"{len(wavs)} utterances -> {args.out}")


def cmd_import_embeddings(args):
    entries, dim = read_tsv_embeddings(args.tsv)
    write_store(entries, dim, args.out)
    print(f"{len(entries)} embeddings of dim {dim} -> {args.out}")


def cmd_distill(args):
    if args.loss == "aam":
        raise ConfigError("aam needs speaker labels; use 'distillkit finetune'")
    cfg = _train_config(args, contrastive=ContrastiveConfig(args.temperature))
    features, teacher = read_archive(args.features), read_store(args.teacher)
    report = train_distill(features, teacher, _student(args), cfg, args.out)
    print(_summary(report))
    print(f"checkpoint {args.out / report.checkpoint}")


def cmd_finetune(args):
    if args.loss != "aam":
        raise ConfigError(f"finetune trains with loss 'aam', got {args.loss!r}")
    cfg = _train_config(args, aam=AamConfig(args.aam_scale, args.aam_margin, args.aam_warmup))
    features = read_archive(args.features)
    labels = {u: s for u, s in read_labels(args.labels).items() if u in features}
    if not labels:
        raise DataError("no labeled utterances in the feature archive")
    class_ids, names = dense_labels(labels)
    report = finetune_supervised(features, class_ids, _student(args), cfg, args.out)
    W = report.class_weights.W
    write_store({n: W[i] for i, n in enumerate(names)}, W.shape[1], args.out / "classes.emb1")
    print(_summary(report))
    print(f"checkpoint {args.out / report.checkpoint}; {len(names)} classes -> {args.out / 'classes.emb1'}")


def _write_report(path, record):
    if path is not None:
        Path(path).write_text(json.dumps(record, sort_keys=True) + "\n", encoding="utf-8")


def cmd_evaluate(args):
    net = StudentNet.load(args.ckpt)
    result = run_trials(net, read_archive(args.features), read_trials(args.trials))
    if args.scores_out is not None:
        write_scores(result.scores, args.scores_out)
    _write_report(
        args.report,
        {"type": "evaluate", "eer": result.eer, "threshold": result.threshold, "trials": len(result.scores)},
    )
    print(f"EER {result.eer:.6f} (threshold {result.threshold:.6f}, {len(result.scores)} trials)")


def cmd_bench(args):
    net = StudentNet.load(args.ckpt) if args.ckpt else StudentNet(student_config(args.student))
    res = measure_params_and_rtf(net, seconds=args.seconds, runs=args.runs, warmups=args.warmups)
    _write_report(args.report, {"type": "bench", "seconds": args.seconds, **res})
    print(f"params {res['param_count']}")
    print(f"RTF {res['rtf']:.6f}")


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "import-embeddings": cmd_import_embeddings,
    "distill": cmd_distill,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    level = os.environ.get("DISTILLKIT_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or an argument error (status 1)
        return exc.code if isinstance(exc.code, int) else 1
    if not hasattr(args, "command"):
        parser.print_help(sys.stderr)
        return 1
    try:
        if args.config is not None:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            try:
                args = _apply_config(parser, sub, argv, args)
            except SystemExit as exc:
                return exc.code if isinstance(exc.code, int) else 1
        missing = [f"--{d.replace('_', '-')}" for d in args.required if getattr(args, d) is None]
        if missing:
            raise ConfigError(f"{args.command}: missing required {', '.join(missing)}")
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"distillkit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"distillkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
