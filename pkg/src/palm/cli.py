"""Command-line entry point: vocab, fragments, pretrain, finetune,
generate, eval, and the ablation matrix.

Exit codes: 0 success, 1 usage error, 2 data or config error. Outputs in
the run directory are a pure function of (inputs, config, seed); anything
time-dependent goes to stderr only.
"""

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import decoding as dc
from . import evaluation as ev
from . import model as md
from . import pipeline as pl
from . import tokenizer as tk
from . import training as tr
from .errors import PalmError


class UsageError(Exception):
    """Bad invocation: wrong flags, malformed --set, unknown config key."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


ARM_NAMES = ("full", "no_pointer", "no_autoencoding", "no_autoregression", "no_pretraining")


def _corpus_text(path) -> str:
    return "\n\n".join(pl.load_documents(path))


def _parse_sets(pairs) -> dict:
    values = {}
    for raw in pairs or []:
        key, sep, value = raw.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"--set expects key=value, got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def _resolve_configs(args, vocab_size: int | None = None):
    """defaults <- config file <- --set <- --seed; unknown keys are usage errors."""
    values = {}
    if getattr(args, "config", None):
        text = Path(args.config).read_text(encoding="utf-8")
        values.update(tr.parse_config_text(text))
    values.update(_parse_sets(getattr(args, "set", None)))
    for key in values:
        if key not in tr.CONFIG_KEYS:
            raise UsageError(f"unknown config key '{key}'")
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if vocab_size is not None and "vocab_size" not in values:
        values["vocab_size"] = str(vocab_size)
    model_defaults = md.ModelConfig.desk(int(values.get("vocab_size", tk.NUM_SPECIALS + 1)))
    return tr.build_configs(values, model_defaults, tr.TrainConfig.desk())


def _run_dir(args) -> Path:
    root = Path(os.environ.get("PALM_RUN_DIR", "runs"))
    run = root / args.run
    (run / "checkpoints").mkdir(parents=True, exist_ok=True)
    return run


def _write_resolved(run: Path, model_cfg, train_cfg, command: str):
    text = (
        f"# palm {__version__}\n"
        f"# command: {command}\n" + tr.config_lines(model_cfg, train_cfg)
    )
    (run / "config.resolved").write_text(text, encoding="utf-8")


def _open_log(run: Path):
    fh = open(run / "log.txt", "w", encoding="utf-8")

    def log(step, stage, loss):
        shown = "skipped" if loss is None else f"{loss:.6f}"
        fh.write(f"step={step} stage={stage} loss={shown}\n")

    return fh, log


# ------------------------------------------------------------- subcommands

def cmd_vocab(args) -> int:
    vocab = tk.build_vocab(_corpus_text(args.corpus), args.size)
    vocab.save(args.out)
    print(f"vocab tokens={vocab.size} out={args.out}")
    return 0


def cmd_fragments(args) -> int:
    vocab = tk.Vocab.load(args.vocab)
    fragments = pl.fragment_documents(pl.load_documents(args.corpus), vocab)
    count = pl.write_pair_file(args.out, fragments)
    stats = pl.pair_stats([(f.context_ids, f.target_ids) for f in fragments])
    print(f"fragments count={count} out={args.out}")
    print(f"context min={stats['context']['min']} mean={stats['context']['mean']:.1f} "
          f"max={stats['context']['max']}")
    print(f"target min={stats['target']['min']} mean={stats['target']['mean']:.1f} "
          f"max={stats['target']['max']}")
    return 0


def cmd_pretrain(args) -> int:
    pairs = pl.read_pair_file(args.pairs)
    vocab = tk.Vocab.load(args.vocab)
    model_cfg, train_cfg = _resolve_configs(args, vocab_size=vocab.size)
    run = _run_dir(args)
    _write_resolved(run, model_cfg, train_cfg, "pretrain")
    checkpoint = run / "checkpoints" / "model.plmc"
    started = time.monotonic()
    fh, log = _open_log(run)
    try:
        tr.pretrain(pairs, model_cfg, train_cfg, checkpoint,
                    resume=args.resume, log=log, stop_after=args.stop_after)
    finally:
        fh.close()
    print(f"elapsed {time.monotonic() - started:.1f}s", file=sys.stderr)
    print(f"checkpoint {checkpoint}")
    return 0


def cmd_finetune(args) -> int:
    pairs = tr.read_supervised_pairs(args.pairs)
    vocab = tk.Vocab.load(args.vocab)
    model_cfg, train_cfg = _resolve_configs(args, vocab_size=vocab.size)
    run = _run_dir(args)
    _write_resolved(run, model_cfg, train_cfg, "finetune")
    out = run / "checkpoints" / "model.plmc"
    started = time.monotonic()
    fh, log = _open_log(run)
    try:
        tr.finetune(pairs, vocab, args.checkpoint, out, train_cfg, log=log)
    finally:
        fh.close()
    print(f"elapsed {time.monotonic() - started:.1f}s", file=sys.stderr)
    print(f"checkpoint {out}")
    return 0


def cmd_generate(args) -> int:
    vocab = tk.Vocab.load(args.vocab)
    model, _ = md.model_from_checkpoint(args.checkpoint)
    run = _run_dir(args)
    _write_resolved(run, model.cfg, tr.TrainConfig.desk(), "generate")
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    outputs = []
    for line in lines:
        if not line.strip():
            outputs.append("")
            continue
        outputs.append(dc.generate_text(
            model, vocab, line, beam=args.beam, max_len=args.max_len,
            use_pointer=not args.no_pointer,
            length_normalize=not args.no_length_norm,
        ))
    text = "\n".join(outputs) + "\n"
    (run / "samples.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _eval_report(model, vocab, pairs_path, args) -> str:
    pairs = tr.read_supervised_pairs(pairs_path)
    examples = [tr.prepare_example(src, tgt, vocab, model.cfg) for src, tgt in pairs]
    report = ev.evaluate(
        model, vocab, examples, beam=args.beam,
        use_pointer=not args.no_pointer,
        length_normalize=not args.no_length_norm,
        max_len=args.max_len,
    )
    return ev.format_report(report)


def cmd_eval(args) -> int:
    vocab = tk.Vocab.load(args.vocab)
    model, _ = md.model_from_checkpoint(args.checkpoint)
    run = _run_dir(args)
    _write_resolved(run, model.cfg, tr.TrainConfig.desk(), "eval")
    text = _eval_report(model, vocab, args.pairs, args)
    (run / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_ablate(args) -> int:
    requested = args.arm or list(ARM_NAMES)
    for arm in requested:
        if arm not in ARM_NAMES:
            raise UsageError(f"unknown ablation arm '{arm}'")
    arms = ["full"] + [a for a in ARM_NAMES[1:] if a in requested]

    pre_pairs = pl.read_pair_file(args.pairs)
    vocab = tk.Vocab.load(args.vocab)
    sup_pairs = tr.read_supervised_pairs(args.finetune_pairs)
    eval_path = args.eval_pairs or args.finetune_pairs
    model_cfg, base_cfg = _resolve_configs(args, vocab_size=vocab.size)
    run = _run_dir(args)
    _write_resolved(run, model_cfg, base_cfg, "ablate")
    report_path = run / "report.txt"

    # rows append as each arm lands, so a failing arm leaves a partial report
    with open(report_path, "w", encoding="utf-8") as report:
        report.write("arm\trouge1_f1\trouge2_f1\trougeL_f1\tperplexity\n")
        report.flush()
        for arm in arms:
            started = time.monotonic()
            arm_cfg = base_cfg if arm == "full" else replace(base_cfg, **{arm: True})
            pre_ckpt = run / "checkpoints" / f"{arm}.plmc"
            ft_ckpt = run / "checkpoints" / f"{arm}_ft.plmc"
            tr.pretrain(pre_pairs, model_cfg, arm_cfg, pre_ckpt)
            model = tr.finetune(sup_pairs, vocab, pre_ckpt, ft_ckpt, arm_cfg)
            examples = [tr.prepare_example(s, t, vocab, model.cfg)
                        for s, t in tr.read_supervised_pairs(eval_path)]
            use_pointer = not arm_cfg.no_pointer
            rep = ev.evaluate(model, vocab, examples, beam=args.beam,
                              use_pointer=use_pointer)
            report.write(
                f"{arm}\t{rep.rouge1.f1:.6f}\t{rep.rouge2.f1:.6f}"
                f"\t{rep.rougeL.f1:.6f}\t{rep.perplexity:.6f}\n"
            )
            report.flush()
            print(f"{arm} done in {time.monotonic() - started:.1f}s", file=sys.stderr)
    sys.stdout.write(report_path.read_text(encoding="utf-8"))
    return 0


# ------------------------------------------------------------------ parser

def _add_common(p, run_default: str):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override; repeatable")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap; 1 (the default) is bit-exact")
    p.add_argument("--run", default=run_default, help="run directory name")


def _add_decode_flags(p):
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--no-pointer", action="store_true",
                   help="disable the copy path at decode time")
    p.add_argument("--no-length-norm", action="store_true",
                   help="rank finished hypotheses by raw log probability")


def build_parser() -> _Parser:
    parser = _Parser(prog="palm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"palm {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("vocab", help="build a subword vocabulary from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("fragments", help="fragment a corpus into context/target pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fragments)

    p = sub.add_parser("pretrain", help="two-stage pre-training over a pair file")
    p.add_argument("--pairs", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--stop-after", type=int, default=None,
                   help="halt after this step; resume later")
    _add_common(p, "pretrain")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised fine-tuning from a checkpoint")
    p.add_argument("--pairs", required=True, help="TSV: source<TAB>target")
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    _add_common(p, "finetune")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="beam-search continuations for input lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True, help="one context per line")
    _add_decode_flags(p)
    _add_common(p, "generate")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="perplexity and ROUGE on a TSV pair file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--pairs", required=True)
    _add_decode_flags(p)
    _add_common(p, "eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="pretrain+finetune+eval per ablation arm")
    p.add_argument("--pairs", required=True, help="pre-training pair file")
    p.add_argument("--vocab", required=True)
    p.add_argument("--finetune-pairs", required=True)
    p.add_argument("--eval-pairs", help="held-out TSV; defaults to --finetune-pairs")
    p.add_argument("--arm", action="append", choices=ARM_NAMES,
                   help="repeatable; default runs every arm")
    p.add_argument("--beam", type=int, default=4)
    _add_common(p, "ablate")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"palm: usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("palm: usage error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"palm: usage error: {exc}", file=sys.stderr)
        return 1
    except PalmError as exc:
        print(f"palm: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"palm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
