"""Command-line entry point: ``desknmt <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 training error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import tensor as T
from .config import ToolkitConfig, load_config
from .corpus import Side, clean_bitext, dedup_pairs, load_bitext, read_lines, save_bitext, write_lines
from .errors import ConfigError, DataError, TrainingError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3

log = logging.getLogger("desknmt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _settings(args) -> ToolkitConfig:
    cfg = load_config(args.config) if args.config else ToolkitConfig()
    return cfg.with_overrides(args.scale, args.seed, args.precision)


# subcommands

def cmd_preprocess(args, cfg):
    b = load_bitext(args.src, args.tgt)
    n0 = len(b)
    b = clean_bitext(b)
    if not args.keep_duplicates:
        b = dedup_pairs(b)
    save_bitext(b, args.out_src, args.out_tgt)
    print(f"{n0} pairs in, {len(b)} pairs out")


def cmd_build_vocab(args, cfg):
    from .tokenizer import build_word_vocab

    size = args.size or cfg.tokenizer.word_vocab_size
    vocab = build_word_vocab(read_lines(args.input), size)
    vocab.save(args.output)
    print(f"{len(vocab)} entries written to {args.output}")


def cmd_learn_bpe(args, cfg):
    from .tokenizer import learn_bpe, word_frequencies

    n = cfg.tokenizer.num_merges if args.merges is None else args.merges
    table = learn_bpe(word_frequencies(read_lines(args.input)), n, args.min_frequency)
    table.save(args.output)
    print(f"{len(table)} merges written to {args.output}")


def cmd_apply_bpe(args, cfg):
    from .tokenizer import MergeTable, apply_bpe, decode_bpe

    table = MergeTable.load(args.merges)
    lines = read_lines(args.input)
    if args.decode:
        out = [decode_bpe(ln.split(), table.marker) for ln in lines]
    else:
        out = [" ".join(apply_bpe(ln, table)) for ln in lines]
    write_lines(args.output, out)


def cmd_train(args, cfg):
    from .pipeline import train_bundle

    data = load_bitext(args.train_src, args.train_tgt, "train")
    if args.dev_src:
        dev = load_bitext(args.dev_src, args.dev_tgt, "dev")
    else:
        dev = data[:0]
    data, dev = dedup_pairs(clean_bitext(data)), clean_bitext(dev)
    if args.reverse:
        data, dev = data.swapped(), dev.swapped()
    with T.precision(cfg.experiment.precision):
        bundle = train_bundle(data, dev, args.tokenization, cfg, args.out, reverse=args.reverse)
    last = bundle.checkpoint.history[-1] if bundle.checkpoint.history else None
    loss = f"{last.train_loss:.4f}" if last else "n/a"
    print(f"trained {bundle.checkpoint.step} steps, final train loss {loss}; model in {args.out}")


def cmd_translate(args, cfg):
    from .inference import ModelBundle

    bundle = ModelBundle.load(args.model)
    side = Side.TARGET if args.reverse else Side.SOURCE
    with T.precision(cfg.experiment.precision):
        out = bundle.translate(read_lines(args.input), args.batch_size, side)
    write_lines(args.output, out)


def cmd_backtranslate(args, cfg):
    from .pipeline import backtranslate

    with T.precision(cfg.experiment.precision):
        pool = backtranslate(args.input, args.model, args.limit, args.batch_size)
    save_bitext(pool, args.out_src, args.out_tgt)
    print(f"{len(pool)} synthetic pairs")


def cmd_assemble(args, cfg):
    from .pipeline import BatchPlan, assemble_batch

    base = load_bitext(args.base_src, args.base_tgt, "base")
    pool = load_bitext(args.pool_src, args.pool_tgt, "synthetic")
    plan = BatchPlan(base, pool, cfg.batch.increments, cfg.batch.scale)
    seed = cfg.experiment.seed if cfg.batch.shuffle else None
    out = assemble_batch(plan, args.level, seed)
    save_bitext(out, args.out_src, args.out_tgt)
    print(f"level {args.level}: {len(base)} original + {plan.quota(args.level)} synthetic = {len(out)} pairs")


def cmd_evaluate(args, cfg):
    from .metrics import evaluate_corpus

    rep = evaluate_corpus(args.hyp, args.ref, args.report)
    print(f"BLEU  {rep.bleu:.6f}  ({100 * rep.bleu:.2f})")
    print("precisions " + " ".join(f"{p:.4f}" for p in rep.precisions) + f"  BP {rep.brevity_penalty:.4f}")
    print(f"RIBES {rep.ribes:.6f}")
    print(f"sentences {rep.sentence_count}")


def cmd_split_test(args, cfg):
    from .pipeline import split_test_set
    from .tokenizer import WordVocab

    test = load_bitext(args.test_src, args.test_tgt, "test")
    vocab = WordVocab.load(args.vocab)
    tvocab = WordVocab.load(args.target_vocab) if args.target_vocab else None
    side = args.side or cfg.experiment.split_side
    set1, set2 = split_test_set(test, vocab, side, tvocab)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, b in (("set1", set1), ("set2", set2)):
        save_bitext(b, os.path.join(args.out_dir, f"{name}.src"), os.path.join(args.out_dir, f"{name}.tgt"))
    print(f"set1 {len(set1)} / set2 {len(set2)}")


def cmd_experiment(args, cfg):
    from .pipeline import ExperimentInputs, full_grid, render_report, run_experiment

    if args.toy:
        from .toydata import toy_config, toy_inputs

        inputs = toy_inputs(seed=cfg.experiment.seed)
        if not args.config:
            cfg = toy_config().with_overrides(args.scale, args.seed, args.precision)
        if args.data_dir:
            inputs.save(args.data_dir)
    elif args.data_dir:
        inputs = ExperimentInputs.from_dir(args.data_dir)
    else:
        raise UsageError("experiment: one of --data-dir or --toy is required")
    grid = full_grid(cfg.experiment.levels, cfg.experiment.tokenizations)
    rows = run_experiment(grid, inputs, cfg, args.work_dir, args.results)
    print(render_report(rows), end="")
    if any(r.status != "ok" for r in rows):
        return EXIT_TRAINING
    return EXIT_OK


def cmd_report(args, cfg):
    from .pipeline import read_results, render_report

    if not os.path.exists(args.results):
        raise DataError(f"no results file at {args.results}")
    text = render_report(read_results(args.results))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text)
    print(text, end="")


# parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--scale", type=float, help="multiplier for the back-translation quotas")
    g.add_argument("--seed", type=int, help="seed for every random choice")
    g.add_argument("--precision", choices=("f32", "f64"), help="floating-point precision")
    g.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="desknmt", description="Desk-scale Transformer NMT toolkit")
    sub = p.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("preprocess", cmd_preprocess, "clean and deduplicate a bitext")
    sp.add_argument("--src", required=True)
    sp.add_argument("--tgt", required=True)
    sp.add_argument("--out-src", required=True)
    sp.add_argument("--out-tgt", required=True)
    sp.add_argument("--keep-duplicates", action="store_true")

    sp = add("build-vocab", cmd_build_vocab, "frequency-ranked word vocabulary")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--size", type=int, help="entries besides the specials (default: tokenizer.word_vocab_size)")

    sp = add("learn-bpe", cmd_learn_bpe, "learn BPE merges")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--merges", type=int, help="number of merges (default: tokenizer.num_merges)")
    sp.add_argument("--min-frequency", type=int, default=2)

    sp = add("apply-bpe", cmd_apply_bpe, "segment (or --decode) text with a merge table")
    sp.add_argument("--input", required=True)
    sp.add_argument("--merges", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--decode", action="store_true")

    sp = add("train", cmd_train, "train a model bundle")
    sp.add_argument("--train-src", required=True)
    sp.add_argument("--train-tgt", required=True)
    sp.add_argument("--dev-src")
    sp.add_argument("--dev-tgt")
    sp.add_argument("--tokenization", choices=("word", "subword"), default="subword")
    sp.add_argument("--reverse", action="store_true", help="train target-to-source")
    sp.add_argument("--out", required=True, help="bundle directory")

    sp = add("translate", cmd_translate, "greedy-decode a file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--reverse", action="store_true", help="input is target-language text")

    sp = add("backtranslate", cmd_backtranslate, "make synthetic pairs from monolingual text")
    sp.add_argument("--model", required=True, help="reverse (target-to-source) bundle")
    sp.add_argument("--input", required=True, help="monolingual target-language file")
    sp.add_argument("--limit", type=int, required=True)
    sp.add_argument("--out-src", required=True)
    sp.add_argument("--out-tgt", required=True)
    sp.add_argument("--batch-size", type=int, default=32)

    sp = add("assemble", cmd_assemble, "base plus cumulative synthetic quota")
    sp.add_argument("--base-src", required=True)
    sp.add_argument("--base-tgt", required=True)
    sp.add_argument("--pool-src", required=True)
    sp.add_argument("--pool-tgt", required=True)
    sp.add_argument("--level", type=int, required=True)
    sp.add_argument("--out-src", required=True)
    sp.add_argument("--out-tgt", required=True)

    sp = add("evaluate", cmd_evaluate, "BLEU and RIBES of a hypothesis file")
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--report")

    sp = add("split-test", cmd_split_test, "in-vocabulary subset and full test set")
    sp.add_argument("--test-src", required=True)
    sp.add_argument("--test-tgt", required=True)
    sp.add_argument("--vocab", required=True, help="source word vocabulary")
    sp.add_argument("--target-vocab")
    sp.add_argument("--side", choices=("source", "target", "both"))
    sp.add_argument("--out-dir", required=True)

    sp = add("experiment", cmd_experiment, "run the word/subword x batch-level grid")
    sp.add_argument("--data-dir", help="train/dev/test .src/.tgt and mono.tgt")
    sp.add_argument("--toy", action="store_true", help="generate the toy corpus (saved to --data-dir if given)")
    sp.add_argument("--work-dir", required=True)
    sp.add_argument("--results")

    sp = add("report", cmd_report, "render result tables from a results file")
    sp.add_argument("--results", required=True)
    sp.add_argument("--output")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _settings(args)
        rc = args.func(args, cfg)
        return EXIT_OK if rc is None else rc
    except (UsageError, ConfigError) as e:
        print(f"desknmt {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError) as e:
        print(f"desknmt {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as e:
        print(f"desknmt {args.command}: {e}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
