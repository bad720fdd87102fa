"""Command-line entry point.

Every subcommand maps onto one module operation; all outputs are files.
Option precedence is flag > config file ([section] per subcommand, INI
style) > built-in default. KWSPOT_LOG in {error,info,debug} controls
stderr verbosity.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import replace

from . import corpus as corpus_mod
from . import evaluate as eval_mod
from . import scoring as scoring_mod
from . import train as train_mod
from .mbr import MbrConfig
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .transducer import beam_search_nbest
from .vocab import Vocabulary, detokenize, tokenize

log = logging.getLogger("kwspot")


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("KWSPOT_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s")


def _split_keywords(raw: str) -> list[str]:
    keywords = [k.strip() for k in raw.split(",") if k.strip()]
    if not keywords:
        raise SystemExit("error: empty keyword list")
    return keywords


MODEL_OPTS = {
    "input_dim": int, "num_blocks": int, "dense1_dim": int, "dense2_dim": int,
    "num_heads": int, "head_dim": int, "dropout": float, "label_encoder_dim": int,
    "joint_dim": int,
}
TRAIN_OPTS = {
    "batch_size": int, "learning_rate": float, "max_steps": int, "eval_every": int,
    "seed": int, "max_symbols_per_frame": int,
}
SYNTH_OPTS = {
    "num_positive": int, "num_negative": int, "confusable_fraction": float,
    "base_dim": int, "frames_per_token": int, "noise_stddev": float, "seed": int,
    "word_pool_size": int, "min_words": int, "max_words": int,
}
MBR_OPTS = {
    "alpha": float, "beta": float, "lam": float, "epsilon": float,
    "n_best": int, "beam": int, "denominator_mode": str, "posterior_mode": str,
}
STACK_OPTS = {"stack": int, "subsample": int}


def _add_opts(parser, opts, prefix=""):
    for name, typ in opts.items():
        parser.add_argument(f"--{prefix}{name.replace('_', '-')}", type=typ, default=None)


def _apply_config_file(args, parser_name: str, opt_tables: list[dict]):
    """Fill argparse defaults (None) from the INI section for the subcommand."""
    known = {k for table in opt_tables for k in table}
    if not args.config:
        return
    cp = configparser.ConfigParser()
    read = cp.read(args.config)
    if not read:
        raise SystemExit(f"error: cannot read config file {args.config}")
    if parser_name not in cp:
        return
    for key, value in cp[parser_name].items():
        key_norm = key.replace("-", "_")
        if key_norm not in known:
            raise SystemExit(f"error: unknown key '{key}' in [{parser_name}] of {args.config}")
        if getattr(args, key_norm, None) is None:
            typ = next(t[key_norm] for t in opt_tables if key_norm in t)
            try:
                setattr(args, key_norm, typ(value))
            except ValueError:
                raise SystemExit(f"error: bad value for '{key}' in [{parser_name}]: {value!r}")


def _gather(args, opts: dict, defaults) -> dict:
    out = {}
    for name in opts:
        v = getattr(args, name, None)
        out[name] = getattr(defaults, name) if v is None else v
    return out


def _load_records(path):
    try:
        return corpus_mod.load_jsonl(path)
    except FileNotFoundError:
        raise SystemExit(f"error: dataset file not found: {path}")
    except ValueError as e:
        raise SystemExit(f"error: {e}")


def cmd_synth_data(args):
    keywords = tuple(_split_keywords(args.keywords))
    cfg = corpus_mod.SynthConfig(keyword_phrases=keywords, **_gather(args, SYNTH_OPTS, corpus_mod.SynthConfig()))
    records = corpus_mod.synthesize_corpus(cfg)
    stack, subsample = args.stack or 1, args.subsample or 1
    if stack != 1 or subsample != 1:
        records = [
            replace(r, features=corpus_mod.stack_and_subsample(r.features, stack, subsample))
            for r in records
        ]
    corpus_mod.save_jsonl(records, args.out)
    log.info("wrote %d records to %s", len(records), args.out)


def _model_and_train_cfg(args, records):
    vocab = Vocabulary.default()
    base_dim = records[0].features.frames.shape[1]
    model_opts = _gather(args, MODEL_OPTS, ModelConfig())
    model_opts["input_dim"] = args.input_dim if args.input_dim is not None else base_dim
    model_cfg = ModelConfig(vocab_size=vocab.size, **model_opts)
    train_cfg = train_mod.TrainConfig(**_gather(args, TRAIN_OPTS, train_mod.TrainConfig()))
    return vocab, model_cfg, train_cfg


def cmd_train(args):
    records = _load_records(args.data)
    valid = _load_records(args.valid)
    keywords = _split_keywords(args.keywords)
    vocab, model_cfg, train_cfg = _model_and_train_cfg(args, records)
    if args.system == "asr":
        model, metric_log = train_mod.train_asr_baseline(model_cfg, records, valid, train_cfg, vocab, keywords)
    else:
        model, metric_log = train_mod.train_rnnt(model_cfg, records, valid, train_cfg, vocab, keywords)
    save_checkpoint(model, args.out)
    if args.metrics:
        train_mod.save_metric_log(metric_log, args.metrics)


def cmd_mbr_finetune(args):
    records = _load_records(args.data)
    valid = _load_records(args.valid)
    vocab = Vocabulary.default()
    model = load_checkpoint(args.checkpoint)
    mbr_cfg = MbrConfig(**_gather(args, MBR_OPTS, MbrConfig()))
    train_cfg = train_mod.TrainConfig(**_gather(args, TRAIN_OPTS, train_mod.TrainConfig(learning_rate=1e-5)), stage="mbr")
    model, metric_log = train_mod.run_mbr_finetune(model, records, valid, mbr_cfg, train_cfg, vocab)
    save_checkpoint(model, args.out)
    if args.metrics:
        train_mod.save_metric_log(metric_log, args.metrics)


def cmd_decode(args):
    records = _load_records(args.data)
    vocab = Vocabulary.default()
    model = load_checkpoint(args.checkpoint)
    with open(args.out, "w", encoding="utf-8") as f:
        for rec in records:
            nbest = beam_search_nbest(model, rec.features, args.beam, args.nbest, args.max_symbols_per_frame)
            for rank, hyp in enumerate(nbest.hypotheses):
                f.write(json.dumps({
                    "utt_id": rec.id,
                    "rank": rank,
                    "tokens": list(hyp.tokens),
                    "text": detokenize(list(hyp.tokens), vocab),
                    "log_prob": hyp.log_prob,
                }) + "\n")


def cmd_score(args):
    records = _load_records(args.data)
    vocab = Vocabulary.default()
    model = load_checkpoint(args.checkpoint)
    keywords = _split_keywords(args.keywords) if args.keywords else None
    scores = train_mod.score_utterances(
        model, records, args.system, keywords, vocab, args.max_symbols_per_frame
    )
    scoring_mod.save_scores_csv(scores, args.out)


def cmd_eval(args):
    scored = scoring_mod.load_scores_csv(args.scores)
    metrics = eval_mod.evaluate_scores(scored)
    system = scored[0].system if scored else "system"
    eval_mod.write_report({system: metrics}, args.report)
    if args.det:
        eval_mod.write_det_csv(eval_mod.det_curve(scored), args.det)
    if args.svg:
        eval_mod.write_det_svg(eval_mod.det_curve(scored), args.svg, title=system)
    print(f"{system} eer={metrics['eer']:.6f} fn@1%fp={metrics['fn_at_1pct_fp']:.6f} fn@0.5%fp={metrics['fn_at_0.5pct_fp']:.6f}")


def cmd_fuse(args):
    systems = [scoring_mod.load_scores_csv(p) for p in args.scores]
    fused = scoring_mod.fuse_score_lists(systems, args.system)
    scoring_mod.save_scores_csv(fused, args.out)


def cmd_det(args):
    scored = scoring_mod.load_scores_csv(args.scores)
    curve = eval_mod.det_curve(scored)
    eval_mod.write_det_csv(curve, args.out)
    if args.svg:
        eval_mod.write_det_svg(curve, args.svg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kwspot", description=__doc__)
    parser.add_argument("--config", default=None, help="INI config file with one section per subcommand")
    parser.add_argument("--jobs", type=int, default=None, help="bound on utterance-level parallelism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic JSONL corpus")
    p.add_argument("--keywords", default="okay google,hey google")
    p.add_argument("--out", required=True)
    _add_opts(p, SYNTH_OPTS)
    _add_opts(p, STACK_OPTS)
    p.set_defaults(func=cmd_synth_data, opt_tables=[SYNTH_OPTS, STACK_OPTS])

    p = sub.add_parser("train", help="train a transducer (kws or verbatim asr baseline)")
    p.add_argument("--data", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--keywords", default="okay google,hey google")
    p.add_argument("--system", choices=["ttkws", "asr"], default="ttkws")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None)
    _add_opts(p, MODEL_OPTS)
    _add_opts(p, TRAIN_OPTS)
    p.set_defaults(func=cmd_train, opt_tables=[MODEL_OPTS, TRAIN_OPTS])

    p = sub.add_parser("mbr-finetune", help="fine-tune a warm-started checkpoint with the keyword MBR loss")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None)
    _add_opts(p, MBR_OPTS)
    _add_opts(p, TRAIN_OPTS)
    p.set_defaults(func=cmd_mbr_finetune, opt_tables=[MBR_OPTS, TRAIN_OPTS])

    p = sub.add_parser("decode", help="beam-search N-best decoding to JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--nbest", type=int, default=4)
    p.add_argument("--max-symbols-per-frame", type=int, default=3)
    p.set_defaults(func=cmd_decode, opt_tables=[])

    p = sub.add_parser("score", help="confidence-score a dataset to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--system", default="ttkws")
    p.add_argument("--keywords", default=None,
                   help="score with bigram edit distance against these keywords (asr baseline)")
    p.add_argument("--max-symbols-per-frame", type=int, default=3)
    p.set_defaults(func=cmd_score, opt_tables=[])

    p = sub.add_parser("eval", help="EER / FN-at-FP report from a score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--det", default=None)
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_eval, opt_tables=[])

    p = sub.add_parser("fuse", help="sum-fuse two or more score CSVs")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--system", default="fusion")
    p.set_defaults(func=cmd_fuse, opt_tables=[])

    p = sub.add_parser("det", help="DET curve CSV (and optional SVG) from a score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_det, opt_tables=[])

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, args.command, args.opt_tables)
        args.func(args)
    except SystemExit:
        raise
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
