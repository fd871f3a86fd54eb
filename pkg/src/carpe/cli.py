"""Command-line surface.

Subcommands: gen-corpus, pretrain, finetune, eval, probe, ctx-report,
merge, gradcheck. Each takes an optional JSON config file plus repeated
--set section.key=value overrides; commands operating on a checkpoint
start from the config snapshot stored inside it.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from . import corpus
from .checkpoint import content_hash, load_checkpoint, save_checkpoint, wiseft_merge
from .config import config_from_dict, load_config
from .errors import CarpeError


def _load_overridden(ck_config, path, overrides):
    """Checkpoint config as the base, file + overrides layered on top."""
    doc = {k: dict(v) for k, v in ck_config.items()}
    if path:
        with open(path) as fh:
            for section, values in json.load(fh).items():
                doc.setdefault(section, {}).update(values)
    for item in overrides or ():
        key, raw = item.split("=", 1)
        section, name = key.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        doc.setdefault(section, {})[name] = value
    return config_from_dict(doc)


def _make_split(name, cfg, vocab, max_samples=None):
    if name == "eval":
        samples = corpus.eval_split(vocab, cfg.data.eval_cls, cfg.data.eval_reasoning, seed=cfg.eval.seed)
    elif name == "ood":
        samples = corpus.ood_split(vocab, cfg.data.ood_size, seed=cfg.eval.seed + 1)
    elif name == "train":
        samples = corpus.training_stream(
            vocab, cfg.data.samples_per_epoch, seed=cfg.data.seed * 1009 + 1, ratio=cfg.data.mix_ratio
        )
    else:
        raise CarpeError(f"unknown split {name!r}")
    return samples[:max_samples] if max_samples else samples


def cmd_gen_corpus(args):
    cfg = load_config(args.config, args.set)
    sizes = {
        "train_per_epoch": cfg.data.samples_per_epoch,
        "eval_classification": cfg.data.eval_cls,
        "eval_reasoning": cfg.data.eval_reasoning,
        "ood": cfg.data.ood_size,
    }
    manifest = corpus.write_manifest(args.out, cfg.data.seed, sizes)
    print(f"wrote {args.out} (template bank {manifest['template_bank_sha256'][:12]}, "
          f"vocab {manifest['vocab_size']})")
    return 0


def cmd_pretrain(args):
    from .training import pretrain_all

    cfg = load_config(args.config, args.set)
    result = pretrain_all(cfg, args.out_dir)
    pre, post = result["caption_accuracy"]
    print(f"base checkpoint: {result['base']}")
    print(f"caption accuracy before/after adapter alignment: {pre:.3f} -> {post:.3f}")
    print(f"pretraining took {result['seconds']:.1f}s")
    return 0


def cmd_finetune(args):
    from .training import finetune_carpe

    base_ck = load_checkpoint(args.base)
    cfg = _load_overridden(base_ck.config, args.config, args.set)
    result = finetune_carpe(args.base, cfg, args.out_dir)
    print(f"final checkpoint: {result['final']}")
    print(f"fine-tune took {result['seconds']:.1f}s")
    return 0


def cmd_eval(args):
    from .evaluate import eval_zero_shot, model_from_checkpoint, write_report

    ck = load_checkpoint(args.ckpt)
    cfg = _load_overridden(ck.config, args.config, args.set)
    vocab = corpus.build_vocab()
    model = model_from_checkpoint(ck, len(vocab))
    samples = _make_split(args.split, cfg, vocab, args.max_samples)
    report = eval_zero_shot(
        model, samples, vocab, split=args.split, force_alpha=args.force_alpha,
        max_tokens=cfg.eval.max_answer_tokens,
    )
    rows_path = write_report(report, args.out)
    print(f"split={args.split} n={report.n} accuracy={report.accuracy:.4f} "
          f"mean_alpha={report.mean_alpha:.4f} (rows: {rows_path})")
    print(f"checkpoint hash: {content_hash(ck)[:16]}, split seed: {cfg.eval.seed}")
    return 0


def cmd_probe(args):
    from .evaluate import model_from_checkpoint, probe_split

    ck = load_checkpoint(args.ckpt)
    cfg = _load_overridden(ck.config, args.config, args.set)
    vocab = corpus.build_vocab()
    model = model_from_checkpoint(ck, len(vocab))
    samples = _make_split(args.split, cfg, vocab, args.max_samples)
    reports = [
        probe_split(model, samples, vocab, source, folds=args.folds, seed=cfg.eval.seed)
        for source in ("vision_pooled", "llm_pooled")
    ]
    doc = {"format_version": 1, "split": args.split, "reports": [vars(r) for r in reports]}
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for r in reports:
        print(f"{r.feature_source}: probe={r.probe_accuracy:.4f} zero_shot={r.zero_shot_accuracy:.4f}")
    return 0


def cmd_ctx_report(args):
    from .evaluate import model_from_checkpoint, report_context_weights

    ck = load_checkpoint(args.ckpt)
    cfg = _load_overridden(ck.config, args.config, args.set)
    vocab = corpus.build_vocab()
    model = model_from_checkpoint(ck, len(vocab))
    n = args.max_samples
    sets = {
        "classification": corpus.eval_split(vocab, cfg.data.eval_cls, 0, seed=cfg.eval.seed)[: n or None],
        "reasoning": corpus.eval_split(vocab, 0, cfg.data.eval_reasoning, seed=cfg.eval.seed)[: n or None],
    }
    table = report_context_weights(model, sets)
    with open(args.out, "w") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{'task kind':<16} {'vision weight':>13} {'language weight':>16} {'n':>5}")
    for row in table["rows"]:
        print(f"{row['task_kind']:<16} {row['mean_alpha']:>13.4f} {row['mean_beta']:>16.4f} {row['n']:>5}")
    return 0


def cmd_merge(args):
    ck_a = load_checkpoint(args.ckpt_a)
    ck_b = load_checkpoint(args.ckpt_b)
    merged = wiseft_merge(ck_a, ck_b, args.coeff)
    save_checkpoint(merged, args.out)
    print(f"merged with coeff {args.coeff}: {args.out}")
    return 0


def cmd_gradcheck(args):
    from .verification import run_full_gradcheck

    t0 = time.time()
    report = run_full_gradcheck(eps=args.eps, tol=args.tol)
    print(report.summary())
    print(f"checked {sum(report.checked_coords.values())} coordinates over "
          f"{len(report.per_param)} tensors in {time.time() - t0:.1f}s")
    return 0 if report.passed else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="carpe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value")

    p = sub.add_parser("gen-corpus", help="write the corpus manifest")
    common(p)
    p.add_argument("--out", default="manifest.json")
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("pretrain", help="pretrain experts, LM and adapters")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune the ensemble from a base checkpoint")
    common(p)
    p.add_argument("--base", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="zero-shot evaluation of a checkpoint")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("eval", "ood", "train"), default="eval")
    p.add_argument("--out", default="eval_report.json")
    p.add_argument("--force-alpha", type=float, default=None,
                   help="bypass the context encoder (degeneracy/ablation only)")
    p.add_argument("--max-samples", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("probe", help="linear probing vs zero-shot on one split")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("eval", "ood", "train"), default="ood")
    p.add_argument("--out", default="probe_report.json")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--max-samples", type=int, default=None)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("ctx-report", help="mean context weights per task kind")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", default="ctx_report.json")
    p.add_argument("--max-samples", type=int, default=None)
    p.set_defaults(fn=cmd_ctx_report)

    p = sub.add_parser("merge", help="parameter-space interpolation of two checkpoints")
    p.add_argument("--coeff", type=float, required=True)
    p.add_argument("ckpt_a")
    p.add_argument("ckpt_b")
    p.add_argument("out")
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CarpeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
