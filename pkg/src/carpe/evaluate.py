"""Evaluation harnesses: zero-shot generation accuracy, linear probing
of frozen features, and the context-weight report."""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.linear_model import LogisticRegression

from . import corpus
from .checkpoint import load_into_model
from .config import config_from_dict
from .ensemble import CarpeModel, carpe_forward, greedy_decode
from .errors import DataError
from .vision import pool

REPORT_FORMAT_VERSION = 1


def normalize_answer(text: str) -> str:
    return corpus.normalize_text(text)


def model_from_checkpoint(ck, vocab_size) -> CarpeModel:
    model_cfg = config_from_dict({"model": ck.config["model"]}).model
    model = CarpeModel(model_cfg, vocab_size)
    return load_into_model(model, ck, strict=True)


@dataclass
class EvalReport:
    split: str
    n: int
    accuracy: float
    per_class: dict
    mean_alpha: float
    mean_beta: float
    expert_usage: list
    force_alpha: object = None
    format_version: int = REPORT_FORMAT_VERSION
    rows: list = field(default_factory=list)

    def summary_dict(self):
        d = asdict(self)
        d.pop("rows")
        return d


def eval_zero_shot(model, samples, vocab, split="eval", force_alpha=None, max_tokens=8):
    """Greedy generation through the ensembled logits, exact match on
    the normalized answer string; per-sample traces are kept as rows."""
    if not samples:
        raise DataError("empty evaluation split")
    rows = []
    per_class = {}
    usage = np.zeros(model.n_experts, dtype=int)
    alphas, betas = [], []
    correct = 0
    for i, s in enumerate(samples):
        out_ids, trace = greedy_decode(
            model, s.image, s.prompt_ids, max_tokens=max_tokens, force_alpha=force_alpha
        )
        prediction = normalize_answer(vocab.decode(out_ids))
        gold = normalize_answer(s.answer_text)
        ok = prediction == gold
        correct += ok
        usage[trace.expert_index] += 1
        alphas.append(trace.alpha)
        betas.append(trace.beta)
        bucket = per_class.setdefault(gold, [0, 0])
        bucket[0] += ok
        bucket[1] += 1
        rows.append(
            {
                "sample": i,
                "task_kind": s.task_kind,
                "alpha": trace.alpha,
                "beta": trace.beta,
                "expert_index": trace.expert_index,
                "gate_prob": trace.gate_prob,
                "correct": bool(ok),
                "prediction": prediction,
                "answer": gold,
            }
        )
    return EvalReport(
        split=split,
        n=len(samples),
        accuracy=correct / len(samples),
        per_class={k: v[0] / v[1] for k, v in sorted(per_class.items())},
        mean_alpha=float(np.mean(alphas)),
        mean_beta=float(np.mean(betas)),
        expert_usage=usage.tolist(),
        force_alpha=force_alpha,
        rows=rows,
    )


def write_report(report, path):
    """Summary JSON next to a JSONL row file (<path>.jsonl)."""
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(report.summary_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows_path = path.with_suffix(path.suffix + "l") if path.suffix == ".json" else Path(str(path) + "l")
    with open(rows_path, "w") as fh:
        fh.write(json.dumps({"kind": "header", "format_version": REPORT_FORMAT_VERSION}) + "\n")
        for row in report.rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return rows_path


# ---------------------------------------------------------------------------
# linear probing


def linear_probe(features, k_classes, folds=5, seed=0):
    """Mean held-fold accuracy of a full-batch multinomial logistic
    regression over frozen feature vectors.

    features: list of (vector, label). Fold assignment is a seeded
    permutation, so two feature sources probed with the same seed get
    identical folds (paired comparison)."""
    if folds < 2:
        raise DataError("need at least 2 folds")
    labels = np.array([int(l) for _, l in features])
    counts = np.bincount(labels, minlength=k_classes)
    present = np.flatnonzero(counts)
    if any(counts[present] < folds):
        raise DataError(f"a class has fewer than {folds} samples: {counts.tolist()}")
    x = np.stack([np.asarray(v, dtype=np.float64) for v, _ in features])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(features))
    fold_of = np.empty(len(features), dtype=int)
    fold_of[order] = np.arange(len(features)) % folds
    accs = []
    for f in range(folds):
        test = fold_of == f
        clf = LogisticRegression(max_iter=2000, tol=1e-8, C=10.0)
        clf.fit(x[~test], labels[~test])
        accs.append(float(clf.score(x[test], labels[test])))
    return float(np.mean(accs))


@dataclass
class ProbeReport:
    feature_source: str
    probe_accuracy: float
    zero_shot_accuracy: float
    n: int
    folds: int
    format_version: int = REPORT_FORMAT_VERSION


def probe_features(model, samples, source):
    """Frozen feature vectors for probing.

    vision_pooled: mean-pooled base-expert patch features.
    llm_pooled: mean-pooled final-layer hidden states over the text span
    (the answer-preceding positions) of the multimodal forward."""
    feats = []
    for s in samples:
        if source == "vision_pooled":
            vec = pool(model.experts[0].encode(s.image)).data
        elif source == "llm_pooled":
            out = carpe_forward(model, s.image, s.prompt_ids)
            lo, hi = out.fwd.text_slice()
            vec = out.fwd.h_llm.data[lo:hi].mean(axis=0)
        else:
            raise DataError(f"unknown feature source {source!r}")
        feats.append(vec)
    return feats


def probe_split(model, samples, vocab, source, folds=5, seed=0, max_tokens=8):
    """ProbeReport pairing probe accuracy with zero-shot generative
    accuracy on the identical sample set."""
    label_names = sorted({s.answer_text for s in samples})
    label_of = {a: i for i, a in enumerate(label_names)}
    feats = probe_features(model, samples, source)
    paired = list(zip(feats, [label_of[s.answer_text] for s in samples]))
    probe_acc = linear_probe(paired, k_classes=len(label_names), folds=folds, seed=seed)
    zero_shot = eval_zero_shot(model, samples, vocab, split="probe", max_tokens=max_tokens)
    return ProbeReport(
        feature_source=source,
        probe_accuracy=probe_acc,
        zero_shot_accuracy=zero_shot.accuracy,
        n=len(samples),
        folds=folds,
    )


# ---------------------------------------------------------------------------
# context-weight report


def report_context_weights(model, prompt_sets):
    """Mean (alpha, beta) per task kind from forward traces; rows sum to
    one by construction of the context encoder."""
    table = []
    for kind in sorted(prompt_sets):
        samples = prompt_sets[kind]
        if not samples:
            raise DataError(f"empty prompt set {kind!r}")
        alphas, betas = [], []
        for s in samples:
            out = carpe_forward(model, s.image, s.prompt_ids)
            alphas.append(out.trace.alpha)
            betas.append(out.trace.beta)
        table.append(
            {
                "task_kind": kind,
                "mean_alpha": float(np.mean(alphas)),
                "mean_beta": float(np.mean(betas)),
                "n": len(samples),
            }
        )
    return {"format_version": REPORT_FORMAT_VERSION, "rows": table}
