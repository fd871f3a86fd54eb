"""Stage-wise training: expert pretraining, text-only LM pretraining,
adapter alignment (the "base" model), then the ensemble fine-tune with
its freeze schedule.

Fine-tune trainable groups: adapter, w_head, integrator, router from the
start; context_encoder and context_prompt join after the first epoch.
vision_encoders, lm_body and token_embed stay frozen throughout.
"""

import json
import time
from pathlib import Path

import numpy as np

from . import corpus
from . import tensor as T
from .checkpoint import (
    Checkpoint,
    checkpoint_from_model,
    content_hash,
    load_checkpoint,
    save_checkpoint,
)
from .config import Config, config_from_dict, config_to_dict
from .corpus import TRAIN_PAIRS, Vocab, build_vocab
from .ensemble import CarpeModel, answer_loss
from .errors import CheckpointError
from .optim import AdamW, ParamGroup
from .vision import pool as vision_pool

FINETUNE_GROUPS = ("adapter", "w_head", "integrator", "context_encoder", "context_prompt", "router")
FROZEN_GROUPS = ("vision_encoders", "lm_body", "token_embed")
CONTEXT_GROUPS = ("context_encoder", "context_prompt")


class RunLog:
    """Append-only JSONL training log."""

    def __init__(self, path):
        self.path = Path(path) if path is not None else None
        self.rows = []

    def emit(self, **row):
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def _batches(samples, batch_size):
    n_full = len(samples) // batch_size
    for i in range(n_full):
        yield samples[i * batch_size : (i + 1) * batch_size]


def group_tensors(model):
    buckets = {}
    for name, group, t in model.named_params():
        buckets.setdefault(group, []).append((name, t))
    return buckets


def _freeze_all(model):
    for _, _, t in model.named_params():
        t.requires_grad = False


# ---------------------------------------------------------------------------
# generic LM losses (pretraining path: no context token, no ensemble)


def lm_answer_loss(lm, prompt_ids, answer_ids, image_embeds=None):
    answer = list(answer_ids) + [Vocab.EOS]
    text = list(prompt_ids) + answer[:-1]
    trace = lm.forward(text, image_embeds=image_embeds, ctx_embed=None)
    logits = lm.logits(trace.h_llm)
    n = logits.shape[0]
    targets = np.zeros(n, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    first = trace.n_img + 1 + len(prompt_ids)
    rows = np.arange(first - 1, first - 1 + len(answer))
    targets[rows] = answer
    mask[rows] = True
    return T.cross_entropy(logits, targets, mask)


def lm_greedy_decode(lm, prompt_ids, image_embeds=None, max_tokens=8):
    generated = []
    for _ in range(max_tokens):
        trace = lm.forward(list(prompt_ids) + generated, image_embeds=image_embeds, ctx_embed=None)
        z = lm.logits(trace.h_llm).data
        nxt = int(np.argmax(z[trace.n_img + trace.n_text - 1]))
        if nxt == Vocab.EOS:
            break
        generated.append(nxt)
    return generated


def _train_steps(loss_fn, samples, optimizer, batch_size, log, stage, epoch=1, extra=None):
    """One pass over samples in fixed-size batches; returns mean loss."""
    losses = []
    for step, batch in enumerate(_batches(samples, batch_size)):
        optimizer.zero_grad()
        batch_losses = []
        for j, sample in enumerate(batch):
            loss = loss_fn(sample, step, j)
            T.scale_const(loss, 1.0 / len(batch)).backward()
            batch_losses.append(loss.item())
        optimizer.step()
        mean = float(np.mean(batch_losses))
        losses.append(mean)
        row = {"kind": "step", "stage": stage, "epoch": epoch, "step": step, "loss": round(mean, 6)}
        if extra is not None:
            row.update(extra(step))
        log.emit(**row)
    return float(np.mean(losses)) if losses else float("nan")


# ---------------------------------------------------------------------------
# pretraining stages


def _pretrain_stage_a(model, cfg, log):
    """Each expert learns a throwaway linear classification head over
    the 18 in-distribution (color, shape) classes; heads are dropped."""
    n_classes = len(TRAIN_PAIRS)
    for i, (enc, ecfg) in enumerate(zip(model.experts, model.cfg.active_experts)):
        rng = np.random.default_rng(500 + ecfg.init_seed)
        head_w = T.normal_init(rng, (ecfg.d_v, n_classes), 0.02)
        head_b = T.zeros_init((n_classes,))
        _freeze_all(model)
        groups = [
            ParamGroup(f"expert{i}", group_tensors(model)["vision_encoders"], cfg.train.vision_lr, 0.0),
            ParamGroup("head", [("w", head_w), ("b", head_b)], cfg.train.vision_lr, 0.0),
        ]
        # only this expert's tensors should train
        groups[0].tensors = [(n, t) for n, t in groups[0].tensors if n.startswith(f"expert{i}.")]
        for g in groups:
            g.apply_trainable_flag()
        opt = AdamW(groups, cfg.train.betas, cfg.train.adam_eps)
        examples = corpus.label_examples(cfg.train.expert_samples, seed=cfg.data.seed * 1009 + 31 + i)
        steps_needed = cfg.train.expert_steps
        per_pass = max(1, len(examples) // cfg.train.batch_size)

        def loss_fn(example, step, j):
            image, label = example
            pooled = T.reshape(corpus_pool(enc, image), (1, ecfg.d_v))
            logits = T.add_row(T.matmul(pooled, head_w), head_b)
            return T.cross_entropy(logits, [label], np.ones(1, dtype=bool))

        passes = (steps_needed + per_pass - 1) // per_pass
        for p in range(passes):
            _train_steps(loss_fn, examples, opt, cfg.train.batch_size, log, f"pretrain_expert{i}", epoch=p + 1)
        acc = _label_accuracy(enc, head_w, head_b, examples)
        log.emit(kind="stage", stage=f"pretrain_expert{i}", train_accuracy=round(acc, 4))


def corpus_pool(enc, image):
    return vision_pool(enc.encode(image))


def _label_accuracy(enc, head_w, head_b, examples):
    correct = 0
    for image, label in examples:
        pooled = corpus_pool(enc, image).data
        logits = pooled @ head_w.data + head_b.data
        correct += int(np.argmax(logits)) == label
    return correct / len(examples)


def _pretrain_stage_b(model, vocab, cfg, log):
    """Text-only QA: teaches the LM the prompt/answer formats."""
    _freeze_all(model)
    buckets = group_tensors(model)
    groups = [
        ParamGroup("lm_body", buckets["lm_body"], cfg.train.other_lr, cfg.train.weight_decay),
        ParamGroup("token_embed", buckets["token_embed"], cfg.train.other_lr, cfg.train.weight_decay),
        ParamGroup("w_head", buckets["w_head"], cfg.train.other_lr, cfg.train.weight_decay),
    ]
    for g in groups:
        g.apply_trainable_flag()
    opt = AdamW(groups, cfg.train.betas, cfg.train.adam_eps)
    pairs = corpus.text_stream(cfg.train.lm_samples, seed=cfg.data.seed * 1009 + 41)
    encoded = [(vocab.encode(p), vocab.encode(a)) for p, a in pairs]

    def loss_fn(pair, step, j):
        prompt, answer = pair
        return lm_answer_loss(model.lm, prompt, answer)

    per_pass = max(1, len(encoded) // cfg.train.batch_size)
    passes = (cfg.train.lm_steps + per_pass - 1) // per_pass
    mean = float("nan")
    for p in range(passes):
        mean = _train_steps(loss_fn, encoded, opt, cfg.train.batch_size, log, "pretrain_lm", epoch=p + 1)
    log.emit(kind="stage", stage="pretrain_lm", final_loss=round(mean, 4))


def _caption_accuracy(model, vocab, samples, expert_index=0):
    enc = model.experts[expert_index]
    adapter = model.adapters[expert_index]
    correct = 0
    for s in samples:
        embeds = adapter.apply(enc.encode(s.image))
        out = lm_greedy_decode(model.lm, s.prompt_ids, embeds, max_tokens=8)
        correct += vocab.decode(out) == s.answer_text
    return correct / len(samples)


def _pretrain_stage_c(model, vocab, cfg, log):
    """Adapter alignment on single-object captions; experts take turns
    (step round-robin) so every adapter is language-aligned."""
    _freeze_all(model)
    buckets = group_tensors(model)
    groups = [
        ParamGroup("adapter", buckets["adapter"], cfg.train.other_lr, cfg.train.weight_decay),
        ParamGroup("w_head", buckets["w_head"], cfg.train.other_lr, cfg.train.weight_decay),
    ]
    for g in groups:
        g.apply_trainable_flag()
    opt = AdamW(groups, cfg.train.betas, cfg.train.adam_eps)
    samples = corpus.caption_stream(vocab, cfg.train.adapter_samples, seed=cfg.data.seed * 1009 + 51)
    eval_samples = samples[:64]  # train-split metric
    acc_pre = _caption_accuracy(model, vocab, eval_samples)
    n_exp = len(model.experts)

    def loss_fn(sample, step, j):
        e = step % n_exp
        embeds = model.adapters[e].apply(model.experts[e].encode(sample.image))
        return lm_answer_loss(model.lm, sample.prompt_ids, sample.answer_ids, embeds)

    per_pass = max(1, len(samples) // cfg.train.batch_size)
    passes = (cfg.train.adapter_steps + per_pass - 1) // per_pass
    for p in range(passes):
        _train_steps(loss_fn, samples, opt, cfg.train.batch_size, log, "pretrain_adapter", epoch=p + 1)
    acc_post = _caption_accuracy(model, vocab, eval_samples)
    log.emit(
        kind="stage",
        stage="pretrain_adapter",
        caption_accuracy_before=round(acc_pre, 4),
        caption_accuracy_after=round(acc_post, 4),
    )
    return acc_pre, acc_post


def pretrain_all(cfg: Config, out_dir):
    """Stage A (experts) -> stage B (language model) -> stage C (adapter
    alignment); writes stage_a/stage_b/base checkpoints plus a log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = RunLog(out_dir / "pretrain_log.jsonl")
    t0 = time.time()
    vocab = build_vocab()
    model = CarpeModel(cfg.model, len(vocab), init_seed=cfg.train.seed)
    cfg_dict = config_to_dict(cfg)
    run_rng = np.random.default_rng(cfg.train.seed)

    _pretrain_stage_a(model, cfg, log)
    hash_a = save_checkpoint(
        checkpoint_from_model(model, cfg_dict, epoch=0, rng_state=_rng_state(run_rng), meta={"stage": "a"}),
        out_dir / "stage_a.ckpt",
    )
    _pretrain_stage_b(model, vocab, cfg, log)
    hash_b = save_checkpoint(
        checkpoint_from_model(model, cfg_dict, epoch=0, rng_state=_rng_state(run_rng), meta={"stage": "b"}),
        out_dir / "stage_b.ckpt",
    )
    acc_pre, acc_post = _pretrain_stage_c(model, vocab, cfg, log)
    meta = {
        "stage": "base",
        "stage_a_hash": hash_a,
        "stage_b_hash": hash_b,
        "caption_accuracy_before": acc_pre,
        "caption_accuracy_after": acc_post,
    }
    base_path = out_dir / "base.ckpt"
    save_checkpoint(
        checkpoint_from_model(model, cfg_dict, epoch=0, rng_state=_rng_state(run_rng), meta=meta),
        base_path,
    )
    elapsed = time.time() - t0
    log.emit(kind="stage", stage="pretrain_all", seconds=round(elapsed, 2))
    return {"base": base_path, "stage_a": out_dir / "stage_a.ckpt", "stage_b": out_dir / "stage_b.ckpt",
            "caption_accuracy": (acc_pre, acc_post), "seconds": elapsed}


def _rng_state(rng):
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=str))


# ---------------------------------------------------------------------------
# CARPE fine-tune

PRETRAINED_GROUPS = ("vision_encoders", "adapter", "lm_body", "token_embed", "w_head")


def model_from_base(base_ck: Checkpoint, cfg: Config, vocab_size):
    """Build a fine-tune model: pretrained groups come from the base
    checkpoint, the ensemble parts (integrator, context prompt/encoder,
    router) are freshly initialized from the fine-tune seed."""
    if "stage_a_hash" not in base_ck.meta or "stage_b_hash" not in base_ck.meta:
        raise CheckpointError("base checkpoint lacks stage A/B provenance hashes")
    base_model_cfg = dict(base_ck.config["model"])
    base_model_cfg["moe"] = cfg.model.moe
    model_cfg = config_from_dict({"model": base_model_cfg}).model
    model = CarpeModel(model_cfg, vocab_size, init_seed=cfg.train.seed)
    wanted = {name: (group, t) for name, group, t in model.named_params() if group in PRETRAINED_GROUPS}
    missing = [n for n in wanted if n not in base_ck.tensors]
    if missing:
        raise CheckpointError(f"base checkpoint misses pretrained tensors: {missing[:4]}")
    for name, (group, t) in wanted.items():
        ck_group, arr = base_ck.tensors[name]
        if ck_group != group or arr.shape != t.data.shape:
            raise CheckpointError(f"record {name}: group/shape mismatch against base checkpoint")
        t.data = arr.copy()
    return model, model_cfg


def build_finetune_groups(model, train_cfg):
    buckets = group_tensors(model)
    groups = []
    for name in FROZEN_GROUPS:
        groups.append(ParamGroup(name, buckets[name], 0.0, 0.0, trainable=False))
    for name in FINETUNE_GROUPS:
        trainable = name not in CONTEXT_GROUPS or train_cfg.freeze_context_epochs == 0
        groups.append(
            ParamGroup(name, buckets[name], train_cfg.lr_for(name), train_cfg.wd_for(name), trainable=trainable)
        )
    for g in groups:
        g.apply_trainable_flag()
    return groups


def finetune_carpe(base_ckpt_path, cfg: Config, out_dir):
    """Fine-tune on the 1:7 mixture with the context freeze schedule;
    saves a checkpoint per epoch plus the final one."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = RunLog(out_dir / "finetune_log.jsonl")
    t0 = time.time()
    vocab = build_vocab()
    base_ck = load_checkpoint(base_ckpt_path)
    model, model_cfg = model_from_base(base_ck, cfg, len(vocab))
    groups = build_finetune_groups(model, cfg.train)
    by_name = {g.name: g for g in groups}
    opt = AdamW(groups, cfg.train.betas, cfg.train.adam_eps)
    cfg_dict = config_to_dict(cfg)
    cfg_dict["model"] = config_to_dict(Config(model=model_cfg))["model"]
    run_rng = np.random.default_rng(cfg.train.seed)
    meta = {"stage": "carpe", "base_hash": content_hash(base_ck)}

    save_checkpoint(
        checkpoint_from_model(model, cfg_dict, epoch=0, rng_state=_rng_state(run_rng), meta=meta),
        out_dir / "epoch0.ckpt",
    )

    router = model.w_route
    for epoch in range(1, cfg.train.epochs + 1):
        for name in CONTEXT_GROUPS:
            by_name[name].trainable = epoch > cfg.train.freeze_context_epochs
            by_name[name].apply_trainable_flag()
        samples = corpus.training_stream(
            vocab, cfg.data.samples_per_epoch, seed=cfg.data.seed * 1009 + epoch, ratio=cfg.data.mix_ratio
        )
        usage = np.zeros(model.n_experts, dtype=int)
        alphas = []

        def loss_fn(sample, step, j):
            loss, out = answer_loss(model, sample)
            usage[out.trace.expert_index] += 1
            alphas.append(out.trace.alpha)
            return loss

        def extra(step):
            g = router.grad
            return {"router_grad_norm": float(np.linalg.norm(g)) if g is not None else 0.0}

        mean_loss = _train_steps(
            loss_fn, samples, opt, cfg.train.batch_size, log, "finetune", epoch=epoch, extra=extra
        )
        log.emit(
            kind="epoch",
            stage="finetune",
            epoch=epoch,
            mean_loss=round(mean_loss, 6),
            lr={g.name: (g.lr if g.trainable else 0.0) for g in groups},
            expert_usage=usage.tolist(),
            mean_alpha=round(float(np.mean(alphas)), 6) if alphas else None,
        )
        save_checkpoint(
            checkpoint_from_model(model, cfg_dict, epoch=epoch, rng_state=_rng_state(run_rng), meta=meta),
            out_dir / f"epoch{epoch}.ckpt",
        )

    final_path = out_dir / "carpe.ckpt"
    save_checkpoint(
        checkpoint_from_model(
            model, cfg_dict, epoch=cfg.train.epochs, rng_state=_rng_state(run_rng), meta=meta
        ),
        final_path,
    )
    elapsed = time.time() - t0
    log.emit(kind="stage", stage="finetune", seconds=round(elapsed, 2))
    return {"final": final_path, "out_dir": out_dir, "seconds": elapsed, "model": model}


def overfit_fixed_batch(base_ckpt_path, cfg: Config, n_samples=32, steps=500, log_path=None):
    """Memorization smoke test: one fixed batch, many steps; the context
    groups train from the start (the schedule is an epoch-level concern)."""
    vocab = build_vocab()
    base_ck = load_checkpoint(base_ckpt_path)
    model, _ = model_from_base(base_ck, cfg, len(vocab))
    train_cfg = cfg.train
    groups = build_finetune_groups(model, train_cfg)
    for g in groups:
        if g.name in CONTEXT_GROUPS:
            g.trainable = True
            g.apply_trainable_flag()
    opt = AdamW(groups, train_cfg.betas, train_cfg.adam_eps)
    batch = corpus.training_stream(vocab, n_samples, seed=cfg.data.seed * 1009 + 77, ratio=cfg.data.mix_ratio)
    log = RunLog(log_path)
    losses = []
    for step in range(steps):
        opt.zero_grad()
        batch_losses = []
        for sample in batch:
            loss, _ = answer_loss(model, sample)
            T.scale_const(loss, 1.0 / len(batch)).backward()
            batch_losses.append(loss.item())
        opt.step()
        losses.append(float(np.mean(batch_losses)))
        if step % 25 == 0 or step == steps - 1:
            log.emit(kind="step", stage="overfit", step=step, loss=round(losses[-1], 6))
    return losses, model
