"""The context-aware ensemble: a learnable context prompt, a linear
context encoder producing the (vision, language) weights, top-1 routing
over the vision experts, and the weighted logit sum

    Z = alpha * Z_vision + beta * Z_llm

with both streams sharing the vocabulary head. The context weights and
the routing decision are functions of H_context from the text-only pass,
so they cannot depend on the image.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .corpus import Vocab
from .errors import ShapeError
from .integrator import Adapter, VisionIntegrator
from .lm import LanguageModel
from .vision import make_expert_bank


def context_weights(w_context, h_context):
    """(alpha, beta) = softmax(W_context @ H_context); alpha weights the
    vision stream, beta the language stream; they sum to one."""
    d = h_context.shape[0]
    if w_context.shape != (2, d):
        raise ShapeError(f"context encoder {w_context.shape} vs hidden {h_context.shape}")
    z = T.reshape(T.matmul(w_context, T.reshape(h_context, (d, 1))), (2,))
    p = T.softmax(z)
    return T.narrow(p, 0, 0, 1), T.narrow(p, 0, 1, 1)


def route(w_route, h_context):
    """Top-1 gating: softmax router probabilities, argmax with
    lowest-index tie-break; the gate probability stays in the graph so
    the router trains through the selected expert's scaled features."""
    d = h_context.shape[0]
    n_experts = w_route.shape[0]
    if w_route.shape != (n_experts, d):
        raise ShapeError(f"router {w_route.shape} vs hidden {h_context.shape}")
    z = T.reshape(T.matmul(w_route, T.reshape(h_context, (d, 1))), (n_experts,))
    p = T.softmax(z)
    index = int(np.argmax(p.data))  # np.argmax takes the first maximum
    gate = T.narrow(p, 0, index, 1)
    return index, gate, p.data.copy()


def ensemble_logits(z_vision, z_llm, alpha, beta):
    """Elementwise weighted sum of the two logit streams."""
    if z_vision.shape != z_llm.shape:
        raise ShapeError(f"logit streams disagree: {z_vision.shape} vs {z_llm.shape}")
    return T.add(T.scale(z_vision, alpha), T.scale(z_llm, beta))


@dataclass
class EnsembleTrace:
    alpha: float
    beta: float
    expert_index: int
    gate_prob: float
    router_probs: np.ndarray
    z_vision: T.Tensor
    z_llm: T.Tensor
    z: T.Tensor


@dataclass
class CarpeOutput:
    z: T.Tensor  # ensembled logits [N, V]
    trace: EnsembleTrace
    fwd: object  # language ForwardTrace
    h_vision: T.Tensor
    h_context: T.Tensor


class CarpeModel:
    """Vision experts + adapters + language model + integrator + context
    prompt/encoder + router, with named parameter groups."""

    def __init__(self, cfg: ModelConfig, vocab_size, init_seed=0):
        self.cfg = cfg
        self.vocab_size = vocab_size
        expert_cfgs = cfg.active_experts
        self.experts = make_expert_bank(expert_cfgs)
        self.adapters = [
            Adapter(e.d_v, cfg.adapter_hidden, cfg.d_model, init_seed=2000 + e.init_seed)
            for e in expert_cfgs
        ]
        self.lm = LanguageModel(cfg, vocab_size, init_seed=7)
        rng = np.random.default_rng(3000 + init_seed)
        self.integrator = VisionIntegrator(
            cfg.d_model, cfg.integrator_heads, cfg.integrator_depth, cfg.mlp_mult, init_seed=4000 + init_seed
        )
        self.context_prompt = T.normal_init(rng, (cfg.d_model,), 0.02)
        self.w_context = T.zeros_init((2, cfg.d_model))  # starts at (0.5, 0.5)
        self.w_route = T.normal_init(rng, (len(self.experts), cfg.d_model), 0.02)

    @property
    def n_experts(self):
        return len(self.experts)

    def named_params(self):
        """(name, group, tensor) for every parameter; the groups
        partition the full parameter set."""
        out = []
        from .nn import flatten_params

        for i, enc in enumerate(self.experts):
            for name, t in flatten_params(enc.params, f"expert{i}"):
                out.append((name, "vision_encoders", t))
        for i, ad in enumerate(self.adapters):
            for name, t in flatten_params(ad.params, f"adapter{i}"):
                out.append((name, "adapter", t))
        for name, t in flatten_params(self.lm.params):
            if name == "tok":
                out.append((name, "token_embed", t))
            elif name == "w_head":
                out.append((name, "w_head", t))
            else:
                out.append((name, "lm_body", t))
        for name, t in flatten_params(self.integrator.params, "integrator"):
            out.append((name, "integrator", t))
        out.append(("context_prompt", "context_prompt", self.context_prompt))
        out.append(("w_context", "context_encoder", self.w_context))
        out.append(("w_route", "router", self.w_route))
        return out

    def param_dict(self):
        return {name: t for name, _, t in self.named_params()}


def encode_routed(model, image, h_context):
    """Route on the context, run only the selected expert, adapt and
    scale by the gate probability."""
    index, gate, router_probs = route(model.w_route, h_context)
    raw = model.experts[index].encode(image)
    adapted = model.adapters[index].apply(raw)
    return T.scale(adapted, gate), index, gate, router_probs


def carpe_forward(model, image, prompt_ids, extra_text_ids=(), force_alpha=None):
    """Full pipeline for one sample.

    extra_text_ids extends the text after the prompt (teacher-forced
    answer tokens during training, generated tokens during decoding);
    the context pass sees only the prompt, which is the instruction.
    force_alpha bypasses the context encoder for degeneracy checks.
    """
    h_context = model.lm.context_pass(prompt_ids, model.context_prompt)
    vision_kv, expert_index, gate, router_probs = encode_routed(model, image, h_context)
    text_ids = list(prompt_ids) + list(extra_text_ids)
    fwd = model.lm.forward(text_ids, image_embeds=vision_kv, ctx_embed=model.context_prompt)
    queries = fwd.h_penult if model.cfg.integrator_queries == "penultimate" else fwd.h_llm
    h_vision = model.integrator.integrate(queries, vision_kv, fwd.attn_mask)
    z_vision = model.lm.logits(h_vision)
    z_llm = model.lm.logits(fwd.h_llm)
    if force_alpha is None:
        alpha, beta = context_weights(model.w_context, h_context)
    else:
        alpha = T.Tensor([float(force_alpha)])
        beta = T.Tensor([1.0 - float(force_alpha)])
    z = ensemble_logits(z_vision, z_llm, alpha, beta)
    trace = EnsembleTrace(
        alpha=alpha.item(),
        beta=beta.item(),
        expert_index=expert_index,
        gate_prob=gate.item(),
        router_probs=router_probs,
        z_vision=z_vision,
        z_llm=z_llm,
        z=z,
    )
    return CarpeOutput(z=z, trace=trace, fwd=fwd, h_vision=h_vision, h_context=h_context)


def answer_loss(model, sample, force_alpha=None):
    """Cross-entropy on the answer tokens only (next-token prediction);
    prompt and image positions carry exactly zero loss gradient."""
    answer = list(sample.answer_ids) + [Vocab.EOS]
    out = carpe_forward(
        model, sample.image, sample.prompt_ids, extra_text_ids=answer[:-1], force_alpha=force_alpha
    )
    n = out.z.shape[0]
    targets = np.zeros(n, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    # first answer token sits right after [img][BOS, prompt]
    first_answer_pos = out.fwd.n_img + 1 + len(sample.prompt_ids)
    rows = np.arange(first_answer_pos - 1, first_answer_pos - 1 + len(answer))
    targets[rows] = answer
    mask[rows] = True
    loss = T.cross_entropy(out.z, targets, mask)
    return loss, out


def greedy_decode(model, image, prompt_ids, max_tokens=8, force_alpha=None, stream=None):
    """Greedy decoding over the ensembled logits. The context weights
    and the routed expert come from the prefill context pass and stay
    fixed for all steps. stream="vision"|"llm" decodes a single stream
    instead (reference path for degeneracy checks)."""
    h_context = model.lm.context_pass(prompt_ids, model.context_prompt)
    vision_kv, expert_index, gate, router_probs = encode_routed(model, image, h_context)
    if force_alpha is None:
        alpha_t, beta_t = context_weights(model.w_context, h_context)
        alpha, beta = alpha_t.item(), beta_t.item()
    else:
        alpha, beta = float(force_alpha), 1.0 - float(force_alpha)
    generated = []
    for _ in range(max_tokens):
        text_ids = list(prompt_ids) + generated
        fwd = model.lm.forward(text_ids, image_embeds=vision_kv, ctx_embed=model.context_prompt)
        queries = fwd.h_penult if model.cfg.integrator_queries == "penultimate" else fwd.h_llm
        h_vision = model.integrator.integrate(queries, vision_kv, fwd.attn_mask)
        z_vision = model.lm.logits(h_vision).data
        z_llm = model.lm.logits(fwd.h_llm).data
        if stream == "vision":
            z = z_vision
        elif stream == "llm":
            z = z_llm
        else:
            z = alpha * z_vision + beta * z_llm
        last_text_pos = fwd.n_img + fwd.n_text - 1
        nxt = int(np.argmax(z[last_text_pos]))
        if nxt == Vocab.EOS:
            break
        generated.append(nxt)
    trace = EnsembleTrace(
        alpha=alpha,
        beta=beta,
        expert_index=expert_index,
        gate_prob=gate.item(),
        router_probs=router_probs,
        z_vision=None,
        z_llm=None,
        z=None,
    )
    return generated, trace
