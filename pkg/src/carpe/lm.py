"""Decoder-only toy language model with image-slot injection, a strictly
text-only context pass, and the shared vocabulary head.

Sequence layout of the main forward:

    [image slots][BOS, text tokens ...][CTX]

The CTX position carries the learnable context prompt embedding. Its
attention row additionally masks every image-slot column at every layer;
the context weights themselves are nevertheless computed from a second,
text-only pass (context_pass), which makes "text-only influence" an
exact invariant rather than a masking argument.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .corpus import Vocab
from .errors import ShapeError


@dataclass
class ForwardTrace:
    h_penult: T.Tensor  # output of block L-1, [N, d]
    h_llm: T.Tensor  # final-layer output after the closing norm, [N, d]
    n_img: int
    n_text: int  # BOS + text tokens
    ctx_index: int  # None when no context token is appended
    attn_mask: np.ndarray

    @property
    def seq_len(self):
        return self.h_llm.shape[0]

    def text_slice(self):
        return self.n_img, self.n_img + self.n_text


class LanguageModel:
    def __init__(self, cfg, vocab_size, init_seed=7):
        self.cfg = cfg
        self.vocab_size = vocab_size
        rng = np.random.default_rng(init_seed)
        d = cfg.d_model
        self.params = {
            "tok": T.normal_init(rng, (vocab_size, d), 0.02),
            "pos": T.normal_init(rng, (cfg.max_len, d), 0.01),
            "blocks": {str(i): nn.block_params(rng, d, cfg.mlp_mult) for i in range(cfg.layers)},
            "ln_f": nn.layer_norm_params(d),
            # shared vocabulary head, deliberately not tied to "tok"
            "w_head": T.normal_init(rng, (vocab_size, d), 0.02),
        }

    def _mask(self, n, n_img, ctx_index):
        mask = nn.causal_mask(n)
        if ctx_index is not None and n_img:
            mask[ctx_index, :n_img] = False
        return mask

    def _run_blocks(self, x, mask):
        states = [x]
        for i in range(self.cfg.layers):
            x = nn.transformer_block(x, self.params["blocks"][str(i)], self.cfg.heads, mask)
            states.append(x)
        return states

    def forward(self, text_ids, image_embeds=None, ctx_embed=None):
        """Causal forward over [image slots][BOS, text...][CTX]."""
        rows = []
        n_img = 0
        if image_embeds is not None:
            n_img = image_embeds.shape[0]
            rows.append(image_embeds)
        ids = [Vocab.BOS] + list(text_ids)
        rows.append(T.embedding(self.params["tok"], ids))
        ctx_index = None
        if ctx_embed is not None:
            ctx_index = n_img + len(ids)
            rows.append(T.reshape(ctx_embed, (1, self.cfg.d_model)))
        n = n_img + len(ids) + (1 if ctx_index is not None else 0)
        if n > self.cfg.max_len:
            raise ShapeError(f"sequence length {n} exceeds max_len {self.cfg.max_len}")
        x = T.add(T.concat_rows(rows), T.narrow(self.params["pos"], 0, 0, n))
        mask = self._mask(n, n_img, ctx_index)
        states = self._run_blocks(x, mask)
        return ForwardTrace(
            h_penult=states[self.cfg.layers - 1],
            h_llm=nn.apply_layer_norm(states[self.cfg.layers], self.params["ln_f"]),
            n_img=n_img,
            n_text=len(ids),
            ctx_index=ctx_index,
            attn_mask=mask,
        )

    def context_pass(self, text_ids, ctx_embed):
        """Second forward over [BOS, text...][CTX] with no image slots;
        returns the final hidden state at the CTX position, [d]."""
        trace = self.forward(text_ids, image_embeds=None, ctx_embed=ctx_embed)
        row = T.narrow(trace.h_llm, 0, trace.ctx_index, 1)
        return T.reshape(row, (self.cfg.d_model,))

    def logits(self, h):
        """Plain linear map onto the vocabulary: h @ W_head^T, no bias."""
        if h.shape[1] != self.cfg.d_model:
            raise ShapeError(f"hidden width {h.shape} vs head {self.params['w_head'].shape}")
        return T.matmul(h, T.transpose(self.params["w_head"]))

    def attention_probs(self, text_ids, image_embeds=None, ctx_embed=None):
        """Per-layer attention probabilities [layers, heads, N, N]; slow
        diagnostic path used by masking tests, not by training."""
        rows = []
        n_img = 0
        if image_embeds is not None:
            n_img = image_embeds.shape[0]
            rows.append(image_embeds)
        ids = [Vocab.BOS] + list(text_ids)
        rows.append(T.embedding(self.params["tok"], ids))
        ctx_index = None
        if ctx_embed is not None:
            ctx_index = n_img + len(ids)
            rows.append(T.reshape(ctx_embed, (1, self.cfg.d_model)))
        n = n_img + len(ids) + (1 if ctx_index is not None else 0)
        x = T.add(T.concat_rows(rows), T.narrow(self.params["pos"], 0, 0, n))
        mask = self._mask(n, n_img, ctx_index)
        out = []
        for i in range(self.cfg.layers):
            blk = self.params["blocks"][str(i)]
            normed = nn.apply_layer_norm(x, blk["ln1"])
            out.append(_attention_probabilities(normed, blk["attn"], self.cfg.heads, mask))
            x = nn.transformer_block(x, blk, self.cfg.heads, mask)
        return np.stack(out)


def _attention_probabilities(x, p, heads, mask):
    q = T.matmul(x, p["wq"]).data
    k = T.matmul(x, p["wk"]).data
    n, d = q.shape
    dh = d // heads
    probs = np.empty((heads, n, n))
    from . import backend as K

    for h in range(heads):
        qs = q[:, h * dh : (h + 1) * dh]
        ks = k[:, h * dh : (h + 1) * dh]
        scores = qs @ ks.T / np.sqrt(dh)
        scores = np.where(mask, scores, -np.inf)
        probs[h] = K.softmax_rows(np.ascontiguousarray(scores))
    return probs
