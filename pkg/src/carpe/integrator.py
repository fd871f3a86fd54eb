"""Vision side of the ensemble: per-expert MLP adapters projecting raw
patch features into the language width, and the vision-integrator block
that fuses them with the language hidden states.

Output projections and the MLP second layer start at zero, so at
initialization the integrator is exactly the identity on its queries and
fine-tuning starts at the pretrained model's behavior.
"""

import numpy as np

from . import nn
from . import tensor as T
from .errors import PreconditionError, ShapeError


class Adapter:
    """Two-layer per-patch MLP, d_v -> hidden -> d, GELU between."""

    def __init__(self, d_v, d_hidden, d_model, init_seed):
        rng = np.random.default_rng(init_seed)
        self.d_v = d_v
        self.params = {
            "fc1": nn.linear(rng, d_v, d_hidden),
            "fc2": nn.linear(rng, d_hidden, d_model),
        }

    def apply(self, raw):
        if raw.shape[1] != self.d_v:
            raise ShapeError(f"adapter expects width {self.d_v}, got {raw.shape}")
        h = T.gelu(nn.apply_linear(raw, self.params["fc1"]))
        return nn.apply_linear(h, self.params["fc2"])


class VisionIntegrator:
    """Cross-attention (queries: LM hidden states, keys/values: adapted
    vision features), then masked self-attention, then an MLP; each
    sub-block is pre-norm residual."""

    def __init__(self, d_model, heads, depth, mlp_mult, init_seed):
        rng = np.random.default_rng(init_seed)
        self.heads = heads
        self.depth = depth
        self.params = {
            str(i): {
                "ln_c": nn.layer_norm_params(d_model),
                "cross": nn.attention_params(rng, d_model, zero_out=True),
                "ln_s": nn.layer_norm_params(d_model),
                "self": nn.attention_params(rng, d_model, zero_out=True),
                "ln_m": nn.layer_norm_params(d_model),
                "mlp": nn.mlp_params(rng, d_model, mlp_mult, zero_out=True),
            }
            for i in range(depth)
        }

    def integrate(self, h_queries, vision_kv, self_mask):
        """[N, d] queries + [P, d] adapted vision features -> H_vision."""
        if vision_kv.shape[0] == 0:
            raise PreconditionError("integrator requires at least one vision feature row")
        if vision_kv.shape[1] != h_queries.shape[1]:
            raise ShapeError(f"width mismatch: queries {h_queries.shape} vs kv {vision_kv.shape}")
        x = h_queries
        for i in range(self.depth):
            p = self.params[str(i)]
            x = T.add(x, nn.cross_attention(nn.apply_layer_norm(x, p["ln_c"]), vision_kv, p["cross"], self.heads))
            x = T.add(x, nn.self_attention(nn.apply_layer_norm(x, p["ln_s"]), p["self"], self.heads, self_mask))
            x = T.add(x, nn.apply_mlp(nn.apply_layer_norm(x, p["ln_m"]), p["mlp"]))
        return x
