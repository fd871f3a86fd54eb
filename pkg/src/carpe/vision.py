"""Patch-based toy vision encoders; four differing configurations act as
the expert pool for routed vision encoding."""

import numpy as np

from . import nn
from . import tensor as T
from .corpus import IMAGE_SIZE
from .errors import ConfigError, NumericError, ShapeError


def patchify(image, patch_size):
    """[3, 32, 32] image -> [P, 3*ps*ps] row-major patch matrix."""
    c, h, w = image.shape
    n = h // patch_size
    patches = image.reshape(c, n, patch_size, n, patch_size)
    patches = patches.transpose(1, 3, 0, 2, 4).reshape(n * n, c * patch_size * patch_size)
    return np.ascontiguousarray(patches)


class VisionEncoder:
    """Patch embedding + bidirectional transformer blocks + final norm."""

    def __init__(self, cfg, vocab_ignored=None):
        if IMAGE_SIZE % cfg.patch_size:
            raise ConfigError(f"patch size {cfg.patch_size} does not divide {IMAGE_SIZE}")
        if cfg.d_v % cfg.heads:
            raise ConfigError(f"d_v {cfg.d_v} not divisible by {cfg.heads} heads")
        self.cfg = cfg
        self.n_patches = (IMAGE_SIZE // cfg.patch_size) ** 2
        self.exec_count = 0  # instrumentation: one bump per encode()
        rng = np.random.default_rng(cfg.init_seed)
        in_dim = 3 * cfg.patch_size * cfg.patch_size
        self.params = {
            "patch": nn.linear(rng, in_dim, cfg.d_v),
            "pos": T.normal_init(rng, (self.n_patches, cfg.d_v), 0.02),
            "blocks": {str(i): nn.block_params(rng, cfg.d_v) for i in range(cfg.depth)},
            "ln_f": nn.layer_norm_params(cfg.d_v),
        }

    def _check_image(self, image):
        if image.shape != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise ShapeError(f"expected (3, {IMAGE_SIZE}, {IMAGE_SIZE}) image, got {image.shape}")
        if image.min() < 0.0 or image.max() > 1.0:
            raise NumericError("image values must lie in [0, 1]")

    def patch_embeddings(self, image):
        """Per-patch projections before positional encoding. Patches are
        standardized first (background level carries no class signal and
        drowns the shape contrast otherwise)."""
        self._check_image(image)
        p = patchify(image, self.cfg.patch_size)
        p = (p - p.mean(axis=1, keepdims=True)) / (p.std(axis=1, keepdims=True) + 1e-3)
        return nn.apply_linear(T.Tensor(p), self.params["patch"])

    def encode(self, image):
        """Raw vision features, one row per patch: [P, d_v]."""
        self.exec_count += 1
        x = T.add(self.patch_embeddings(image), self.params["pos"])
        for i in range(self.cfg.depth):
            x = nn.transformer_block(x, self.params["blocks"][str(i)], self.cfg.heads)
        return nn.apply_layer_norm(x, self.params["ln_f"])


def pool(features):
    """Mean over the patch axis."""
    return T.mean_rows(features)


def make_expert_bank(expert_cfgs):
    encoders = [VisionEncoder(cfg) for cfg in expert_cfgs]
    configs = {(c.patch_size, c.d_v, c.init_seed) for c in expert_cfgs}
    if len(configs) != len(expert_cfgs):
        raise ConfigError("expert configurations must be pairwise distinct")
    return encoders
