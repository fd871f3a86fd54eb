"""Canonical finite-difference verification instance: a 2-text-token
prompt with 4-patch experts through the full pipeline. Small enough to
difference every parameter tensor in seconds."""

import numpy as np

from .config import ExpertConfig, ModelConfig
from .corpus import SceneSample, SceneSpec, build_vocab
from .ensemble import CarpeModel, answer_loss, carpe_forward
from .gradcheck import grad_check

VERIFY_EXPERTS = (
    ExpertConfig(patch_size=16, d_v=8, depth=1, heads=2, init_seed=11),
    ExpertConfig(patch_size=16, d_v=12, depth=1, heads=2, init_seed=12),
)

VERIFY_MODEL = ModelConfig(
    d_model=16,
    layers=3,
    heads=2,
    max_len=64,
    mlp_mult=2,
    adapter_hidden=8,
    integrator_depth=1,
    integrator_heads=2,
    moe=True,
    experts=VERIFY_EXPERTS,
)


def verification_instance(seed=14, perturb_seed=99):
    """(model, sample) with every parameter trainable and perturbed so
    all paths carry gradient signal above finite-difference noise."""
    vocab = build_vocab()
    model = CarpeModel(VERIFY_MODEL, len(vocab), init_seed=0)
    rng = np.random.default_rng(seed)
    sample = SceneSample(
        image=rng.uniform(0.0, 1.0, size=(3, 32, 32)),
        prompt_ids=vocab.encode("what color"),
        answer_ids=vocab.encode("red"),
        task_kind="classification",
        template_mode="open",
        scene=SceneSpec(objects=()),
        prompt_text="what color",
        answer_text="red",
        meta={},
    )
    prng = np.random.default_rng(perturb_seed)
    for _, _, t in model.named_params():
        t.requires_grad = True
        t.data += prng.normal(0.0, 0.25, t.shape)
    out = carpe_forward(model, sample.image, sample.prompt_ids)
    probs = np.sort(out.trace.router_probs)
    assert probs[-1] - probs[-2] > 1e-3, "routing must be stable under eps perturbations"
    return model, sample


def run_full_gradcheck(eps=1e-5, tol=1e-4, max_coords=8):
    model, sample = verification_instance()

    def f():
        loss, _ = answer_loss(model, sample)
        return loss

    params = [(n, t) for n, _, t in model.named_params()]
    return grad_check(f, params, eps=eps, tol=tol, max_coords=max_coords)
