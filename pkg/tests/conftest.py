import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from carpe.corpus import SceneSample, SceneSpec, build_vocab
from carpe.ensemble import CarpeModel
from carpe.verification import VERIFY_EXPERTS as TINY_EXPERTS
from carpe.verification import VERIFY_MODEL as TINY_MODEL


@pytest.fixture(scope="session")
def vocab():
    return build_vocab()


@pytest.fixture(scope="session")
def tiny_model(vocab):
    return CarpeModel(TINY_MODEL, len(vocab), init_seed=0)


def make_sample(vocab, rng, prompt="what color", answer="red"):
    """Hand-built sample with a random (valid) image."""
    image = rng.uniform(0.0, 1.0, size=(3, 32, 32))
    return SceneSample(
        image=image,
        prompt_ids=vocab.encode(prompt),
        answer_ids=vocab.encode(answer),
        task_kind="classification",
        template_mode="open",
        scene=SceneSpec(objects=()),
        prompt_text=prompt,
        answer_text=answer,
        meta={},
    )


@pytest.fixture()
def tiny_sample(vocab):
    return make_sample(vocab, np.random.default_rng(0))
