import numpy as np
import pytest

from carpe import corpus
from carpe.corpus import (
    DIGIT_WORDS,
    OOD_PAIRS,
    SceneObject,
    SceneSpec,
    TRAIN_PAIRS,
    build_mixture,
    build_vocab,
    gen_reasoning_sample,
    load_template_bank,
    normalize_text,
    render,
    sample_template,
)
from carpe.errors import ConfigError, SceneError, TokenError


@pytest.fixture(scope="module")
def vocab():
    return build_vocab()


def independent_answer(scene, question):
    """Re-derives answers straight from the scene; deliberately written
    without calling corpus.answer_for."""
    kind = question["kind"]
    if kind == "classification":
        o = scene.objects[0]
        return o.color + " " + o.shape
    if kind == "counting":
        n = len([o for o in scene.objects if o.shape == question["shape"]])
        return str(n)
    if kind == "spatial":
        lookup = {(o.color, o.shape): o for o in scene.objects}
        a = lookup[tuple(question["a"])]
        b = lookup[tuple(question["b"])]
        axis = 1 if question["relation"] == "left" else 0
        return "yes" if a.cell[axis] < b.cell[axis] else "no"
    if kind == "color":
        matches = [o for o in scene.objects if o.shape == question["shape"]]
        assert len(matches) == 1
        return matches[0].color
    raise AssertionError(kind)


class TestRender:
    def test_empty_scene_is_constant_gray(self):
        img = render(SceneSpec(objects=(), background=0.3), seed=0)
        assert img.shape == (3, 32, 32)
        np.testing.assert_array_equal(img, np.full((3, 32, 32), 0.3))

    def test_large_red_square_confined_to_top_left_quadrant(self):
        spec = SceneSpec(objects=(SceneObject("square", "red", (0, 0), "large"),))
        img = render(spec, seed=5)
        reddish = (img[0] > 0.6) & (img[1] < 0.4)
        assert reddish.any()
        ys, xs = np.nonzero(reddish)
        assert ys.max() < 16 and xs.max() < 16

    def test_deterministic_under_seed(self):
        spec = SceneSpec(objects=(SceneObject("circle", "blue", (2, 1), "small"),))
        a = render(spec, seed=3)
        b = render(spec, seed=3)
        assert np.array_equal(a, b)
        c = render(spec, seed=4)
        assert not np.array_equal(a, c)

    def test_overlapping_objects_rejected(self):
        spec = SceneSpec(
            objects=(
                SceneObject("circle", "red", (1, 1), "small"),
                SceneObject("square", "blue", (1, 1), "large"),
            )
        )
        with pytest.raises(SceneError):
            render(spec, seed=0)

    def test_values_in_unit_range(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            sample = corpus.gen_classification_sample(rng, build_vocab())
            assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0


class TestTemplates:
    def test_bank_is_10_open_10_closed(self):
        bank = load_template_bank()
        assert len(bank) == 20
        assert sum(1 for m, _ in bank if m == "open") == 10
        assert sum(1 for m, _ in bank if m == "closed") == 10
        texts = [t for _, t in bank]
        assert "Identify the object in this image:" in texts
        assert "What object can you spot in the picture?" in texts
        for mode, t in bank:
            assert ("{options}" in t) == (mode == "closed")

    def test_uniform_draws_concentrate(self):
        rng = np.random.default_rng(0)
        bank = load_template_bank()
        counts = np.zeros(20)
        n = 20_000
        for _ in range(n):
            _, _, idx = sample_template(rng, bank)
            counts[idx] += 1
        freqs = counts / n
        assert freqs.min() >= 0.04 and freqs.max() <= 0.06

    def test_mode_split_converges_to_half(self):
        rng = np.random.default_rng(1)
        bank = load_template_bank()
        opens = sum(1 for _ in range(20_000) if sample_template(rng, bank)[1] == "open")
        assert abs(opens / 20_000 - 0.5) < 0.02

    def test_closed_prompt_contains_every_label_once(self, vocab):
        rng = np.random.default_rng(2)
        found = 0
        while found < 5:
            s = corpus.gen_classification_sample(rng, vocab)
            if s.template_mode != "closed":
                continue
            found += 1
            for color, shape in TRAIN_PAIRS:
                assert s.prompt_text.count(f"{color} {shape}") == 1

    def test_open_prompt_has_no_label_list(self, vocab):
        rng = np.random.default_rng(3)
        found = 0
        while found < 5:
            s = corpus.gen_classification_sample(rng, vocab)
            if s.template_mode != "open":
                continue
            found += 1
            hits = sum(s.prompt_text.count(f"{c} {sh}") for c, sh in TRAIN_PAIRS)
            assert hits == 0


class TestReasoning:
    def test_counting_two_circles(self, vocab):
        # Find a generated counting sample with two of the asked shape.
        rng = np.random.default_rng(4)
        while True:
            s = gen_reasoning_sample(rng, vocab)
            q = s.meta["question"]
            if q["kind"] != "counting":
                continue
            n = sum(1 for o in s.scene.objects if o.shape == q["shape"])
            if n == 2:
                assert s.answer_text == "2"
                break

    def test_left_relation_extremes(self):
        scene = SceneSpec(
            objects=(
                SceneObject("circle", "red", (1, 0), "small"),
                SceneObject("square", "blue", (2, 3), "small"),
            )
        )
        q = {"kind": "spatial", "a": ("red", "circle"), "b": ("blue", "square"), "relation": "left"}
        assert corpus.answer_for(scene, q) == "yes"
        q_rev = dict(q, a=("blue", "square"), b=("red", "circle"))
        assert corpus.answer_for(scene, q_rev) == "no"

    def test_thousand_samples_consistent_with_independent_oracle(self, vocab):
        for i in range(1000):
            rng = np.random.default_rng(np.random.SeedSequence([9, i]))
            s = gen_reasoning_sample(rng, vocab)
            assert s.answer_text == independent_answer(s.scene, s.meta["question"])
            assert 1 <= len(s.scene.objects) <= 3

    def test_classification_answers_consistent(self, vocab):
        for i in range(300):
            rng = np.random.default_rng(np.random.SeedSequence([10, i]))
            s = corpus.gen_classification_sample(rng, vocab)
            assert s.answer_text == independent_answer(s.scene, s.meta["question"])


class TestMixture:
    def test_1_to_7_ratio_exact_blocks(self, vocab):
        stream = build_mixture(
            lambda rng: "cls", lambda rng: "rsn", n=8000, seed=0, ratio=(1, 7)
        )
        n_cls = stream.count("cls")
        assert abs(n_cls - 1000) <= 40
        frac = n_cls / 8000
        assert abs(frac - 1 / 8) <= 0.005

    def test_classification_only(self):
        stream = build_mixture(lambda rng: "cls", lambda rng: "rsn", n=64, seed=0, ratio=(1, 0))
        assert stream == ["cls"] * 64

    def test_1_to_1_binomial_bound(self):
        stream = build_mixture(lambda rng: "c", lambda rng: "r", n=10_000, seed=3, ratio=(1, 1))
        assert abs(stream.count("c") - 5000) <= 100

    def test_bad_ratio_rejected(self):
        with pytest.raises(ConfigError):
            build_mixture(lambda rng: 0, lambda rng: 1, n=8, seed=0, ratio=(0, 0))
        with pytest.raises(ConfigError):
            build_mixture(lambda rng: 0, lambda rng: 1, n=8, seed=0, ratio=(-1, 2))

    def test_deterministic_by_index(self, vocab):
        a = corpus.training_stream(vocab, 32, seed=5)
        b = corpus.training_stream(vocab, 32, seed=5)
        for x, y in zip(a, b):
            assert x.prompt_ids == y.prompt_ids
            assert x.answer_ids == y.answer_ids
            assert np.array_equal(x.image, y.image)

    def test_ood_pairs_never_in_training_stream(self, vocab):
        for s in corpus.training_stream(vocab, 400, seed=6):
            for color, shape in OOD_PAIRS:
                assert f"{color} {shape}" not in s.prompt_text
                assert f"{color} {shape}" != s.answer_text
                for o in s.scene.objects:
                    assert (o.color, o.shape) not in OOD_PAIRS

    def test_ood_split_is_all_ood(self, vocab):
        split = corpus.ood_split(vocab, 40, seed=7)
        for s in split:
            o = s.scene.objects[0]
            assert (o.color, o.shape) in OOD_PAIRS
            assert s.template_mode == "open"


class TestVocab:
    def test_round_trip(self, vocab):
        ids = vocab.encode("red square")
        assert vocab.decode(ids) == "red square"

    def test_empty_text(self, vocab):
        assert vocab.encode("") == []
        assert vocab.decode([]) == ""

    def test_out_of_vocab_rejected(self, vocab):
        with pytest.raises(TokenError):
            vocab.encode("zebra")

    def test_normalization_strips_punctuation(self, vocab):
        assert vocab.encode("Red Square.") == vocab.encode("red square")

    def test_full_template_corpus_round_trips(self, vocab):
        rng = np.random.default_rng(11)
        for i in range(200):
            s = corpus.gen_classification_sample(rng, vocab)
            assert vocab.decode(s.prompt_ids) == s.prompt_text
            assert vocab.decode(s.answer_ids) == s.answer_text
        for prompt, answer in corpus.text_stream(100, seed=12):
            assert vocab.decode(vocab.encode(prompt)) == prompt
            assert vocab.decode(vocab.encode(answer)) == answer

    def test_specials_disjoint_and_bijective(self, vocab):
        assert len(vocab.token_to_id) == len(vocab.id_to_token)
        assert vocab.PAD == 0 and vocab.CTX == 4
        assert len(vocab) <= 256

    def test_digit_words_present(self, vocab):
        for d in DIGIT_WORDS:
            assert d in vocab.token_to_id


def test_manifest_contents(tmp_path):
    path = tmp_path / "manifest.json"
    manifest = corpus.write_manifest(path, seed=1, split_sizes={"train": 128, "ood": 32})
    assert path.exists()
    assert manifest["template_bank_sha256"] == corpus.template_bank_hash()
    assert manifest["splits"] == {"train": 128, "ood": 32}


def test_normalize_text():
    assert normalize_text("  What IS shown,  here?! ") == "what is shown here"
