"""Procedural shape-world corpus: scenes, rasterization, prompt
templating, tokenization and the 1:7 classification/instruction mixture.

All generation is reproducible from (seed, sample index); parallel
workers get the same stream because nothing depends on arrival order.
"""

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError, SceneError, TokenError

IMAGE_SIZE = 32
GRID = 4
CELL = IMAGE_SIZE // GRID

COLORS = ("red", "green", "blue", "yellow", "purple")
SHAPES = ("circle", "square", "triangle", "cross")
PLURALS = {"circle": "circles", "square": "squares", "triangle": "triangles", "cross": "crosses"}
SIZES = ("small", "large")

COLOR_RGB = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.80, 0.15),
    "blue": (0.15, 0.20, 0.90),
    "yellow": (0.95, 0.90, 0.10),
    "purple": (0.60, 0.10, 0.80),
}

# Compositional OOD holdout: these (color, shape) pairs never occur in
# any training stream and make up the OOD evaluation split.
OOD_PAIRS = (("purple", "triangle"), ("yellow", "cross"))
ALL_PAIRS = tuple((c, s) for c in COLORS for s in SHAPES)
TRAIN_PAIRS = tuple(p for p in ALL_PAIRS if p not in OOD_PAIRS)

DIGIT_WORDS = ("0", "1", "2", "3")

CAPTION_PROMPT = "describe the image"
CAPTION_PREFIX = ("this", "is", "a")

COUNTING_TEMPLATES = (
    "How many {plural} are in the image?",
    "Count the {plural} in this picture.",
    "What is the number of {plural} shown?",
)
SPATIAL_TEMPLATES = {
    "left": "Is the {ca} {sa} left of the {cb} {sb}?",
    "above": "Is the {ca} {sa} above the {cb} {sb}?",
}
COLOR_TEMPLATES = (
    "What color is the {shape}?",
    "Tell me the color of the {shape}.",
)

# Text-only pretraining tasks; answers are derivable from the prompt so
# the language model can learn the answer formats without images.
TEXT_ECHO_TEMPLATE = "repeat this phrase: {phrase}"
TEXT_COUNT_TEMPLATE = "how many words are in this list: {words}?"
TEXT_SAME_TEMPLATE = "are the words {a} and {b} identical?"


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    cell: tuple  # (row, col), each 0..3
    size: str


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple
    background: float = 0.35

    def validate(self, min_objects=0):
        if len(self.objects) < min_objects or len(self.objects) > 3:
            raise SceneError(f"scene must hold {min_objects}..3 objects, got {len(self.objects)}")
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != len(cells):
            raise SceneError(f"objects share a grid cell: {cells}")
        for o in self.objects:
            if o.shape not in SHAPES or o.color not in COLORS or o.size not in SIZES:
                raise SceneError(f"unknown attribute on {o}")
            if not (0 <= o.cell[0] < GRID and 0 <= o.cell[1] < GRID):
                raise SceneError(f"cell out of range: {o.cell}")


def render(spec: SceneSpec, seed: int) -> np.ndarray:
    """Rasterize a scene to a float64 [3, 32, 32] image in [0, 1].

    Deterministic: the seed drives only small per-object color jitter
    and a one-pixel center offset, so (spec, seed) fixes every pixel.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    img = np.full((3, IMAGE_SIZE, IMAGE_SIZE), float(spec.background))
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    for obj in spec.objects:
        r = 3.5 if obj.size == "large" else 2.5
        cy = obj.cell[0] * CELL + CELL // 2 + int(rng.integers(-1, 2))
        cx = obj.cell[1] * CELL + CELL // 2 + int(rng.integers(-1, 2))
        color = np.clip(np.array(COLOR_RGB[obj.color]) + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)
        dy, dx = yy - cy, xx - cx
        if obj.shape == "circle":
            mask = dy * dy + dx * dx <= r * r
        elif obj.shape == "square":
            mask = (np.abs(dy) <= r) & (np.abs(dx) <= r)
        elif obj.shape == "triangle":
            mask = (dy >= -r) & (dy <= r) & (np.abs(dx) * 2 <= dy + r)
        else:  # cross: thin bars so it cannot collapse into a disc
            bar = r / 3.0
            mask = ((np.abs(dx) <= bar) & (np.abs(dy) <= r)) | ((np.abs(dy) <= bar) & (np.abs(dx) <= r))
        img[:, mask] = color[:, None]
    return img


# ---------------------------------------------------------------------------
# text


def normalize_text(text: str) -> str:
    """Canonical form used everywhere: lowercase words, no punctuation."""
    text = text.lower()
    text = re.sub(r"[.,:;?!']", " ", text)
    return " ".join(text.split())


class Vocab:
    """Closed word-level vocabulary with five special ids."""

    PAD, BOS, EOS, IMG, CTX = range(5)
    SPECIALS = ("<pad>", "<bos>", "<eos>", "<img>", "<ctx>")

    def __init__(self, words):
        self.id_to_token = list(self.SPECIALS) + sorted(set(words))
        if len(self.id_to_token) > 256:
            raise ConfigError(f"vocabulary too large: {len(self.id_to_token)} > 256")
        self.token_to_id = {w: i for i, w in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, text: str):
        ids = []
        for word in normalize_text(text).split():
            if word not in self.token_to_id:
                raise TokenError(f"out-of-vocabulary word: {word!r}")
            ids.append(self.token_to_id[word])
        return ids

    def decode(self, ids):
        words = []
        for i in ids:
            if not 0 <= i < len(self.id_to_token):
                raise TokenError(f"token id out of range: {i}")
            if i >= len(self.SPECIALS):
                words.append(self.id_to_token[i])
        return " ".join(words)


_PLACEHOLDER = re.compile(r"\{[a-z_]+\}")


def load_template_bank():
    """(mode, template) pairs from the packaged bank; 10 open, 10 closed."""
    text = resources.files("carpe.data").joinpath("classification_templates.txt").read_text()
    bank = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        mode, template = line.split("\t", 1)
        bank.append((mode, template))
    modes = [m for m, _ in bank]
    if len(bank) != 20 or modes.count("open") != 10 or modes.count("closed") != 10:
        raise ConfigError("template bank must hold exactly 10 open + 10 closed templates")
    return bank


def template_bank_hash():
    raw = resources.files("carpe.data").joinpath("classification_templates.txt").read_bytes()
    return hashlib.sha256(raw).hexdigest()


def build_vocab() -> Vocab:
    words = set()
    for _, template in load_template_bank():
        words.update(normalize_text(_PLACEHOLDER.sub(" ", template)).split())
    for template in (
        *COUNTING_TEMPLATES,
        *SPATIAL_TEMPLATES.values(),
        *COLOR_TEMPLATES,
        TEXT_ECHO_TEMPLATE,
        TEXT_COUNT_TEMPLATE,
        TEXT_SAME_TEMPLATE,
        CAPTION_PROMPT,
    ):
        words.update(normalize_text(_PLACEHOLDER.sub(" ", template)).split())
    words.update(COLORS)
    words.update(SHAPES)
    words.update(PLURALS.values())
    words.update(DIGIT_WORDS)
    words.update(("yes", "no"))
    words.update(CAPTION_PREFIX)
    return Vocab(words)


def sample_template(rng, bank=None):
    """Uniform draw over the 20-template classification bank."""
    bank = bank if bank is not None else load_template_bank()
    idx = int(rng.integers(len(bank)))
    mode, template = bank[idx]
    return template, mode, idx


# ---------------------------------------------------------------------------
# samples


@dataclass
class SceneSample:
    image: np.ndarray  # [3, 32, 32]
    prompt_ids: list
    answer_ids: list
    task_kind: str  # classification | reasoning
    template_mode: str  # open | closed
    scene: SceneSpec
    prompt_text: str
    answer_text: str
    meta: dict = field(default_factory=dict)


def answer_for(scene: SceneSpec, question: dict) -> str:
    """Ground-truth answer recomputed from the scene alone."""
    kind = question["kind"]
    if kind == "classification":
        target = scene.objects[0]
        return f"{target.color} {target.shape}"
    if kind == "counting":
        count = sum(1 for o in scene.objects if o.shape == question["shape"])
        return DIGIT_WORDS[count]
    if kind == "spatial":
        a = next(o for o in scene.objects if (o.color, o.shape) == tuple(question["a"]))
        b = next(o for o in scene.objects if (o.color, o.shape) == tuple(question["b"]))
        if question["relation"] == "left":
            return "yes" if a.cell[1] < b.cell[1] else "no"
        return "yes" if a.cell[0] < b.cell[0] else "no"
    if kind == "color":
        target = next(o for o in scene.objects if o.shape == question["shape"])
        return target.color
    raise ConfigError(f"unknown question kind {kind!r}")


def _random_cells(rng, n):
    flat = rng.choice(GRID * GRID, size=n, replace=False)
    return [(int(i) // GRID, int(i) % GRID) for i in flat]


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def render_options(rng, pairs):
    labels = [f"{c} {s}" for c, s in pairs]
    order = rng.permutation(len(labels))
    return ", ".join(labels[int(i)] for i in order)


def gen_classification_sample(rng, vocab, pairs=TRAIN_PAIRS, bank=None, open_only=False):
    """Single-object scene plus one of the 20 classification prompts."""
    color, shape = _pick(rng, pairs)
    scene = SceneSpec(
        objects=(SceneObject(shape, color, _random_cells(rng, 1)[0], _pick(rng, SIZES)),),
        background=round(float(rng.uniform(0.25, 0.45)), 3),
    )
    if open_only:
        open_bank = [t for t in (bank or load_template_bank()) if t[0] == "open"]
        template, mode, tidx = sample_template(rng, open_bank)
    else:
        template, mode, tidx = sample_template(rng, bank)
    if mode == "closed":
        # Label order reshuffled per sample so position is never a shortcut.
        prompt = template.format(options=render_options(rng, TRAIN_PAIRS))
    else:
        prompt = template
    question = {"kind": "classification"}
    answer = answer_for(scene, question)
    image = render(scene, int(rng.integers(2**31)))
    return SceneSample(
        image=image,
        prompt_ids=vocab.encode(prompt),
        answer_ids=vocab.encode(answer),
        task_kind="classification",
        template_mode=mode,
        scene=scene,
        prompt_text=normalize_text(prompt),
        answer_text=answer,
        meta={"question": question, "template_index": tidx},
    )


def gen_reasoning_sample(rng, vocab, pairs=TRAIN_PAIRS):
    """Counting, spatial-relation or color question about a small scene."""
    kind = _pick(rng, ("counting", "spatial", "color"))
    if kind == "counting":
        n = int(rng.integers(1, 4))
        cells = _random_cells(rng, n)
        objects = tuple(
            SceneObject(p[1], p[0], cells[i], _pick(rng, SIZES))
            for i, p in enumerate(_pick(rng, pairs) for _ in range(n))
        )
        shapes_present = sorted({o.shape for o in objects})
        # Mostly ask about a shape that is present; sometimes about any.
        shape = _pick(rng, shapes_present) if rng.random() < 0.7 else _pick(rng, SHAPES)
        question = {"kind": "counting", "shape": shape}
        prompt = _pick(rng, COUNTING_TEMPLATES).format(plural=PLURALS[shape])
    elif kind == "spatial":
        pair_a, pair_b = [pairs[int(i)] for i in rng.choice(len(pairs), size=2, replace=False)]
        cells = _random_cells(rng, 2)
        objects = (
            SceneObject(pair_a[1], pair_a[0], cells[0], _pick(rng, SIZES)),
            SceneObject(pair_b[1], pair_b[0], cells[1], _pick(rng, SIZES)),
        )
        relation = _pick(rng, ("left", "above"))
        question = {"kind": "spatial", "a": pair_a, "b": pair_b, "relation": relation}
        prompt = SPATIAL_TEMPLATES[relation].format(
            ca=pair_a[0], sa=pair_a[1], cb=pair_b[0], sb=pair_b[1]
        )
    else:
        color, shape = _pick(rng, pairs)
        other_pairs = [p for p in pairs if p[1] != shape]
        n_extra = int(rng.integers(0, 3))
        drawn = [other_pairs[int(i)] for i in rng.choice(len(other_pairs), size=n_extra, replace=False)]
        # Keep the queried shape unique in the scene.
        extras, seen_shapes = [], {shape}
        for p in drawn:
            if p[1] not in seen_shapes:
                seen_shapes.add(p[1])
                extras.append(p)
        cells = _random_cells(rng, 1 + len(extras))
        objects = (SceneObject(shape, color, cells[0], _pick(rng, SIZES)),) + tuple(
            SceneObject(p[1], p[0], cells[1 + i], _pick(rng, SIZES)) for i, p in enumerate(extras)
        )
        question = {"kind": "color", "shape": shape}
        prompt = _pick(rng, COLOR_TEMPLATES).format(shape=shape)
    scene = SceneSpec(objects=objects, background=round(float(rng.uniform(0.25, 0.45)), 3))
    answer = answer_for(scene, question)
    image = render(scene, int(rng.integers(2**31)))
    return SceneSample(
        image=image,
        prompt_ids=vocab.encode(prompt),
        answer_ids=vocab.encode(answer),
        task_kind="reasoning",
        template_mode="open",
        scene=scene,
        prompt_text=normalize_text(prompt),
        answer_text=answer,
        meta={"question": question},
    )


def gen_caption_sample(rng, vocab, pairs=TRAIN_PAIRS):
    """Single-object caption used by base-model adapter alignment."""
    color, shape = _pick(rng, pairs)
    scene = SceneSpec(
        objects=(SceneObject(shape, color, _random_cells(rng, 1)[0], _pick(rng, SIZES)),),
        background=round(float(rng.uniform(0.25, 0.45)), 3),
    )
    answer = f"this is a {color} {shape}"
    return SceneSample(
        image=render(scene, int(rng.integers(2**31))),
        prompt_ids=vocab.encode(CAPTION_PROMPT),
        answer_ids=vocab.encode(answer),
        task_kind="caption",
        template_mode="open",
        scene=scene,
        prompt_text=CAPTION_PROMPT,
        answer_text=answer,
        meta={"question": {"kind": "caption"}},
    )


def gen_text_sample(rng):
    """Text-only (prompt, answer) pair whose answer follows from the
    prompt; teaches the LM the three answer formats."""
    kind = _pick(rng, ("echo", "count", "same"))
    if kind == "echo":
        phrase = f"{_pick(rng, COLORS)} {_pick(rng, SHAPES)}" if rng.random() < 0.5 else _pick(
            rng, DIGIT_WORDS + ("yes", "no") + COLORS
        )
        return normalize_text(TEXT_ECHO_TEMPLATE.format(phrase=phrase)), phrase
    if kind == "count":
        n = int(rng.integers(1, 4))
        listed = " ".join(_pick(rng, COLORS + SHAPES) for _ in range(n))
        return normalize_text(TEXT_COUNT_TEMPLATE.format(words=listed)), DIGIT_WORDS[n]
    a, b = _pick(rng, COLORS + SHAPES), _pick(rng, COLORS + SHAPES)
    return normalize_text(TEXT_SAME_TEMPLATE.format(a=a, b=b)), ("yes" if a == b else "no")


# ---------------------------------------------------------------------------
# streams


def _stream_rng(seed, stream, index):
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def build_mixture(cls_fn, reasoning_fn, n, seed, ratio=(1, 7)):
    """Deterministic interleave of the two sources.

    Every consecutive block of ratio[0]+ratio[1] samples holds exactly
    ratio[0] classification samples; the within-block order is a seeded
    permutation of the block index, so the stream is defined by sample
    index alone.
    """
    r_cls, r_rsn = int(ratio[0]), int(ratio[1])
    if r_cls < 0 or r_rsn < 0 or r_cls + r_rsn == 0:
        raise ConfigError(f"invalid mixture ratio {ratio}")
    block = r_cls + r_rsn
    out = []
    for i in range(n):
        b, pos = divmod(i, block)
        order = np.random.default_rng(np.random.SeedSequence([seed, 7001, b])).permutation(block)
        is_cls = order[pos] < r_cls
        rng = _stream_rng(seed, 1 if is_cls else 2, i)
        out.append(cls_fn(rng) if is_cls else reasoning_fn(rng))
    return out


def training_stream(vocab, n, seed, ratio=(1, 7)):
    return build_mixture(
        lambda rng: gen_classification_sample(rng, vocab),
        lambda rng: gen_reasoning_sample(rng, vocab),
        n,
        seed,
        ratio,
    )


def eval_split(vocab, n_cls, n_reasoning, seed):
    """Held-in evaluation prompts (fresh seeds, training pair universe)."""
    samples = []
    for i in range(n_cls):
        samples.append(gen_classification_sample(_stream_rng(seed, 11, i), vocab))
    for i in range(n_reasoning):
        samples.append(gen_reasoning_sample(_stream_rng(seed, 12, i), vocab))
    return samples


def ood_split(vocab, n, seed):
    """Held-out compositional pairs; open-world prompts only, so the OOD
    label strings never leak into any label list."""
    return [
        gen_classification_sample(_stream_rng(seed, 13, i), vocab, pairs=OOD_PAIRS, open_only=True)
        for i in range(n)
    ]


def caption_stream(vocab, n, seed):
    return [gen_caption_sample(_stream_rng(seed, 14, i), vocab) for i in range(n)]


def label_examples(n, seed):
    """(image, class index) pairs over the training (color, shape)
    classes; used for expert pretraining and probing."""
    out = []
    for i in range(n):
        rng = _stream_rng(seed, 16, i)
        color, shape = _pick(rng, TRAIN_PAIRS)
        scene = SceneSpec(
            objects=(SceneObject(shape, color, _random_cells(rng, 1)[0], _pick(rng, SIZES)),),
            background=round(float(rng.uniform(0.25, 0.45)), 3),
        )
        out.append((render(scene, int(rng.integers(2**31))), TRAIN_PAIRS.index((color, shape))))
    return out


def text_stream(n, seed):
    return [gen_text_sample(_stream_rng(seed, 15, i)) for i in range(n)]


def write_manifest(path, seed, split_sizes):
    manifest = {
        "format_version": 1,
        "seed": int(seed),
        "splits": {k: int(v) for k, v in split_sizes.items()},
        "template_bank_sha256": template_bank_hash(),
        "vocab_size": len(build_vocab()),
        "colors": list(COLORS),
        "shapes": list(SHAPES),
        "ood_pairs": [list(p) for p in OOD_PAIRS],
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
