"""Procedural multimodal task families with exact solvers, and mixture streams.

Every sample is a pure function of ``(seed, domain, index)`` plus its family
and knobs.  Images are ``[32, 32, 3]`` float arrays whose pixels are exact
palette values, so the solvers here can read labels back from pixels alone.

Text layout: ``[task, query, answer..., <eos>]`` with the loss starting at the
answer (``supervised_from = 2``).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .model import Sample

IMAGE_SIZE = 32

# ---------------------------------------------------------------------------
# vocabulary

PAD, BOS, ANS, EOS = 0, 1, 2, 3
BLANK = 12  # empty slot in a symbolic scene
TASK = {"caption": 4, "ocr": 5, "openqa": 6, "shortqa": 7, "text": 8, "math": 9, "video_caption": 10}
Q_DESCRIBE, Q_READ, Q_COLOR, Q_SHAPE, Q_SUM, Q_MOVE = 16, 17, 18, 19, 20, 21
COLOR_NAMES = ("red", "green", "blue", "yellow")
SHAPE_NAMES = ("square", "circle", "triangle", "cross")
DIRECTIONS = ("left", "right", "up", "down")
COLOR_TOK = {c: 24 + i for i, c in enumerate(COLOR_NAMES)}
SHAPE_TOK = {s: 32 + i for i, s in enumerate(SHAPE_NAMES)}
DIGIT_TOK = [40 + d for d in range(10)]
DIR_TOK = {d: 52 + i for i, d in enumerate(DIRECTIONS)}
WORD_BASE, N_WORDS = 64, 192
VOCAB_SIZE = WORD_BASE + N_WORDS  # 256

PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
GLYPH_COLOR = (1.0, 1.0, 1.0)

FAMILIES = ("caption", "ocr", "openqa", "shortqa", "text", "math", "video_caption", "mix")
EVAL_FAMILIES = ("caption", "ocr", "openqa", "shortqa", "text", "math", "video_caption")
# "mix" blends these uniformly; video only appears where a mixture names it
MIX_MEMBERS = ("caption", "ocr", "openqa", "shortqa", "text", "math")
VISION_FAMILIES = tuple(f for f in EVAL_FAMILIES if f != "text")

_FONT = {
    0: ("111", "101", "101", "101", "111"),
    1: ("010", "110", "010", "010", "111"),
    2: ("111", "001", "111", "100", "111"),
    3: ("111", "001", "111", "001", "111"),
    4: ("101", "101", "111", "001", "001"),
    5: ("111", "100", "111", "001", "111"),
    6: ("111", "100", "111", "101", "111"),
    7: ("111", "001", "001", "001", "001"),
    8: ("111", "101", "111", "101", "111"),
    9: ("111", "101", "111", "001", "111"),
}
GLYPH_SCALE = 3
GLYPH_GAP = 2
SIZE_RANGE = {0: (14, 17), 1: (12, 15), 2: (10, 13)}
PAIR_SIZE_RANGE = {0: (12, 13), 1: (10, 12), 2: (8, 10)}
VIDEO_SIZE_RANGE = {0: (9, 10), 1: (8, 9), 2: (7, 8)}
VIDEO_FRAMES = 3
VIDEO_STEP = 5

DOMAIN_TRAIN, DOMAIN_EVAL, DOMAIN_PROBE = 0, 1, 2


def candidates(sample: Sample) -> list[list[int]]:
    """Closed answer vocabulary per answer position (the eos position included).

    The set depends on the family and, for shortqa, on which attribute is asked.
    """
    colors = list(COLOR_TOK.values())
    shapes = list(SHAPE_TOK.values())
    words = list(range(WORD_BASE, WORD_BASE + N_WORDS))
    fam = sample.family
    if fam == "shortqa":
        return [colors if sample.text_tokens[1] == Q_COLOR else shapes, [EOS]]
    table = {
        "caption": [colors, shapes, [EOS]],
        "ocr": [DIGIT_TOK, DIGIT_TOK, [EOS]],
        "openqa": [colors, [EOS]],
        "math": [DIGIT_TOK[:2], DIGIT_TOK, [EOS]],
        "video_caption": [shapes, list(DIR_TOK.values()), [EOS]],
        "text": [words, words, [EOS]],
    }
    if fam not in table:
        raise ConfigError(f"unknown family {fam!r}")
    return table[fam]


# ---------------------------------------------------------------------------
# rendering


def shape_mask(kind: str, s: int) -> np.ndarray:
    """Boolean ``s x s`` mask; every kind touches all four edges of its box."""
    c = (np.arange(s) + 0.5) - s / 2
    yy, xx = np.meshgrid(c, c, indexing="ij")
    if kind == "square":
        return np.ones((s, s), bool)
    if kind == "circle":
        return xx**2 + yy**2 <= (s / 2) ** 2
    if kind == "triangle":
        rows = np.arange(s)[:, None]
        return np.abs(xx) <= (rows + 1) / 2
    if kind == "cross":
        t = max(2, s // 3)
        lo = (s - t) // 2
        band = (np.arange(s) >= lo) & (np.arange(s) < lo + t)
        return band[:, None] | band[None, :]
    raise ConfigError(f"unknown shape {kind!r}")


def _blank():
    return np.zeros((IMAGE_SIZE, IMAGE_SIZE, 3))


def _paint(img, mask, y, x, color):
    h, w = mask.shape
    img[y : y + h, x : x + w][mask] = color


def _glyph(d: int) -> np.ndarray:
    g = np.array([[ch == "1" for ch in row] for row in _FONT[d]])
    return np.kron(g, np.ones((GLYPH_SCALE, GLYPH_SCALE), bool)).astype(bool)


def _place_boxes(rng, sizes, margin=1, tries=200):
    """Non-overlapping top-left corners for square boxes of the given sizes."""
    for _ in range(tries):
        boxes = []
        for s in sizes:
            y = int(rng.integers(0, IMAGE_SIZE - s + 1))
            x = int(rng.integers(0, IMAGE_SIZE - s + 1))
            boxes.append((y, x, s))
        if all(_disjoint(a, b, margin) for i, a in enumerate(boxes) for b in boxes[i + 1 :]):
            return boxes
    raise RuntimeError("could not place shapes")


def _disjoint(a, b, margin):
    ay, ax, asz = a
    by, bx, bsz = b
    return ay + asz + margin <= by or by + bsz + margin <= ay or ax + asz + margin <= bx or bx + bsz + margin <= ax


def render_digits(rng, digits, distractor=False):
    img = _blank()
    gw = 3 * GLYPH_SCALE
    gh = 5 * GLYPH_SCALE
    width = len(digits) * gw + (len(digits) - 1) * GLYPH_GAP
    if distractor:
        s = int(rng.integers(5, 8))
        (dy, dx, _), = _place_boxes(rng, [s])
        _paint(img, shape_mask(SHAPE_NAMES[rng.integers(4)], s), dy, dx, PALETTE[COLOR_NAMES[rng.integers(4)]])
    y = int(rng.integers(0, IMAGE_SIZE - gh + 1))
    x = int(rng.integers(0, IMAGE_SIZE - width + 1))
    for k, d in enumerate(digits):
        _paint(img, _glyph(d), y, x + k * (gw + GLYPH_GAP), GLYPH_COLOR)
    return img


# ---------------------------------------------------------------------------
# solvers (pixels -> label), used to certify every generated sample


def _color_mask(img, color):
    return np.all(img == np.asarray(color), axis=2)


def _bbox(mask):
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return ys.min(), xs.min(), ys.max() + 1, xs.max() + 1


def classify_shape(mask: np.ndarray) -> str | None:
    box = _bbox(mask)
    if box is None:
        return None
    y0, x0, y1, x1 = box
    if y1 - y0 != x1 - x0:
        return None
    crop = mask[y0:y1, x0:x1]
    hits = [k for k in SHAPE_NAMES if np.array_equal(crop, shape_mask(k, y1 - y0))]
    return hits[0] if len(hits) == 1 else None


def read_objects(img) -> dict[str, str]:
    """Map palette color -> shape kind for every colored object in the image."""
    out = {}
    for cname, rgb in PALETTE.items():
        m = _color_mask(img, rgb)
        if m.any():
            out[cname] = classify_shape(m)
    return out


def read_digits(img) -> list[int] | None:
    m = _color_mask(img, GLYPH_COLOR)
    box = _bbox(m)
    if box is None:
        return None
    y0, x0, y1, x1 = box
    gw, gh = 3 * GLYPH_SCALE, 5 * GLYPH_SCALE
    if y1 - y0 != gh:
        return None
    n = (x1 - x0 + GLYPH_GAP) // (gw + GLYPH_GAP)
    digits = []
    for k in range(n):
        cx = x0 + k * (gw + GLYPH_GAP)
        cell = m[y0:y1, cx : cx + gw]
        hits = [d for d in range(10) if np.array_equal(cell, _glyph(d))]
        if len(hits) != 1:
            return None
        digits.append(hits[0])
    return digits


def solve(sample: Sample) -> list[int] | None:
    """Answer tokens (eos included) recovered from the sample's image(s) and prompt."""
    fam = sample.family
    prompt = sample.text_tokens[: sample.supervised_from]
    if fam == "text":
        start = int(prompt[1]) - WORD_BASE
        return [WORD_BASE + (start + 1) % N_WORDS, WORD_BASE + (start + 2) % N_WORDS, EOS]
    imgs = sample.images
    if fam in ("caption", "shortqa"):
        objs = read_objects(imgs[0])
        if len(objs) != 1:
            return None
        (color, kind), = objs.items()
        if kind is None:
            return None
        if fam == "caption":
            return [COLOR_TOK[color], SHAPE_TOK[kind], EOS]
        return [COLOR_TOK[color] if prompt[1] == Q_COLOR else SHAPE_TOK[kind], EOS]
    if fam == "openqa":
        objs = read_objects(imgs[0])
        want = {v: k for k, v in SHAPE_TOK.items()}[int(prompt[1])]
        hits = [c for c, k in objs.items() if k == want]
        return [COLOR_TOK[hits[0]], EOS] if len(hits) == 1 else None
    if fam in ("ocr", "math"):
        digits = read_digits(imgs[0])
        if digits is None or len(digits) != 2:
            return None
        if fam == "ocr":
            return [DIGIT_TOK[d] for d in digits] + [EOS]
        total = digits[0] + digits[1]
        return [DIGIT_TOK[total // 10], DIGIT_TOK[total % 10], EOS]
    if fam == "video_caption":
        boxes = {}
        kinds = {}
        for cname, rgb in PALETTE.items():
            ms = [_color_mask(f, rgb) for f in imgs]
            if ms[0].any():
                boxes[cname] = [_bbox(m) for m in ms]
                kinds[cname] = classify_shape(ms[0])
        moving = [c for c, bs in boxes.items() if any(b != bs[0] for b in bs)]
        if len(moving) != 1 or kinds[moving[0]] is None:
            return None
        bs = boxes[moving[0]]
        dy, dx = bs[-1][0] - bs[0][0], bs[-1][1] - bs[0][1]
        if (dy == 0) == (dx == 0):
            return None
        direction = ("left" if dx < 0 else "right") if dx else ("up" if dy < 0 else "down")
        return [SHAPE_TOK[kinds[moving[0]]], DIR_TOK[direction]]  + [EOS]
    raise ConfigError(f"no solver for family {fam!r}")


# ---------------------------------------------------------------------------
# generators


def _difficulty(rng, params):
    d = params.get("difficulty")
    return int(rng.integers(3)) if d is None else int(d)


def _single_shape(rng, diff):
    lo, hi = SIZE_RANGE[diff]
    s = int(rng.integers(lo, hi + 1))
    color = COLOR_NAMES[rng.integers(4)]
    kind = SHAPE_NAMES[rng.integers(4)]
    img = _blank()
    (y, x, _), = _place_boxes(rng, [s])
    _paint(img, shape_mask(kind, s), y, x, PALETTE[color])
    return img, color, kind


def _two_shapes(rng, diff):
    lo, hi = PAIR_SIZE_RANGE[diff]
    sizes = [int(rng.integers(lo, hi + 1)) for _ in range(2)]
    colors = rng.choice(4, size=2, replace=False)
    kinds = rng.choice(4, size=2, replace=False)
    boxes = _place_boxes(rng, sizes)
    img = _blank()
    for (y, x, s), c, k in zip(boxes, colors, kinds):
        _paint(img, shape_mask(SHAPE_NAMES[k], s), y, x, PALETTE[COLOR_NAMES[c]])
    return img, [COLOR_NAMES[c] for c in colors], [SHAPE_NAMES[k] for k in kinds]


def _video(rng, diff):
    lo, hi = VIDEO_SIZE_RANGE[diff]
    span = VIDEO_STEP * (VIDEO_FRAMES - 1)
    for _ in range(200):
        sizes = [int(rng.integers(lo, hi + 1)) for _ in range(2)]
        direction = DIRECTIONS[rng.integers(4)]
        dy, dx = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0)}[direction]
        s0 = sizes[0]
        y = int(rng.integers(max(0, -dy * span), IMAGE_SIZE - s0 + 1 - max(0, dy * span)))
        x = int(rng.integers(max(0, -dx * span), IMAGE_SIZE - s0 + 1 - max(0, dx * span)))
        sweep = (min(y, y + dy * span), min(x, x + dx * span), s0 + span)
        s1 = sizes[1]
        y1 = int(rng.integers(0, IMAGE_SIZE - s1 + 1))
        x1 = int(rng.integers(0, IMAGE_SIZE - s1 + 1))
        sy, sx, ss = sweep
        hy = sy + (s0 if dy == 0 else ss)
        hx = sx + (s0 if dx == 0 else ss)
        if y1 + s1 + 1 <= sy or hy + 1 <= y1 or x1 + s1 + 1 <= sx or hx + 1 <= x1:
            break
    else:
        raise RuntimeError("could not place video shapes")
    colors = rng.choice(4, size=2, replace=False)
    kinds = rng.choice(4, size=2, replace=False)
    frames = []
    for f in range(VIDEO_FRAMES):
        img = _blank()
        _paint(img, shape_mask(SHAPE_NAMES[kinds[0]], s0), y + dy * VIDEO_STEP * f, x + dx * VIDEO_STEP * f, PALETTE[COLOR_NAMES[colors[0]]])
        _paint(img, shape_mask(SHAPE_NAMES[kinds[1]], s1), y1, x1, PALETTE[COLOR_NAMES[colors[1]]])
        frames.append(img)
    return frames, SHAPE_NAMES[kinds[0]], direction, SHAPE_NAMES[kinds[1]]


def make_sample(family: str, rng: np.random.Generator, params=None) -> Sample:
    """Draw one sample of ``family`` (never ``mix``) and certify it with the solver."""
    params = params or {}
    diff = _difficulty(rng, params)
    meta = {"difficulty": diff}
    if family == "caption":
        img, color, kind = _single_shape(rng, diff)
        images, prompt, answer = [img], [Q_DESCRIBE], [COLOR_TOK[color], SHAPE_TOK[kind]]
        scene = [[COLOR_TOK[color], SHAPE_TOK[kind]]]
    elif family == "shortqa":
        img, color, kind = _single_shape(rng, diff)
        q = Q_COLOR if rng.integers(2) == 0 else Q_SHAPE
        images, prompt, answer = [img], [q], [COLOR_TOK[color] if q == Q_COLOR else SHAPE_TOK[kind]]
        scene = [[COLOR_TOK[color], SHAPE_TOK[kind]]]
    elif family == "openqa":
        img, colors, kinds = _two_shapes(rng, diff)
        pick = int(rng.integers(2))
        images, prompt, answer = [img], [SHAPE_TOK[kinds[pick]]], [COLOR_TOK[colors[pick]]]
        scene = [[COLOR_TOK[colors[0]], SHAPE_TOK[kinds[0]], COLOR_TOK[colors[1]], SHAPE_TOK[kinds[1]]]]
    elif family in ("ocr", "math"):
        digits = [int(d) for d in rng.integers(0, 10, size=2)]
        img = render_digits(rng, digits, distractor=diff == 2)
        scene = [[DIGIT_TOK[d] for d in digits]]
        if family == "ocr":
            images, prompt, answer = [img], [Q_READ], [DIGIT_TOK[d] for d in digits]
        else:
            total = sum(digits)
            images, prompt, answer = [img], [Q_SUM], [DIGIT_TOK[total // 10], DIGIT_TOK[total % 10]]
    elif family == "video_caption":
        frames, kind, direction, other = _video(rng, diff)
        images, prompt, answer = frames, [Q_MOVE], [SHAPE_TOK[kind], DIR_TOK[direction]]
        scene = [[SHAPE_TOK[kind], DIR_TOK[direction]]] + [[SHAPE_TOK[other]]] * (len(frames) - 1)
    elif family == "text":
        start = int(rng.integers(N_WORDS))
        images = []
        scene = []
        prompt = [WORD_BASE + start]
        answer = [WORD_BASE + (start + 1) % N_WORDS, WORD_BASE + (start + 2) % N_WORDS]
    else:
        raise ConfigError(f"unknown family {family!r}")
    tokens = [TASK[family]] + prompt + answer + [EOS]
    meta["scene"] = scene
    sample = Sample(images, np.array(tokens), 2, family, meta)
    if solve(sample) != tokens[2:]:
        raise RuntimeError(f"generated {family} sample is not solvable from its image")
    return sample


def symbolic(sample: Sample, rng: np.random.Generator, slots_per_image: int = 16) -> Sample:
    """Image-free rendition of a sample for language-model pretraining.

    Each image becomes ``slots_per_image`` slots holding the scene's symbols
    (in order, at seeded sorted positions) with ``BLANK`` elsewhere, so the
    text answer can be read from the prefix the way it is read from pixels.
    """
    prefix = []
    for toks in sample.meta.get("scene", []):
        slots = [BLANK] * slots_per_image
        pos = np.sort(rng.choice(slots_per_image, size=len(toks), replace=False))
        for p, t in zip(pos, toks):
            slots[p] = t
        prefix += slots
    text = np.r_[np.asarray(prefix, dtype=np.int64), sample.text_tokens]
    meta = dict(sample.meta, symbolic=True)
    return Sample([], text, len(prefix) + sample.supervised_from, sample.family, meta)


# ---------------------------------------------------------------------------
# mixtures


@dataclass(frozen=True)
class MixtureSpec:
    """Weighted families with a total sample budget.

    ``order='shuffle'`` permutes the realized family counts with the seed;
    ``'stratified'`` interleaves them so every prefix stays within one sample
    of the target proportions, which is what nested scaling subsets need.
    ``capacity`` is the stream length the ordering is computed for (defaults to
    ``total_samples``); the stream is its first ``total_samples`` entries.
    """

    components: tuple  # ((family, weight), ...)
    total_samples: int
    seed: int = 0
    order: str = "shuffle"
    capacity: int | None = None
    params: tuple = ()  # ((key, value), ...) knobs applied to every family

    def __post_init__(self):
        comps = tuple((str(f), float(w)) for f, w in (self.components.items() if isinstance(self.components, dict) else self.components))
        object.__setattr__(self, "components", comps)
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", tuple(sorted(self.params.items())))
        for f, w in comps:
            if f not in FAMILIES:
                raise ConfigError(f"unknown family {f!r}")
            if w < 0:
                raise ConfigError(f"negative weight for {f!r}")
        if not comps or sum(w for _, w in comps) <= 0:
            raise ConfigError("mixture weights must sum to a positive value")
        if self.total_samples < 0:
            raise ConfigError("total_samples must be >= 0")
        if self.order not in ("shuffle", "stratified"):
            raise ConfigError(f"unknown order {self.order!r}")
        if self.capacity is not None and self.capacity < self.total_samples:
            raise ConfigError("capacity is smaller than total_samples")

    @property
    def weights(self) -> dict[str, float]:
        total = sum(w for _, w in self.components)
        return {f: w / total for f, w in self.components}

    @property
    def families(self):
        return [f for f, _ in self.components]

    def with_total(self, n: int) -> "MixtureSpec":
        return replace(self, total_samples=n)


def realized_counts(spec: MixtureSpec, total: int | None = None) -> dict[str, int]:
    """Largest-remainder apportionment of ``total`` over the normalized weights."""
    n = spec.total_samples if total is None else total
    w = spec.weights
    exact = {f: w[f] * n for f in w}
    counts = {f: int(np.floor(exact[f])) for f in w}
    left = n - sum(counts.values())
    order = sorted(w, key=lambda f: (-(exact[f] - counts[f]), spec.families.index(f)))
    for f in order[:left]:
        counts[f] += 1
    return counts


def family_sequence(spec: MixtureSpec) -> list[str]:
    cap = spec.capacity or spec.total_samples
    counts = realized_counts(spec, cap)
    rng = np.random.default_rng([spec.seed, 7919])
    if spec.order == "shuffle":
        seq = [f for f in spec.families for _ in range(counts[f])]
        return [seq[i] for i in rng.permutation(len(seq))][: spec.total_samples]
    # stratified: always draw the family furthest behind its share
    w = spec.weights
    fams = [f for f in spec.families if counts[f]]
    tie = {f: r for f, r in zip(fams, rng.permutation(len(fams)))}
    have = dict.fromkeys(fams, 0)
    seq = []
    for n in range(1, spec.total_samples + 1):
        f = max((f for f in fams if have[f] < counts[f]), key=lambda f: (n * w[f] - have[f], -tie[f]))
        have[f] += 1
        seq.append(f)
    return seq


def sample_rng(seed: int, domain: int, index: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, domain, salt, index])


def sample_at(spec: MixtureSpec, index: int, family: str, domain: int = DOMAIN_TRAIN) -> Sample:
    """The ``index``-th sample of a stream whose family at that slot is ``family``."""
    rng = sample_rng(spec.seed, domain, index)
    params = dict(spec.params)
    symbolic_slots = params.pop("symbolic", 0)
    if family == "mix":
        real = MIX_MEMBERS[int(rng.integers(len(MIX_MEMBERS)))]
        s = make_sample(real, rng, params)
        s.meta["mixture_family"] = "mix"
    else:
        s = make_sample(family, rng, params)
    if symbolic_slots:
        s = symbolic(s, rng, int(symbolic_slots))
    s.meta["index"] = index
    return s


def generate(spec: MixtureSpec, domain: int = DOMAIN_TRAIN):
    """Yield exactly ``total_samples`` samples, deterministic in ``(spec, domain)``."""
    for i, fam in enumerate(family_sequence(spec)):
        yield sample_at(spec, i, fam, domain)


def dominant_ratio_override(spec: MixtureSpec, family: str, share: float = 0.5) -> MixtureSpec:
    """Give ``family`` the given share; the rest keep their relative proportions."""
    if not 0.0 < share < 1.0:
        raise ConfigError(f"share must lie in (0, 1), got {share}")
    w = spec.weights
    if family not in w:
        raise ConfigError(f"family {family!r} not in mixture")
    if abs(w[family] - share) < 1e-12:
        return spec
    rest = 1.0 - w[family]
    if rest <= 0:
        raise ConfigError("cannot rescale a single-family mixture")
    comps = tuple((f, share if f == family else w[f] * (1.0 - share) / rest) for f in spec.families)
    return replace(spec, components=comps)


def scaling_subsets(spec: MixtureSpec, sizes) -> list[MixtureSpec]:
    """Nested prefix subsets of one stratified stream of length ``spec.total_samples``."""
    sizes = list(sizes)
    if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise ConfigError("sizes must be strictly ascending")
    if sizes and sizes[-1] > spec.total_samples:
        raise ConfigError(f"size {sizes[-1]} exceeds stream capacity {spec.total_samples}")
    return [replace(spec, total_samples=n, order="stratified", capacity=spec.total_samples) for n in sizes]


def sample_digest(sample: Sample) -> str:
    h = hashlib.sha256()
    h.update(sample.family.encode())
    h.update(np.asarray(sample.text_tokens, dtype="<i8").tobytes())
    for img in sample.images:
        h.update(np.asarray(img, dtype="<f8").tobytes())
    return h.hexdigest()


def stream_digest(samples) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(sample_digest(s).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# probe set


def shape_classification(n: int, seed: int, classes: int = 4, domain: int = DOMAIN_PROBE, kinds=None, difficulty=None):
    """Single-shape images labelled by shape kind.

    Label ``k`` is ``kinds[k]``; ``kinds`` defaults to the first ``classes``
    shapes.  ``difficulty`` pins the size range (0 = largest); None draws it.
    """
    if not 2 <= classes <= len(SHAPE_NAMES):
        raise ConfigError(f"classes must be in [2, {len(SHAPE_NAMES)}]")
    kinds = tuple(kinds or SHAPE_NAMES[:classes])
    if len(kinds) != classes or not set(kinds) <= set(SHAPE_NAMES):
        raise ConfigError(f"kinds {kinds} do not name {classes} known shapes")
    images = np.zeros((n, IMAGE_SIZE, IMAGE_SIZE, 3))
    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        rng = sample_rng(seed, domain, i)
        diff = int(rng.integers(3))
        lo, hi = SIZE_RANGE[diff if difficulty is None else difficulty]
        s = int(rng.integers(lo, hi + 1))
        k = int(rng.integers(classes))
        (y, x, _), = _place_boxes(rng, [s])
        _paint(images[i], shape_mask(kinds[k], s), y, x, PALETTE[COLOR_NAMES[rng.integers(4)]])
        labels[i] = k
    return images, labels


@dataclass
class EvalSuite:
    """Held-out per-family samples drawn from the evaluation seed domain."""

    samples: dict = field(default_factory=dict)  # family -> list[Sample]
    seed: int = 0

    @classmethod
    def build(cls, per_family: int, seed: int = 0, families=EVAL_FAMILIES, params=None) -> "EvalSuite":
        out = {}
        for fi, fam in enumerate(families):
            if fam not in EVAL_FAMILIES:
                raise ConfigError(f"unknown eval family {fam!r}")
            out[fam] = [make_sample(fam, sample_rng(seed, DOMAIN_EVAL, i, salt=fi + 1), params) for i in range(per_family)]
        return cls(out, seed)

    @property
    def families(self):
        return list(self.samples)
