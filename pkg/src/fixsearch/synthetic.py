"""Synthetic visual-search scenes: one target glyph among distractors.

Each category is a (shape, colour) pair. Categories come in similarity pairs
that share a shape but differ in colour. Simulated observers fixate the target
heavily and the similar-category distractors lightly, never the dissimilar
ones, so the ground-truth density favours objects that resemble the target.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from fixsearch.errors import ConfigError
from fixsearch.fdm import build_density_map

SHAPES = ("square", "disc", "cross")
# colour per category; categories 2k and 2k+1 share SHAPES[k]
COLOURS = (
    (0.95, 0.20, 0.15),
    (0.95, 0.85, 0.15),
    (0.15, 0.85, 0.25),
    (0.15, 0.75, 0.95),
    (0.25, 0.30, 0.95),
    (0.85, 0.25, 0.90),
)
N_CATEGORIES = len(COLOURS)


def category_shape(cat):
    return SHAPES[cat // 2]


def similar_category(cat):
    return cat ^ 1


@dataclass
class SyntheticSample:
    image: np.ndarray  # (3, H, W)
    targets: list  # exemplar pool, each (3, th, tw)
    gt: object  # DensityMap
    category: int
    target_box: tuple  # (x0, y0, x1, y1) inclusive pixel bounds
    distractor_boxes: list
    fixations: list = None  # simulated (x, y) fixations behind gt

    def target_patch(self, index=0):
        return self.targets[index % len(self.targets)]


def _glyph_mask(shape, size, rng):
    """Boolean (size, size) mask for a glyph of the given shape."""
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    if shape == "square":
        m = np.ones((size, size), dtype=bool)
        inset = max(1, size // 6)
        m[:inset] = m[-inset:] = False
        m[:, :inset] = m[:, -inset:] = False
        return m
    if shape == "disc":
        return (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2
    if shape == "cross":
        t = max(1, int(round(size * 0.18)))
        return (np.abs(yy - c) <= t) | (np.abs(xx - c) <= t)
    raise ValueError(shape)


def _draw(canvas, mask, colour, x0, y0, rng):
    h, w = mask.shape
    jitter = np.clip(np.asarray(colour) * rng.uniform(0.85, 1.15) + rng.normal(0, 0.03, 3), 0, 1)
    region = canvas[:, y0:y0 + h, x0:x0 + w]
    region[:, mask] = jitter[:, None]


def _background(h, w, rng):
    base = rng.uniform(0.35, 0.5)
    return np.clip(base + rng.normal(0, 0.04, size=(3, h, w)), 0, 1)


def _exemplar(cat, dims, rng):
    th, tw = dims
    img = _background(th, tw, rng)
    size = int(rng.integers(max(4, int(0.55 * min(th, tw))), int(0.85 * min(th, tw)) + 1))
    mask = _glyph_mask(category_shape(cat), size, rng)
    x0 = (tw - size) // 2 + int(rng.integers(-1, 2))
    y0 = (th - size) // 2 + int(rng.integers(-1, 2))
    x0 = min(max(x0, 0), tw - size)
    y0 = min(max(y0, 0), th - size)
    _draw(img, mask, COLOURS[cat], x0, y0, rng)
    return img


def _place(boxes, size, h, w, rng, gap=4, tries=200):
    for _ in range(tries):
        x0 = int(rng.integers(1, w - size - 1))
        y0 = int(rng.integers(1, h - size - 1))
        box = (x0, y0, x0 + size - 1, y0 + size - 1)
        if all(box[0] > b[2] + gap or box[2] < b[0] - gap or box[1] > b[3] + gap or box[3] < b[1] - gap for b in boxes):
            return box
    return None


def _observer_fixations(box, n, rng):
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    qx, qy = (x1 - x0) / 4.0, (y1 - y0) / 4.0
    return [(float(np.clip(cx + rng.uniform(-qx, qx), x0, x1)), float(np.clip(cy + rng.uniform(-qy, qy), y0, y1))) for _ in range(n)]


def make_sample(rng, dims=(64, 128), target_dims=(16, 16), n_distractors=(2, 4), n_exemplars=5,
                glyph_size=(10, 14), sigma=3.0, target_fixations=6, similar_fixations=2, p_similar=0.6):
    h, w = dims
    cat = int(rng.integers(N_CATEGORIES))
    image = _background(h, w, rng)
    boxes = []
    size = int(rng.integers(glyph_size[0], glyph_size[1] + 1))
    tbox = _place(boxes, size, h, w, rng)
    boxes.append(tbox)
    _draw(image, _glyph_mask(category_shape(cat), size, rng), COLOURS[cat], tbox[0], tbox[1], rng)

    k = int(rng.integers(n_distractors[0], n_distractors[1] + 1))
    others = [c for c in range(N_CATEGORIES) if c != cat]
    dboxes, similar_boxes = [], []
    for i in range(k):
        if i == 0 and rng.random() < p_similar:
            dcat = similar_category(cat)
        else:
            dcat = int(rng.choice(others))
        dsize = int(rng.integers(glyph_size[0], glyph_size[1] + 1))
        box = _place(boxes, dsize, h, w, rng)
        if box is None:
            continue
        boxes.append(box)
        dboxes.append((dcat, box))
        _draw(image, _glyph_mask(category_shape(dcat), dsize, rng), COLOURS[dcat], box[0], box[1], rng)
        if dcat == similar_category(cat):
            similar_boxes.append(box)

    # resample observer jitter until the density peak sits on the target
    for _ in range(100):
        fix = _observer_fixations(tbox, target_fixations, rng)
        for box in similar_boxes:
            fix += _observer_fixations(box, similar_fixations, rng)
        gt = build_density_map(fix, (w, h), sigma=sigma)
        r, c = np.unravel_index(int(np.argmax(gt.values)), gt.values.shape)
        if tbox[0] <= c <= tbox[2] and tbox[1] <= r <= tbox[3]:
            break
    else:
        raise RuntimeError("could not place the density peak on the target")

    targets = [_exemplar(cat, target_dims, rng) for _ in range(n_exemplars)]
    return SyntheticSample(image=image, targets=targets, gt=gt, category=cat, target_box=tbox,
                           distractor_boxes=dboxes, fixations=fix)


def generate_synthetic(seed, n, dims=(64, 128), target_dims=(16, 16), **kwargs):
    """``n`` deterministic samples; ``dims`` is (height, width), both multiples of 8."""
    if any(d % 8 for d in dims) or any(d % 8 for d in target_dims):
        raise ConfigError(f"dims must be multiples of 8, got {dims} and {target_dims}")
    rng = np.random.default_rng(seed)
    return [make_sample(rng, dims, target_dims, **kwargs) for _ in range(n)]


def dataset_digest(samples):
    h = hashlib.sha256()
    for s in samples:
        h.update(np.ascontiguousarray(s.image).tobytes())
        for t in s.targets:
            h.update(np.ascontiguousarray(t).tobytes())
        h.update(np.ascontiguousarray(s.gt.values).tobytes())
        h.update(repr((s.category, s.target_box, s.distractor_boxes)).encode())
    return h.hexdigest()


def argmax_in_target(pred_values, sample):
    r, c = np.unravel_index(int(np.argmax(pred_values)), pred_values.shape)
    x0, y0, x1, y1 = sample.target_box
    return bool(x0 <= c <= x1 and y0 <= r <= y1)
