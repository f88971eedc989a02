"""COCO-Search18 fixation records: parsing, filtering, rescaling, splitting and augmentation.

Input records follow the public COCO-Search18 JSON schema::

    {"name": "000000478726.jpg", "subject": 2, "task": "bottle",
     "condition": "present", "X": [...], "Y": [...], "T": [...],
     "correct": 1, "split": "train"}

``X``/``Y`` are pixel coordinates in the 1680x1050 display frame and ``T``
the fixation durations in ms. ``condition`` and ``split`` are optional.
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from fixsearch.errors import ConfigError, InvalidInputError, ParseError, ValidationError

log = logging.getLogger(__name__)

CATEGORIES = (
    "bottle", "bowl", "car", "chair", "clock", "cup", "fork", "keyboard", "knife",
    "laptop", "microwave", "mouse", "oven", "potted plant", "sink", "stop sign", "toilet", "tv",
)
DISPLAY_DIMS = (1680, 1050)
WORKING_DIMS = (512, 320)
DEFAULT_TEST_PER_CATEGORY = 18


@dataclass(frozen=True)
class FixationTrial:
    image_id: str
    category: str
    subject: int
    fixations: tuple  # ((x, y, duration_ms), ...)
    correct: bool
    image_dims: tuple = DISPLAY_DIMS  # (width, height)
    split: str | None = None
    condition: str = "present"
    augmented: bool = False
    filtered: bool = False  # first fixation already removed

    @property
    def key(self):
        return (self.image_id, self.category)

    def points(self):
        return [(x, y) for x, y, _ in self.fixations]


@dataclass(frozen=True)
class TaskImagePair:
    image_id: str
    category: str
    trials: tuple
    augmented: bool = False

    @property
    def key(self):
        return (self.image_id, self.category, self.augmented)

    @property
    def split(self):
        tags = {t.split for t in self.trials}
        return tags.pop() if len(tags) == 1 else None

    def points(self):
        return [p for t in self.trials for p in t.points()]


@dataclass
class DatasetSplit:
    train: list
    valid: list
    test: list
    seed: int
    mode: str = "random"


_FIELDS = ("name", "subject", "task", "X", "Y", "T", "correct")


def _byte_offset(text, char_pos):
    return len(text[:char_pos].encode("utf-8"))


def parse_fixation_dataset(raw, image_dims=DISPLAY_DIMS):
    """Parse a JSON array of trial records into FixationTrial objects.

    Invalid JSON raises ParseError with the byte offset; a malformed record
    raises ValidationError naming its index.
    """
    text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", offset=_byte_offset(text, exc.pos)) from exc
    if not isinstance(records, list):
        raise ParseError("expected a JSON array of trial records", offset=0)
    return [_parse_record(i, rec, image_dims) for i, rec in enumerate(records)]


def _parse_record(i, rec, image_dims):
    if not isinstance(rec, dict):
        raise ValidationError("record is not an object", index=i)
    missing = [f for f in _FIELDS if f not in rec]
    if missing:
        raise ValidationError(f"missing fields {missing}", index=i)
    xs, ys, ts = rec["X"], rec["Y"], rec["T"]
    if not all(isinstance(a, list) for a in (xs, ys, ts)):
        raise ValidationError("X, Y and T must be arrays", index=i)
    if not (len(xs) == len(ys) == len(ts)):
        raise ValidationError(f"X/Y/T lengths differ ({len(xs)}, {len(ys)}, {len(ts)})", index=i)
    if not xs:
        raise ValidationError("trial has no fixations", index=i)
    task = rec["task"]
    if task not in CATEGORIES:
        raise ValidationError(f"unknown target category {task!r}", index=i)
    try:
        fix = tuple((float(x), float(y), float(t)) for x, y, t in zip(xs, ys, ts))
        subject = int(rec["subject"])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"non-numeric value: {exc}", index=i) from exc
    if not all(math.isfinite(v) for f in fix for v in f):
        raise ValidationError("non-finite coordinate or duration", index=i)
    return FixationTrial(
        image_id=str(rec["name"]),
        category=task,
        subject=subject,
        fixations=fix,
        correct=bool(rec["correct"]),
        image_dims=tuple(image_dims),
        split=rec.get("split"),
        condition=rec.get("condition", "present"),
    )


def filter_trials(trials):
    """Keep correct target-present trials and drop each one's first (central-dot) fixation.

    Trials left without fixations are dropped and counted in the log.
    Already-filtered trials pass through unchanged, so filtering is idempotent.
    """
    kept, emptied = [], 0
    for t in trials:
        if not t.correct or t.condition == "absent":
            continue
        if t.filtered:
            kept.append(t)
            continue
        rest = t.fixations[1:]
        if not rest:
            emptied += 1
            continue
        kept.append(replace(t, fixations=rest, filtered=True))
    if emptied:
        log.info("dropped %d trials left empty by first-fixation removal", emptied)
    return kept


def rescale_trial(trial, to_dims):
    """Scale fixation coordinates axis-wise and clamp them to [0, w-1] x [0, h-1]."""
    sw, sh = trial.image_dims
    tw, th = to_dims
    if sw <= 0 or sh <= 0:
        raise InvalidInputError(f"source dims must be positive, got {trial.image_dims}")
    if tw <= 0 or th <= 0:
        raise InvalidInputError(f"target dims must be positive, got {to_dims}")
    # multiply before dividing so integer coordinates on exact grid multiples stay exact
    fix = tuple(
        (min(max(x * tw / sw, 0.0), tw - 1.0), min(max(y * th / sh, 0.0), th - 1.0), t)
        for x, y, t in trial.fixations
    )
    return replace(trial, fixations=fix, image_dims=(tw, th))


def group_pairs(trials):
    """Group trials into task-image pairs, in first-seen order."""
    groups = OrderedDict()
    for t in trials:
        groups.setdefault((t.image_id, t.category, t.augmented), []).append(t)
    return [TaskImagePair(image_id=k[0], category=k[1], trials=tuple(v), augmented=k[2]) for k, v in groups.items()]


def build_split(pairs, mode="paper", seed=0, fractions=(0.8, 0.1, 0.1), test_per_category=DEFAULT_TEST_PER_CATEGORY):
    """Partition task-image pairs into train / valid / test.

    ``mode="paper"``: pairs tagged ``split == "valid"`` form the validation set; from
    the rest, ``test_per_category`` pairs per category become the test set.
    Within a category pairs are sorted by image_id, then shuffled with ``seed``.
    ``mode="random"``: a seeded permutation cut by ``fractions``.
    """
    pairs = list(pairs)
    if any(p.augmented for p in pairs):
        raise ConfigError("split before augmenting; augmented pairs must stay in train")
    rng = np.random.default_rng(seed)
    if mode == "random":
        if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
            raise ConfigError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
        order = rng.permutation(len(pairs))
        n_train = int(round(fractions[0] * len(pairs)))
        n_valid = int(round(fractions[1] * len(pairs)))
        n_valid = min(n_valid, len(pairs) - n_train)
        idx_train = order[:n_train]
        idx_valid = order[n_train:n_train + n_valid]
        idx_test = order[n_train + n_valid:]
        return DatasetSplit([pairs[i] for i in idx_train], [pairs[i] for i in idx_valid],
                            [pairs[i] for i in idx_test], seed, mode)
    if mode != "paper":
        raise ConfigError(f"unknown split mode {mode!r}")
    valid = [p for p in pairs if p.split == "valid"]
    pool = [p for p in pairs if p.split != "valid"]
    by_cat = OrderedDict()
    for p in pool:
        by_cat.setdefault(p.category, []).append(p)
    test_keys = set()
    for cat in sorted(by_cat):
        members = sorted(by_cat[cat], key=lambda p: p.image_id)
        if len(members) < test_per_category:
            raise ConfigError(f"category {cat!r} has {len(members)} pairs, {test_per_category} needed for the test set")
        perm = rng.permutation(len(members))
        test_keys.update(members[i].key for i in perm[:test_per_category])
    test = [p for p in pool if p.key in test_keys]
    train = [p for p in pool if p.key not in test_keys]
    return DatasetSplit(train, valid, test, seed, mode)


def augment_hflip(pair, image_width):
    """Mirror fixations horizontally (x -> width - 1 - x); the copy is tagged as augmented."""
    trials = tuple(
        replace(t, fixations=tuple((image_width - 1 - x, y, d) for x, y, d in t.fixations), augmented=not t.augmented)
        for t in pair.trials
    )
    return TaskImagePair(pair.image_id, pair.category, trials, augmented=not pair.augmented)


def augment_split(split, image_width):
    """Append flipped copies of every training pair; valid and test are left untouched."""
    train = list(split.train) + [augment_hflip(p, image_width) for p in split.train]
    return DatasetSplit(train, list(split.valid), list(split.test), split.seed, split.mode)


def kfold(pairs, k=5, seed=0):
    """Seeded k-fold partition; the first len(pairs) % k folds get one extra member."""
    pairs = list(pairs)
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if k > len(pairs):
        raise ConfigError(f"k={k} exceeds the number of pairs ({len(pairs)})")
    order = np.random.default_rng(seed).permutation(len(pairs))
    sizes = [len(pairs) // k + (1 if i < len(pairs) % k else 0) for i in range(k)]
    folds, start = [], 0
    for size in sizes:
        val_idx = set(order[start:start + size].tolist())
        start += size
        train = [p for i, p in enumerate(pairs) if i not in val_idx]
        valid = [pairs[i] for i in sorted(val_idx)]
        folds.append((train, valid))
    return folds


def trial_to_record(trial, split=None):
    rec = {
        "image_id": trial.image_id,
        "category": trial.category,
        "subject": trial.subject,
        "fixations": [[x, y, d] for x, y, d in trial.fixations],
        "correct": trial.correct,
        "augmented": trial.augmented,
        "filtered": trial.filtered,
        "image_dims": list(trial.image_dims),
    }
    if split is not None:
        rec["split"] = split
    return rec


def write_manifest(split_or_trials):
    """Newline-delimited JSON, one trial per line."""
    lines = []
    if isinstance(split_or_trials, DatasetSplit):
        for name in ("train", "valid", "test"):
            for pair in getattr(split_or_trials, name):
                lines += [trial_to_record(t, name) for t in pair.trials]
    else:
        lines = [trial_to_record(t) for t in split_or_trials]
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in lines)


def read_manifest(text):
    trials = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            r = json.loads(line)
            trials.append(FixationTrial(
                image_id=r["image_id"], category=r["category"], subject=int(r["subject"]),
                fixations=tuple(tuple(float(v) for v in f) for f in r["fixations"]),
                correct=bool(r["correct"]), image_dims=tuple(r.get("image_dims", WORKING_DIMS)),
                split=r.get("split"), augmented=bool(r.get("augmented", False)),
                filtered=bool(r.get("filtered", True)),
            ))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad manifest line: {exc}", index=lineno) from exc
    return trials
