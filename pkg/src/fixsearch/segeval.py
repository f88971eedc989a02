"""Object-level evaluation of target / distractor segmentations.

Predictions are matched to ground-truth objects by mask IoU, independent of
label; a pair counts as a true positive only when the labels also agree.
Unmatched ground truths are "predicted as background" and unmatched
predictions have background as their ground truth.
"""

from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from fixsearch.errors import InvalidInputError

TARGET = "target"
DISTRACTOR = "distractor"
LOW = "low-distractor"
HIGH = "high-distractor"
BACKGROUND = "background"
TWO_CLASS = (TARGET, DISTRACTOR)
THREE_CLASS = (TARGET, LOW, HIGH)
MAX_LEVEL = 10


@dataclass(eq=False)
class InstanceMask:
    image_id: str
    label: str
    bitmask: np.ndarray
    confidence: float | None = None
    distraction_level: int | None = None

    def __post_init__(self):
        self.bitmask = np.asarray(self.bitmask, dtype=bool)
        if not self.bitmask.any():
            raise InvalidInputError(f"empty mask for a {self.label} in image {self.image_id}")
        if self.distraction_level is not None and not 0 <= self.distraction_level <= MAX_LEVEL:
            raise InvalidInputError(f"distraction level {self.distraction_level} outside 0..{MAX_LEVEL}")


@dataclass
class Pair:
    pred: int
    gt: int
    iou: float
    label_agrees: bool


@dataclass
class MatchResult:
    preds: list
    gts: list
    pairs: list = field(default_factory=list)
    unmatched_preds: list = field(default_factory=list)
    unmatched_gts: list = field(default_factory=list)

    def true_positives(self):
        return [p for p in self.pairs if p.label_agrees]


def compute_iou(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise InvalidInputError(f"mask dims differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def iou_matrix(preds, gts):
    out = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            out[i, j] = compute_iou(p.bitmask, g.bitmask)
    return out


def match_instances(preds, gts, iou_thresh=0.5):
    """Greedy one-to-one matching within one image.

    Predictions are visited by descending confidence (input order on ties);
    each takes the unmatched ground truth with the highest IoU (lowest index on
    ties) provided that IoU >= ``iou_thresh``.
    """
    if not 0 < iou_thresh <= 1:
        raise InvalidInputError(f"iou_thresh must be in (0, 1], got {iou_thresh}")
    ious = iou_matrix(preds, gts)
    order = sorted(range(len(preds)), key=lambda i: -(preds[i].confidence or 0.0))
    free = set(range(len(gts)))
    result = MatchResult(list(preds), list(gts))
    for i in order:
        best, best_iou = None, -1.0
        for j in sorted(free):
            if ious[i, j] >= iou_thresh and ious[i, j] > best_iou:
                best, best_iou = j, ious[i, j]
        if best is None:
            result.unmatched_preds.append(i)
        else:
            free.discard(best)
            result.pairs.append(Pair(i, best, float(best_iou), preds[i].label == gts[best].label))
    result.unmatched_gts = sorted(free)
    result.unmatched_preds.sort()
    return result


def match_dataset(preds, gts, iou_thresh=0.5):
    """Match per image, in first-seen image order (ground truth images first)."""
    images = OrderedDict()
    for g in gts:
        images.setdefault(g.image_id, ([], []))[1].append(g)
    for p in preds:
        images.setdefault(p.image_id, ([], []))[0].append(p)
    return OrderedDict((img, match_instances(ps, gs, iou_thresh)) for img, (ps, gs) in images.items())


@dataclass
class PRCurve:
    label: str
    precision: np.ndarray
    recall: np.ndarray
    confidence: np.ndarray
    n_gt: int


def pr_curve(matches, label):
    """Precision / recall as the confidence threshold descends over all predictions of ``label``."""
    matches = list(matches.values()) if isinstance(matches, dict) else list(matches)
    n_gt = sum(1 for m in matches for g in m.gts if g.label == label)
    if n_gt == 0:
        raise InvalidInputError(f"no ground-truth objects labelled {label!r}; AP is undefined")
    scored = []
    for m in matches:
        hit = {p.pred for p in m.pairs if p.label_agrees}
        for i, p in enumerate(m.preds):
            if p.label == label:
                scored.append((-(p.confidence or 0.0), i in hit))
    scored.sort(key=lambda t: t[0])
    conf = np.array([-c for c, _ in scored])
    tp = np.cumsum([h for _, h in scored], dtype=float)
    k = np.arange(1, len(scored) + 1, dtype=float)
    precision = tp / k if scored else np.zeros(0)
    recall = tp / n_gt if scored else np.zeros(0)
    return PRCurve(label, precision, recall, conf, n_gt)


def average_precision(curve):
    """All-points interpolated area under the PR curve."""
    rec = np.concatenate(([0.0], curve.recall, [1.0]))
    pre = np.concatenate(([0.0], curve.precision, [0.0]))
    pre = np.maximum.accumulate(pre[::-1])[::-1]
    steps = np.nonzero(rec[1:] != rec[:-1])[0]
    return float(np.sum((rec[steps + 1] - rec[steps]) * pre[steps + 1]))


def f1_score(map50, mar50):
    """Harmonic mean of MAP and MAR; defined as 0 when both are 0."""
    if map50 + mar50 == 0:
        return 0.0
    return 2.0 * map50 * mar50 / (map50 + mar50)


@dataclass
class SegScores:
    ap: dict
    recall: dict
    map50: float
    mar50: float
    f1: float
    skipped_images: dict


def mean_recall(matches, labels):
    """Per-label recall averaged over images that contain that label; returns (per-label, skipped)."""
    matches = list(matches.values()) if isinstance(matches, dict) else list(matches)
    per_label, skipped = {}, {}
    for lab in labels:
        vals, skip = [], 0
        for m in matches:
            n = sum(1 for g in m.gts if g.label == lab)
            if n == 0:
                skip += 1
                continue
            tp = sum(1 for p in m.pairs if p.label_agrees and m.gts[p.gt].label == lab)
            vals.append(tp / n)
        per_label[lab] = float(np.mean(vals)) if vals else math.nan
        skipped[lab] = skip
    return per_label, skipped


def gt_labels(matches):
    matches = list(matches.values()) if isinstance(matches, dict) else list(matches)
    return {g.label for m in matches for g in m.gts}


def map_mar_f1(matches, labels=TWO_CLASS):
    """Labels without any ground-truth object get AP nan and are left out of MAP, as with recall."""
    present = gt_labels(matches)
    if not present & set(labels):
        raise InvalidInputError(f"no ground-truth objects for any of {list(labels)}; AP is undefined")
    ap = {lab: average_precision(pr_curve(matches, lab)) if lab in present else math.nan for lab in labels}
    rec, skipped = mean_recall(matches, labels)
    map50 = float(np.nanmean(list(ap.values())))
    mar50 = float(np.nanmean(list(rec.values())))
    return SegScores(ap, rec, map50, mar50, f1_score(map50, mar50), skipped)


@dataclass
class ConfusionMatrix:
    labels: tuple  # object labels followed by BACKGROUND
    counts: np.ndarray  # rows = ground truth, columns = prediction

    def __post_init__(self):
        assert self.counts.shape == (len(self.labels), len(self.labels))

    def index(self, label):
        return self.labels.index(label)

    @property
    def row_totals(self):
        return self.counts.sum(axis=1)

    @property
    def col_totals(self):
        return self.counts.sum(axis=0)

    @property
    def total(self):
        return int(self.counts.sum())

    def with_totals(self):
        """Counts with an appended totals column and row."""
        c = np.concatenate([self.counts, self.row_totals[:, None]], axis=1)
        return np.concatenate([c, c.sum(axis=0, keepdims=True)], axis=0)

    def __add__(self, other):
        if other.labels != self.labels:
            raise InvalidInputError("cannot add confusion matrices over different labels")
        return ConfusionMatrix(self.labels, self.counts + other.counts)


def confusion_matrix(matches, labels=TWO_CLASS):
    """Counts over ``labels`` + background from one MatchResult or a dict/list of them."""
    if isinstance(matches, MatchResult):
        matches = [matches]
    elif isinstance(matches, dict):
        matches = list(matches.values())
    labs = tuple(labels) + (BACKGROUND,)
    idx = {lab: i for i, lab in enumerate(labs)}
    counts = np.zeros((len(labs), len(labs)), dtype=np.int64)
    bg = idx[BACKGROUND]
    for m in matches:
        for p in m.pairs:
            counts[idx[m.gts[p.gt].label], idx[m.preds[p.pred].label]] += 1
        for i in m.unmatched_preds:
            counts[bg, idx[m.preds[i].label]] += 1
        for j in m.unmatched_gts:
            counts[idx[m.gts[j].label], bg] += 1
    cm = ConfusionMatrix(labs, counts)
    expected = sum(len(m.pairs) + len(m.unmatched_preds) + len(m.unmatched_gts) for m in matches)
    assert cm.total == expected
    return cm


def class_accuracy(cm, label):
    """One-vs-rest (TP + TN) / (TP + TN + FP + FN) read off the confusion matrix."""
    k = cm.index(label)
    total = cm.total
    if total == 0:
        return math.nan
    tp = cm.counts[k, k]
    fp = cm.col_totals[k] - tp
    fn = cm.row_totals[k] - tp
    tn = total - tp - fp - fn
    return float((tp + tn) / (tp + tn + fp + fn))


def _disk_offsets(radius):
    r = int(math.ceil(radius))
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    keep = dy ** 2 + dx ** 2 <= radius ** 2
    return dy[keep], dx[keep]


def distraction_level(mask, trials, radius=0.0):
    """Number of distinct subjects with at least one fixation on the mask.

    With ``radius > 0`` a fixation counts when any mask pixel lies within that
    many pixels of it.
    """
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    dy, dx = _disk_offsets(radius) if radius > 0 else (np.zeros(1, int), np.zeros(1, int))
    subjects = set()
    for t in trials:
        if t.subject in subjects:
            continue
        for x, y, *_ in t.fixations:
            r, c = int(math.floor(y)), int(math.floor(x))
            rr, cc = r + dy, c + dx
            ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            if ok.any() and m[rr[ok], cc[ok]].any():
                subjects.add(t.subject)
                break
    return min(len(subjects), MAX_LEVEL)


def classify_distraction(level):
    """1-2 observers -> low, 3 or more -> high."""
    if level == 0:
        raise InvalidInputError("level 0 objects were not fixated and are not distractors")
    if not 1 <= level <= MAX_LEVEL:
        raise InvalidInputError(f"distraction level {level} outside 1..{MAX_LEVEL}")
    return LOW if level <= 2 else HIGH


def check_labels(instances, labels, what="prediction"):
    """Every instance label must be one of ``labels`` (a two-class "distractor" is not a three-class label)."""
    for inst in instances:
        if inst.label not in labels:
            raise InvalidInputError(
                f"{what} in image {inst.image_id} has label {inst.label!r}; expected one of {list(labels)}")


def to_three_class(gts):
    """Relabel ground-truth distractors as low / high by their distraction level."""
    out = []
    for g in gts:
        if g.label == DISTRACTOR:
            if g.distraction_level is None:
                raise InvalidInputError(f"distractor in image {g.image_id} has no distraction level")
            g = InstanceMask(g.image_id, classify_distraction(g.distraction_level), g.bitmask,
                             g.confidence, g.distraction_level)
        out.append(g)
    return out


def distraction_histogram(gts):
    counts = np.zeros(MAX_LEVEL + 1, dtype=np.int64)
    for g in gts:
        if g.distraction_level is not None:
            counts[g.distraction_level] += 1
    return counts


def histogram_csv(counts):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("level", "count"))
    for lvl, c in enumerate(counts):
        w.writerow((lvl, int(c)))
    return buf.getvalue()


def confusion_csv(cm):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("gt\\pred",) + cm.labels + ("total",))
    full = cm.with_totals()
    for name, row in zip(cm.labels + ("total",), full):
        w.writerow((name,) + tuple(int(v) for v in row))
    return buf.getvalue()


def seg_scores_csv(scores):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("label", "ap50", "recall50"))
    for lab in scores.ap:
        w.writerow((lab, repr(scores.ap[lab]), repr(scores.recall[lab])))
    w.writerow(("ALL", repr(scores.map50), repr(scores.mar50)))
    w.writerow(("f1", repr(scores.f1), ""))
    return buf.getvalue()


def _png(fig):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    import matplotlib.pyplot as plt

    plt.close(fig)
    return buf.getvalue()


def render_histogram_png(counts, title="Distraction levels"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(np.arange(len(counts)), counts, color="#c0392b")
    ax.set_xticks(np.arange(len(counts)))
    ax.set_xlabel("distraction level (observers)")
    ax.set_ylabel("objects")
    ax.set_title(title)
    fig.tight_layout()
    return _png(fig)


def render_confusion_png(cm, title="Confusion matrix"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    full = cm.with_totals()
    names = cm.labels + ("total",)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    ax.imshow(cm.counts, cmap="Blues")
    for r in range(full.shape[0]):
        for c in range(full.shape[1]):
            ax.text(c, r, str(int(full[r, c])), ha="center", va="center", fontsize=8)
    ax.set_xticks(range(len(names)), names, rotation=30, fontsize=8)
    ax.set_yticks(range(len(names)), names, fontsize=8)
    ax.set_xlim(-0.5, len(names) - 0.5)
    ax.set_ylim(len(names) - 0.5, -0.5)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    ax.set_title(title)
    fig.tight_layout()
    return _png(fig)


def render_pr_png(curves, title="Precision-recall"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for c in curves:
        ax.plot(c.recall, c.precision, marker=".", label=f"{c.label} (AP {average_precision(c):.3f})")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    return _png(fig)


def load_annotations(data, dims=None, fixations=None, radius=0.0, predictions=False, images=None):
    """InstanceMasks from COCO-style JSON.

    Ground truth: ``{"images": [...], "annotations": [...], "categories": [...]}``
    with category names drawn from the target/distractor label set and an
    optional ``distraction_level`` per annotation. Predictions: a COCO results
    list ``[{"image_id", "category_id", "segmentation", "score"}, ...]`` plus
    the categories / images of the ground truth. ``dims`` (width, height)
    resamples every mask to the working resolution. When ``fixations`` (a list
    of FixationTrial already at mask resolution, keyed by image) is given,
    missing distraction levels are computed from it.
    """
    from fixsearch.cocomask import load_json, resize_mask, segmentation_to_mask

    data = load_json(data)
    if predictions:
        anns = data if isinstance(data, list) else data.get("annotations", [])
        cats = {c["id"]: c["name"] for c in (images or {}).get("categories", [])}
        imgs = {im["id"]: im for im in (images or {}).get("images", [])}
    else:
        anns = data["annotations"]
        cats = {c["id"]: c["name"] for c in data["categories"]}
        imgs = {im["id"]: im for im in data["images"]}
    out = []
    for k, a in enumerate(anns):
        im = imgs.get(a["image_id"])
        if im is None:
            raise InvalidInputError(f"annotation {k} refers to unknown image {a['image_id']!r}")
        label = cats.get(a["category_id"], a["category_id"])
        mask = segmentation_to_mask(a["segmentation"], im["height"], im["width"])
        if dims is not None:
            mask = resize_mask(mask, dims)
        if not mask.any():
            continue
        level = a.get("distraction_level")
        if not predictions and level is None and fixations is not None and label != TARGET:
            level = distraction_level(mask, fixations.get(im.get("file_name", a["image_id"]), []), radius)
        out.append(InstanceMask(
            image_id=str(a["image_id"]),
            label=label,
            bitmask=mask,
            confidence=float(a["score"]) if predictions else None,
            distraction_level=None if predictions else level,
        ))
    return out
