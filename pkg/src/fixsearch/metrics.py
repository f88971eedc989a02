"""The eight saliency metrics: AUC-Judd, AUC-Borji, shuffled AUC, NSS, KLD, CC, SIM and IG.

Distribution-based metrics (KLD, CC, SIM) compare the prediction with the
blurred ground-truth density; location-based metrics (NSS, IG and the AUCs)
use the binary fixation map. Standardization uses the population standard
deviation. All ROC sweeps count a pixel as positive when its value is >= the
threshold.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from fixsearch.errors import DegenerateInputError, InvalidInputError

METRIC_NAMES = ("auc_judd", "auc_borji", "sauc", "nss", "kld", "cc", "sim", "ig")
EPSILON = 1e-7


def _values(m):
    if hasattr(m, "values"):
        return np.asarray(m.values, dtype=np.float64)
    return np.asarray(m, dtype=np.float64)


def _bits(m):
    if hasattr(m, "bits"):
        return np.asarray(m.bits, dtype=bool)
    return np.asarray(m, dtype=bool)


def _same_dims(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise InvalidInputError(f"map dims differ: {shape} vs {a.shape}")


def _nonempty(bits, what="ground-truth"):
    if not bits.any():
        raise InvalidInputError(f"{what} fixation map has no fixations")


def _sum_normalize(v):
    total = v.sum()
    if total <= 0:
        raise DegenerateInputError("map has no mass")
    return v / total


def _minmax(v, what):
    lo, hi = v.min(), v.max()
    if hi == lo:
        raise DegenerateInputError(f"{what} map is constant; min-max normalization is undefined")
    return (v - lo) / (hi - lo)


def _standardize(v, what):
    sd = v.std()
    if sd == 0:
        raise DegenerateInputError(f"{what} map is constant; standardization is undefined")
    return (v - v.mean()) / sd


def kld(pred, gt, epsilon=EPSILON):
    p, q = _values(pred), _values(gt)
    _same_dims(p, q)
    p, q = _sum_normalize(p), _sum_normalize(q)
    return float(np.sum(q * np.log(epsilon + q / (epsilon + p))))


def cc(pred, gt, formula="pearson"):
    """Correlation of the standardized maps.

    ``formula="pearson"`` gives sum(PQ) / sqrt(sum(P^2) * sum(Q^2)).
    ``formula="eq2"`` gives the literal sum(PQ) / sqrt(sum(P^2 + Q^2)), which is
    not bounded by 1 (it equals sqrt(N/2) for identical maps of N pixels).
    """
    p, q = _values(pred), _values(gt)
    _same_dims(p, q)
    p, q = _standardize(p, "prediction"), _standardize(q, "ground-truth")
    num = np.sum(p * q)
    if formula == "pearson":
        return float(num / np.sqrt(np.sum(p * p) * np.sum(q * q)))
    if formula == "eq2":
        return float(num / np.sqrt(np.sum(p * p + q * q)))
    raise InvalidInputError(f"unknown cc formula {formula!r}")


def sim(pred, gt):
    p, q = _values(pred), _values(gt)
    _same_dims(p, q)
    p = _sum_normalize(_minmax(p, "prediction"))
    q = _sum_normalize(_minmax(q, "ground-truth"))
    return float(np.sum(np.minimum(p, q)))


def nss(pred, gt):
    p, b = _values(pred), _bits(gt)
    _same_dims(p, b)
    _nonempty(b)
    return float(_standardize(p, "prediction")[b].mean())


def ig(pred, baseline, gt, epsilon=EPSILON, base=2.0):
    p, bl, b = _values(pred), _values(baseline), _bits(gt)
    _same_dims(p, bl, b)
    _nonempty(b)
    p = _sum_normalize(_minmax(p, "prediction"))
    bl = _sum_normalize(_minmax(bl, "baseline"))
    gain = np.log(p[b] + epsilon) - np.log(bl[b] + epsilon)
    return float(gain.mean() / math.log(base))


def _roc_area(tp, fp):
    """Trapezoidal area of the ROC through (0,0), the given points (thresholds descending) and (1,1)."""
    x = np.concatenate(([0.0], fp, [1.0]))
    y = np.concatenate(([0.0], tp, [1.0]))
    # left-to-right accumulation (cumsum), not pairwise np.sum, so the area is order-stable
    return float(np.cumsum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0)[-1])


def _count_at_or_above(sorted_vals, thresholds):
    return sorted_vals.size - np.searchsorted(sorted_vals, thresholds, side="left")


def auc_judd(pred, gt):
    """Thresholds are the distinct prediction values at fixated pixels.

    A constant prediction scores 0.5.
    """
    p, b = _values(pred), _bits(gt)
    _same_dims(p, b)
    _nonempty(b)
    if b.all():
        raise InvalidInputError("every pixel is fixated; the false-positive rate is undefined")
    if p.max() == p.min():
        return 0.5
    s = (p - p.min()) / (p.max() - p.min())
    fix = np.sort(s[b])
    non = np.sort(s[~b])
    thresholds = np.unique(fix)[::-1]
    tp = _count_at_or_above(fix, thresholds) / fix.size
    fp = _count_at_or_above(non, thresholds) / non.size
    return _roc_area(tp, fp)


def rank_normalize(v):
    """Dense rank of each value scaled to [0, 1]: invariant to strictly increasing transforms."""
    uniq, inv = np.unique(v, return_inverse=True)
    return inv.reshape(v.shape) / (uniq.size - 1)


def _sweep_thresholds(top, step):
    if step <= 0:
        raise InvalidInputError(f"step must be positive, got {step}")
    k = int(math.floor(top / step + 1e-9))
    t = np.arange(k + 1) * step
    return np.minimum(t, top)[::-1]


def _split_auc(s, b, negatives, n_splits, step, rng):
    fix = np.sort(s[b])
    thresholds = _sweep_thresholds(s.max(), step)
    tp = _count_at_or_above(fix, thresholds) / fix.size
    draws = rng.integers(0, negatives.size, size=(n_splits, fix.size))
    aucs = np.empty(n_splits)
    for k in range(n_splits):
        neg = np.sort(negatives[draws[k]])
        fp = _count_at_or_above(neg, thresholds) / neg.size
        aucs[k] = _roc_area(tp, fp)
    return float(aucs.mean())


def _sweep_scores(p, threshold_space):
    s = (p - p.min()) / (p.max() - p.min())
    if threshold_space == "rank":
        return rank_normalize(s)
    if threshold_space == "value":
        return s
    raise InvalidInputError(f"unknown threshold space {threshold_space!r}")


def auc_borji(pred, gt, n_splits=100, step=0.05, seed=0, threshold_space="rank"):
    """Fixed-step threshold sweep; negatives are pixels drawn uniformly (with replacement).

    Each split draws as many negatives as there are fixated pixels. With
    ``threshold_space="rank"`` the sweep runs over dense-rank-normalized values,
    which keeps the score invariant to monotone transforms of the prediction;
    ``"value"`` sweeps the min-max normalized values directly.
    """
    p, b = _values(pred), _bits(gt)
    _same_dims(p, b)
    _nonempty(b)
    if n_splits < 1:
        raise InvalidInputError("n_splits must be >= 1")
    if p.max() == p.min():
        return 0.5
    s = _sweep_scores(p, threshold_space)
    rng = np.random.default_rng(seed)
    return _split_auc(s, b, s.ravel(), n_splits, step, rng)


def sauc(pred, gt, other, n_splits=100, step=0.05, seed=0, threshold_space="rank"):
    """Like auc_borji, but negatives are drawn from the fixated pixels of another image."""
    p, b, o = _values(pred), _bits(gt), _bits(other)
    _same_dims(p, b, o)
    _nonempty(b)
    _nonempty(o, "other-image")
    if n_splits < 1:
        raise InvalidInputError("n_splits must be >= 1")
    if p.max() == p.min():
        return 0.5
    s = _sweep_scores(p, threshold_space)
    rng = np.random.default_rng(seed)
    return _split_auc(s, b, s[o], n_splits, step, rng)


@dataclass
class MetricConfig:
    epsilon: float = EPSILON
    auc_step: float = 0.05
    n_splits: int = 100
    seed: int = 0
    cc_formula: str = "pearson"
    ig_log_base: float = 2.0
    threshold_space: str = "rank"


@dataclass
class SaliencyScores:
    auc_judd: float = math.nan
    auc_borji: float = math.nan
    sauc: float = math.nan
    nss: float = math.nan
    kld: float = math.nan
    cc: float = math.nan
    sim: float = math.nan
    ig: float = math.nan
    failures: dict = field(default_factory=dict)

    def as_dict(self):
        return {k: getattr(self, k) for k in METRIC_NAMES}


def evaluate_all(pred, gt_density, gt_binary, baseline=None, other=None, config=None):
    """Score one prediction with all eight metrics.

    A metric that fails (degenerate input, missing baseline / other map) is
    left as NaN and its error message is recorded in ``failures``.
    """
    cfg = config or MetricConfig()
    jobs = {
        "auc_judd": lambda: auc_judd(pred, gt_binary),
        "auc_borji": lambda: auc_borji(pred, gt_binary, cfg.n_splits, cfg.auc_step, cfg.seed, cfg.threshold_space),
        "sauc": lambda: sauc(pred, gt_binary, _need(other, "other-image fixation map"),
                             cfg.n_splits, cfg.auc_step, cfg.seed, cfg.threshold_space),
        "nss": lambda: nss(pred, gt_binary),
        "kld": lambda: kld(pred, gt_density, cfg.epsilon),
        "cc": lambda: cc(pred, gt_density, cfg.cc_formula),
        "sim": lambda: sim(pred, gt_density),
        "ig": lambda: ig(pred, _need(baseline, "baseline map"), gt_binary, cfg.epsilon, cfg.ig_log_base),
    }
    out = SaliencyScores()
    for name, job in jobs.items():
        try:
            setattr(out, name, float(job()))
        except InvalidInputError as exc:
            out.failures[name] = str(exc)
    return out


def _need(x, what):
    if x is None:
        raise InvalidInputError(f"{what} not provided")
    return x


def aggregate(scores):
    """Per-metric (mean, sd) over a batch, skipping failed entries; sd uses ddof=1 (0 for one value)."""
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(s, name) if isinstance(s, SaliencyScores) else s[name] for s in scores], dtype=float)
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            out[name] = (math.nan, math.nan)
        else:
            out[name] = (float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0)
    return out


def _fmt(v):
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def scores_csv(rows):
    """CSV text: one row per (image_id, category, scores), then mean and sd rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("image_id", "category") + METRIC_NAMES)
    for image_id, category, s in rows:
        w.writerow([image_id, category] + [_fmt(getattr(s, k)) for k in METRIC_NAMES])
    agg = aggregate([s for _, _, s in rows])
    w.writerow(["ALL", "mean"] + [_fmt(agg[k][0]) for k in METRIC_NAMES])
    w.writerow(["ALL", "sd"] + [_fmt(agg[k][1]) for k in METRIC_NAMES])
    return buf.getvalue()
