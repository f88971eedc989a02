"""Independent slow reference implementations used as test oracles.

Everything here is plain-Python loops over pixels, written from the metric
definitions without touching fixsearch internals.
"""

import itertools
import math


def _flat(m):
    return [float(v) for row in m for v in row]


def _normalize(vals):
    s = math.fsum(vals)
    return [v / s for v in vals]


def _minmax(vals):
    lo, hi = min(vals), max(vals)
    return [(v - lo) / (hi - lo) for v in vals]


def _zscore(vals):
    n = len(vals)
    mu = math.fsum(vals) / n
    sd = math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / n)
    return [(v - mu) / sd for v in vals]


def kld(pred, gt, eps=1e-7):
    p = _normalize(_flat(pred))
    q = _normalize(_flat(gt))
    return math.fsum(qi * math.log(eps + qi / (eps + pi)) for pi, qi in zip(p, q))


def cc_pearson(pred, gt):
    p = _zscore(_flat(pred))
    q = _zscore(_flat(gt))
    num = math.fsum(a * b for a, b in zip(p, q))
    return num / math.sqrt(math.fsum(a * a for a in p) * math.fsum(b * b for b in q))


def cc_eq2(pred, gt):
    p = _zscore(_flat(pred))
    q = _zscore(_flat(gt))
    num = math.fsum(a * b for a, b in zip(p, q))
    return num / math.sqrt(math.fsum(a * a + b * b for a, b in zip(p, q)))


def sim(pred, gt):
    p = _normalize(_minmax(_flat(pred)))
    q = _normalize(_minmax(_flat(gt)))
    return math.fsum(min(a, b) for a, b in zip(p, q))


def nss(pred, fix):
    p = _zscore(_flat(pred))
    f = _flat(fix)
    picked = [v for v, b in zip(p, f) if b]
    return math.fsum(picked) / len(picked)


def ig(pred, base, fix, eps=1e-7):
    p = _normalize(_minmax(_flat(pred)))
    b = _normalize(_minmax(_flat(base)))
    f = _flat(fix)
    gains = [math.log2(pi + eps) - math.log2(bi + eps) for pi, bi, fi in zip(p, b, f) if fi]
    return math.fsum(gains) / len(gains)


def auc_judd(pred, fix):
    """Sweep every distinct fixated value as a threshold, counting pixels by direct loops.

    A pixel is positive when its value is >= the threshold.
    """
    p = _flat(pred)
    f = _flat(fix)
    lo, hi = min(p), max(p)
    if hi == lo:
        return 0.5
    s = [(v - lo) / (hi - lo) for v in p]
    pos = [v for v, b in zip(s, f) if b]
    neg = [v for v, b in zip(s, f) if not b]
    pts = [(0.0, 0.0)]
    for t in sorted(set(pos), reverse=True):
        tp = sum(1 for v in pos if v >= t) / len(pos)
        fp = sum(1 for v in neg if v >= t) / len(neg)
        pts.append((fp, tp))
    pts.append((1.0, 1.0))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def iou(a, b):
    inter = union = 0
    for ra, rb in zip(a, b):
        for va, vb in zip(ra, rb):
            inter += bool(va) and bool(vb)
            union += bool(va) or bool(vb)
    return inter / union if union else 0.0


def best_matching(ious, thresh=0.5):
    """Brute force over all one-to-one assignments with IoU >= thresh.

    Returns the largest number of pairs achievable, together with the best
    total IoU among assignments of that size.
    """
    n_p = len(ious)
    n_g = len(ious[0]) if ious else 0
    best = (0, 0.0)
    gts = list(range(n_g))
    for k in range(min(n_p, n_g), 0, -1):
        for ps in itertools.combinations(range(n_p), k):
            for gs in itertools.permutations(gts, k):
                if all(ious[p][g] >= thresh for p, g in zip(ps, gs)):
                    tot = sum(ious[p][g] for p, g in zip(ps, gs))
                    if (k, tot) > best:
                        best = (k, tot)
        if best[0] == k:
            break
    return best


def greedy_matching(ious, confidences, thresh=0.5):
    """The greedy rule written out with plain loops; returns sorted (pred, gt) pairs.

    Predictions by descending confidence, earlier index first on ties; each
    takes the free gt with the largest IoU >= thresh, earlier index on ties.
    """
    order = list(range(len(confidences)))
    for i in range(len(order)):
        for j in range(len(order) - 1 - i):
            if confidences[order[j]] < confidences[order[j + 1]]:
                order[j], order[j + 1] = order[j + 1], order[j]
    taken, pairs = set(), []
    for p in order:
        pick = None
        for g in range(len(ious[p])):
            if g in taken or ious[p][g] < thresh:
                continue
            if pick is None or ious[p][g] > ious[p][pick]:
                pick = g
        if pick is not None:
            taken.add(pick)
            pairs.append((p, pick))
    return sorted(pairs)


def f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)
