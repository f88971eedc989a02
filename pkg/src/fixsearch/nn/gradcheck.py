"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: tuple | None = None  # (tensor index, flat index, analytic, numeric)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def relative_error(analytic, numeric, floor=1e-6):
    # floor keeps coordinates with tiny true gradients from amplifying round-off
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(fn, tensors, tolerance=1e-4, n_coords=100, h=1e-5, seed=0):
    """Compare backprop gradients of ``fn()`` w.r.t. ``tensors`` with central differences.

    ``fn`` takes no arguments and rebuilds the graph from the tensors' current
    data. Coordinates are sampled uniformly from all tensors (without
    replacement); if fewer than ``n_coords`` exist, all are checked.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    coords = [(ti, fi) for ti, t in enumerate(tensors) for fi in range(t.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    worst, max_err = None, 0.0
    for ti, fi in coords:
        flat = tensors[ti].data.reshape(-1)
        orig = flat[fi]
        flat[fi] = orig + h
        fp = fn().item()
        flat[fi] = orig - h
        fm = fn().item()
        flat[fi] = orig
        numeric = (fp - fm) / (2 * h)
        a = analytic[ti].reshape(-1)[fi]
        err = relative_error(a, numeric)
        if err >= max_err:
            max_err, worst = err, (ti, fi, float(a), float(numeric))
    return GradCheckReport(max_rel_error=max_err, n_checked=len(coords), tolerance=tolerance, worst=worst)
