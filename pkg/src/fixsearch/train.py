"""Batch-1 Adam training of the search model on (image, target pool, gt FDM) samples."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from fixsearch import nn
from fixsearch.errors import ConfigError
from fixsearch.model import kl_loss

log = logging.getLogger(__name__)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    valid_loss: list = field(default_factory=list)
    best_epoch: int = -1
    wall_time: float = 0.0
    checkpoint: str | None = None
    best_state: list | None = field(default=None, repr=False)

    def to_dict(self):
        return {
            "train_loss": self.train_loss,
            "valid_loss": self.valid_loss,
            "best_epoch": self.best_epoch,
            "wall_time": self.wall_time,
            "checkpoint": self.checkpoint,
        }


def _check_dims(samples, config, what):
    h, w = config.image_dims
    th, tw = config.target_dims
    for i, s in enumerate(samples):
        if s.image.shape[-2:] != (h, w) or s.gt.values.shape != (h, w):
            raise ConfigError(f"{what} sample {i}: dims {s.image.shape[-2:]} != config {config.image_dims}")
        if config.two_stream and any(t.shape[-2:] != (th, tw) for t in s.targets):
            raise ConfigError(f"{what} sample {i}: target dims differ from {config.target_dims}")


@dataclass(frozen=True)
class View:
    """One training-time rendering of a sample."""

    perm: tuple = (0, 1, 2)  # colour channel order
    hflip: bool = False
    vflip: bool = False
    shift: tuple = (0, 0)  # (dy, dx) circular shift of the scene, never moving a glyph across the border


def shift_range(sample):
    """Inclusive (dy_lo, dy_hi, dx_lo, dx_hi) that keep every glyph box inside the frame."""
    boxes = [getattr(sample, "target_box", None)] + [b for _, b in getattr(sample, "distractor_boxes", None) or []]
    boxes = [b for b in boxes if b is not None]
    if not boxes:
        return (0, 0, 0, 0)
    h, w = sample.image.shape[-2:]
    x0 = min(b[0] for b in boxes)
    y0 = min(b[1] for b in boxes)
    x1 = max(b[2] for b in boxes)
    y1 = max(b[3] for b in boxes)
    return (-y0, h - 1 - y1, -x0, w - 1 - x1)


def draw_view(sample, perm, hflip, vflip, u):
    """Map uniform draws ``u`` (two values in [0, 1)) to a View within ``shift_range``."""
    ylo, yhi, xlo, xhi = shift_range(sample)
    dy = ylo + min(int(u[0] * (yhi - ylo + 1)), yhi - ylo)
    dx = xlo + min(int(u[1] * (xhi - xlo + 1)), xhi - xlo)
    return View(tuple(int(c) for c in perm), bool(hflip), bool(vflip), (dy, dx))


def augment_views(image, target, gt, view):
    """Render image, target patch and density under one View.

    Colour and flips hit all three, so the target still matches its glyph;
    the shift moves only the scene and its density.
    """
    from fixsearch.fdm import DensityMap

    perm = list(view.perm)
    image = np.roll(image[perm], view.shift, axis=(1, 2))
    g = np.roll(gt.values, view.shift, axis=(0, 1))
    target = target[perm] if target is not None else None
    for flip, axis in ((view.hflip, -1), (view.vflip, -2)):
        if flip:
            image = np.flip(image, axis)
            g = np.flip(g, axis)
            target = np.flip(target, axis) if target is not None else None
    target = None if target is None else np.ascontiguousarray(target)
    return np.ascontiguousarray(image), target, DensityMap(np.ascontiguousarray(g))


def sample_loss(model, sample, target_index=0, view=None):
    target = sample.target_patch(target_index) if model.config.two_stream else None
    image, gt = sample.image, sample.gt
    if view is not None:
        image, target, gt = augment_views(image, target, gt, view)
    return kl_loss(model(image, target), gt)


def evaluate_loss(model, samples):
    if not samples:
        return float("nan")
    return float(np.mean([sample_loss(model, s).item() for s in samples]))


def lr_at(config, step, total):
    """Learning rate for optimizer step ``step`` (0-based) out of ``total``."""
    if config.lr_decay == "none" or total <= 1:
        return config.lr
    floor = config.lr_floor * config.lr
    return floor + 0.5 * (config.lr - floor) * (1.0 + math.cos(math.pi * step / (total - 1)))


def train(model, dataset, config=None, valid=None, checkpoint_path=None, on_epoch=None):
    """Train in place and return a TrainReport.

    Every epoch visits the samples in a seeded order and feeds each one a
    target exemplar drawn (seeded) from its pool. With ``config.augment`` each
    step also sees a seeded colour permutation / mirror of the sample, and the
step size follows ``lr_at``. Parameters from the epoch
    with the lowest validation loss (training loss when no validation set is
    given) are kept in ``report.best_state`` and written to ``checkpoint_path``.
    ``on_epoch(epoch, model, report)`` runs after each epoch, e.g. for logging.
    """
    config = config or model.config
    if not dataset:
        raise ConfigError("training set is empty")
    _check_dims(dataset, config, "train")
    _check_dims(valid or [], config, "valid")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = nn.Adam(params, lr=config.lr)
    report = TrainReport()
    best = np.inf
    total = config.epochs * len(dataset)
    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        picks = rng.integers(0, 1 << 30, size=len(dataset))
        n = len(dataset)
        perms = rng.permuted(np.tile(np.arange(3), (n, 1)), axis=1)
        flips = rng.random((n, 2)) < 0.5
        shifts = rng.random((n, 2))
        losses = []
        for k, idx in enumerate(order):
            s = dataset[idx]
            opt.zero_grad()
            opt.state.lr = lr_at(config, epoch * len(dataset) + k, total)
            view = None
            if config.augment and s.image.shape[0] == 3:
                perm = perms[k] if config.augment_colour else (0, 1, 2)
                view = draw_view(s, perm, flips[k, 0], flips[k, 1], shifts[k])
            loss = sample_loss(model, s, int(picks[k]) % len(s.targets), view)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        report.train_loss.append(float(np.mean(losses)))
        score = report.train_loss[-1]
        if valid:
            report.valid_loss.append(evaluate_loss(model, valid))
            score = report.valid_loss[-1]
        if score < best:
            best = score
            report.best_epoch = epoch
            report.best_state = model.state()
        log.info("epoch %d train %.4f valid %s", epoch + 1, report.train_loss[-1],
                 f"{report.valid_loss[-1]:.4f}" if valid else "-")
        if on_epoch is not None:
            on_epoch(epoch, model, report)
    report.wall_time = time.perf_counter() - start
    if report.best_state is None:
        report.best_state = model.state()
    if checkpoint_path is not None:
        from fixsearch._io import atomic_write_bytes

        atomic_write_bytes(checkpoint_path, nn.dump_params(report.best_state))
        report.checkpoint = str(checkpoint_path)
    return report
