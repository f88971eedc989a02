"""Train the toy two-stream model on synthetic scenes and log held-out accuracy per epoch.

    python scripts/train_toy.py [--epochs 30] [--seed 7] [--out runs/toy]
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from fixsearch.cli import _datasets
from fixsearch.config import load_config
from fixsearch.model import build_model
from fixsearch.synthetic import argmax_in_target
from fixsearch.train import train


def hit_rate(model, samples):
    return float(np.mean([argmax_in_target(model.predict(s.image, s.target_patch(0)).values, s) for s in samples]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default="runs/toy")
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg.model.epochs = args.epochs
    if args.seed is not None:
        cfg.model.seed = cfg.data.seed = args.seed
    tr, va, te = _datasets(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    t0 = time.perf_counter()

    def log_epoch(epoch, model, report):
        acc = hit_rate(model, te)
        rows.append((epoch + 1, report.train_loss[-1], report.valid_loss[-1], acc))
        print(f"epoch {epoch + 1:2d}  train {report.train_loss[-1]:.4f}  valid {report.valid_loss[-1]:.4f}  "
              f"test hits {acc:.2f}  {time.perf_counter() - t0:.0f}s", flush=True)

    model = build_model(cfg.model)
    report = train(model, tr, cfg.model, valid=va, checkpoint_path=out / "checkpoint.fdmp", on_epoch=log_epoch)
    model.load_state(report.best_state)
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("epoch", "train_kl", "valid_kl", "test_hit_rate"))
        w.writerows(rows)
    print(f"best epoch {report.best_epoch + 1}: test hits {hit_rate(model, te):.2f}, "
          f"train KL ratio {report.train_loss[-1] / report.train_loss[0]:.3f}")


if __name__ == "__main__":
    main()
