"""Decoder and stream ablations on the synthetic task.

Trains the full model, the model without decoder convolutions (1x1 head then
bilinear x8) and the one-stream model (no target input) under one seed,
then reports held-out KL, argmax hit rate and the saliency metrics.

    python scripts/ablation.py [--epochs 30] [--out runs/ablation]
"""

import argparse
import csv
import dataclasses
from pathlib import Path

import numpy as np

from fixsearch import fdm, metrics
from fixsearch.cli import _datasets
from fixsearch.config import load_config
from fixsearch.model import build_model
from fixsearch.synthetic import argmax_in_target
from fixsearch.train import evaluate_loss, train

VARIANTS = {
    "two-stream": {},
    "no-decoder": {"decoder_convs": False},
    "one-stream": {"two_stream": False},
}


def score(model, samples, two_stream):
    rows = []
    for s in samples:
        pred = model.predict(s.image, s.target_patch(0) if two_stream else None)
        binary = fdm.build_binary_map(s.fixations, (s.gt.width, s.gt.height))
        rows.append({
            "hit": float(argmax_in_target(pred.values, s)),
            "kld": metrics.kld(pred, s.gt),
            "cc": metrics.cc(pred, s.gt),
            "sim": metrics.sim(pred, s.gt),
            "nss": metrics.nss(pred, binary),
            "auc_judd": metrics.auc_judd(pred, binary),
        })
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()
    base = load_config()
    if args.epochs is not None:
        base.model.epochs = args.epochs
    tr, va, te = _datasets(base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    for name in args.variants:
        mcfg = dataclasses.replace(base.model, **VARIANTS[name])
        model = build_model(mcfg)
        rep = train(model, tr, mcfg, valid=va)
        model.load_state(rep.best_state)
        s = score(model, te, mcfg.two_stream)
        s.update(variant=name, params=model.parameter_count(), test_kl=evaluate_loss(model, te))
        table.append(s)
        print(f"{name:11s} params {s['params']:7d}  test KL {s['test_kl']:.3f}  hits {s['hit']:.2f}  "
              f"CC {s['cc']:.3f}  NSS {s['nss']:.3f}  AUC-J {s['auc_judd']:.3f}", flush=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        keys = ["variant", "params", "test_kl", "hit", "kld", "cc", "sim", "nss", "auc_judd"]
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for s in table:
            w.writerow({k: s[k] for k in keys})


if __name__ == "__main__":
    main()
