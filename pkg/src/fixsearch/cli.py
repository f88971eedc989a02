"""fixsearch command line: ingest, fdm, eval-saliency, train-toy, predict, eval-seg, report.

Exit codes: 0 success, 1 validation / usage error, 2 I/O error.
Log level comes from FIXSEARCH_LOG (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fixsearch import __version__
from fixsearch._io import atomic_write_bytes, atomic_write_text, sha256_file
from fixsearch.errors import FixSearchError, UsageError

log = logging.getLogger("fixsearch")

FDM_SUFFIX = ".fdm"
FIX_SUFFIX = ".fix.fdm"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    version: str = __version__

    def add_input(self, path):
        p = Path(path)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for q in files:
            self.inputs[str(q)] = sha256_file(q)

    def write_bytes(self, path, data):
        atomic_write_bytes(path, data)
        self.outputs.append(str(path))

    def write_text(self, path, text):
        self.write_bytes(path, text.encode("utf-8"))

    def to_json(self):
        d = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_time": self.wall_time,
            "version": self.version,
        }
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def _manifest_path(out):
    out = Path(out)
    if out.suffix:
        return out.with_name(out.name + ".run.json")
    return out / "run.json"


def _finish(manifest, out, start):
    manifest.wall_time = round(time.perf_counter() - start, 3)
    atomic_write_text(_manifest_path(out), manifest.to_json())


def _map(fn, items, jobs):
    """Ordered map; fans out to a process pool when jobs > 1."""
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _config(args):
    from fixsearch.config import load_config

    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "sigma", None) is not None:
        cfg.fdm.sigma = args.sigma
    if getattr(args, "epsilon", None) is not None:
        cfg.metrics.epsilon = args.epsilon
    if getattr(args, "auc_step", None) is not None:
        cfg.metrics.auc_step = args.auc_step
    if getattr(args, "seed", None) is not None:
        cfg.metrics.seed = args.seed
        cfg.data.seed = args.seed
        cfg.model.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.model.epochs = args.epochs
    cfg.model.validate()
    return cfg


def map_name(image_id, category):
    stem = Path(str(image_id)).stem
    return f"{stem}__{str(category).replace(' ', '_')}"


def split_name(name):
    stem, _, cat = name.partition("__")
    return stem, cat.replace("_", " ")


# -- ingest --------------------------------------------------------------

def cmd_ingest(args):
    from fixsearch import ingest

    cfg = _config(args)
    m = RunManifest("ingest", cfg.to_dict(), args.seed)
    m.add_input(args.fixations)
    with open(args.fixations, "rb") as fh:
        trials = ingest.parse_fixation_dataset(fh.read())
    kept = ingest.filter_trials(trials)
    kept = [ingest.rescale_trial(t, cfg.fdm.dims) for t in kept]
    pairs = ingest.group_pairs(kept)
    split = ingest.build_split(pairs, mode=args.split_mode, seed=args.seed, test_per_category=args.test_per_category)
    if args.augment:
        split = ingest.augment_split(split, cfg.fdm.dims[0])
    m.write_text(args.out, ingest.write_manifest(split))
    log.info("ingest: %d trials -> %d pairs (%d/%d/%d)", len(trials), len(pairs),
             len(split.train), len(split.valid), len(split.test))
    return m


# -- fdm -----------------------------------------------------------------

def _fdm_job(job):
    from fixsearch.fdm import build_binary_map, build_density_map, serialize_map

    name, points, dims, sigma = job
    return name, serialize_map(build_density_map(points, dims, sigma)), serialize_map(build_binary_map(points, dims))


def cmd_fdm(args):
    from fixsearch import ingest

    cfg = _config(args)
    m = RunManifest("fdm", cfg.to_dict(), args.seed)
    m.add_input(args.manifest)
    with open(args.manifest, encoding="utf-8") as fh:
        trials = ingest.read_manifest(fh.read())
    pairs = [p for p in ingest.group_pairs(trials) if not p.augmented]
    if args.split:
        pairs = [p for p in pairs if p.split == args.split]
    jobs = []
    for p in pairs:
        dims = tuple(p.trials[0].image_dims)
        jobs.append((map_name(p.image_id, p.category), p.points(), dims, cfg.fdm.sigma))
    out = Path(args.out)
    for name, dens, binary in _map(_fdm_job, jobs, args.jobs):
        m.write_bytes(out / (name + FDM_SUFFIX), dens)
        m.write_bytes(out / (name + FIX_SUFFIX), binary)
        if args.png:
            from fixsearch.fdm import deserialize_map, render_heatmap

            m.write_bytes(out / (name + ".png"), render_heatmap(deserialize_map(dens)))
    return m


# -- eval-saliency -------------------------------------------------------

def _load_dir(path):
    from fixsearch.fdm import read_map

    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    dens = {}
    fix = {}
    for p in sorted(d.iterdir()):
        if p.name.endswith(FIX_SUFFIX):
            fix[p.name[: -len(FIX_SUFFIX)]] = read_map(p)
        elif p.name.endswith(FDM_SUFFIX):
            dens[p.name[: -len(FDM_SUFFIX)]] = read_map(p)
    return dens, fix


def _score_job(job):
    from fixsearch.metrics import evaluate_all

    name, pred, gt, binary, baseline, other, mcfg = job
    return name, evaluate_all(pred, gt, binary, baseline, other, mcfg)


def cmd_eval_saliency(args):
    from fixsearch.fdm import BinaryFixationMap, build_baseline_map
    from fixsearch.metrics import scores_csv

    cfg = _config(args)
    m = RunManifest("eval-saliency", cfg.to_dict(), args.seed)
    m.add_input(args.pred)
    m.add_input(args.gt)
    preds, _ = _load_dir(args.pred)
    gts, fixes = _load_dir(args.gt)
    names = sorted(gts)
    if not names:
        raise FixSearchError(f"no ground-truth maps in {args.gt}")
    missing = [n for n in names if n not in preds]
    if missing:
        raise FixSearchError(f"no prediction for {missing[0]} (and {len(missing) - 1} more)")
    gt_list = [gts[n] for n in names]
    jobs = []
    for i, n in enumerate(names):
        if n not in fixes:
            raise FixSearchError(f"no binary fixation map for {n}")
        same = [j for j, g in enumerate(gt_list) if g.dims == gt_list[i].dims]
        baseline = other = None
        if len(same) > 1:
            baseline = build_baseline_map([gt_list[j] for j in same], same.index(i))
            others = [fixes[names[j]].bits for j in same if j != i]
            other = BinaryFixationMap(np.logical_or.reduce(others))
        jobs.append((n, preds[n], gts[n], fixes[n], baseline, other, cfg.metrics))
    rows = []
    for n, s in _map(_score_job, jobs, args.jobs):
        for metric, why in s.failures.items():
            log.warning("%s: %s failed: %s", n, metric, why)
        stem, cat = split_name(n)
        rows.append((stem, cat, s))
    m.write_text(args.out, scores_csv(rows))
    return m


# -- train-toy / predict -------------------------------------------------

def _datasets(cfg):
    from fixsearch.synthetic import generate_synthetic

    dims = (cfg.model.image_dims, cfg.model.target_dims)
    data = generate_synthetic(cfg.data.seed, cfg.data.n_train + cfg.data.n_test, *dims, sigma=cfg.data.sigma)
    # validation comes from a separate stream so the train/test samples do not depend on n_valid
    valid = generate_synthetic((cfg.data.seed, 1), cfg.data.n_valid, *dims, sigma=cfg.data.sigma)
    return data[: cfg.data.n_train], valid, data[cfg.data.n_train:]


def cmd_train_toy(args):
    from fixsearch import nn
    from fixsearch.model import build_model
    from fixsearch.train import train

    cfg = _config(args)
    m = RunManifest("train-toy", cfg.to_dict(), cfg.model.seed)
    if args.config:
        m.add_input(args.config)
    tr, va, _ = _datasets(cfg)
    model = build_model(cfg.model)
    out = Path(args.out)
    report = train(model, tr, cfg.model, valid=va)
    m.write_bytes(out / "checkpoint.fdmp", nn.dump_params(report.best_state))
    m.write_text(out / "config.json", cfg.to_json())
    rep = report.to_dict()
    rep["checkpoint"] = "checkpoint.fdmp"  # relative to the report, so reruns elsewhere stay byte-identical
    rep.pop("wall_time")
    m.write_text(out / "train_report.json", json.dumps(rep, indent=2, sort_keys=True) + "\n")
    m.write_text(out / "loss.csv", _loss_csv(report))
    if report.train_loss:
        first, last = report.train_loss[0], report.train_loss[-1]
        print(f"train loss {first:.4f} -> {last:.4f} ({last / first:.1%}); best epoch {report.best_epoch + 1}")
    else:
        print("no epochs run; checkpoint holds the initial parameters")
    return m


def _loss_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "train_kl", "valid_kl"))
    for i, t in enumerate(report.train_loss):
        v = report.valid_loss[i] if i < len(report.valid_loss) else float("nan")
        w.writerow((i + 1, repr(t), repr(v)))
    return buf.getvalue()


def cmd_predict(args):
    from fixsearch import nn
    from fixsearch.fdm import build_binary_map, render_heatmap, serialize_map
    from fixsearch.model import build_model
    from fixsearch.synthetic import argmax_in_target

    cfg = _config(args)
    m = RunManifest("predict", cfg.to_dict(), cfg.model.seed)
    m.add_input(args.checkpoint)
    if args.config:
        m.add_input(args.config)
    with open(args.checkpoint, "rb") as fh:
        state = nn.load_params(fh.read())
    model = build_model(cfg.model)
    model.load_state(state)
    _, _, te = _datasets(cfg)
    out = Path(args.out)
    hits = 0
    for i, s in enumerate(te):
        pred = model.predict(s.image, s.target_patch(0) if cfg.model.two_stream else None)
        hits += argmax_in_target(pred.values, s)
        name = map_name(f"syn{i:04d}", f"cat{s.category}")
        m.write_bytes(out / "pred" / (name + FDM_SUFFIX), serialize_map(pred))
        m.write_bytes(out / "gt" / (name + FDM_SUFFIX), serialize_map(s.gt))
        binary = build_binary_map(s.fixations, (s.gt.width, s.gt.height))
        m.write_bytes(out / "gt" / (name + FIX_SUFFIX), serialize_map(binary))
        if args.png:
            under = np.transpose(s.image, (1, 2, 0))
            m.write_bytes(out / "png" / (name + ".pred.png"), render_heatmap(pred, under))
            m.write_bytes(out / "png" / (name + ".gt.png"), render_heatmap(s.gt, under))
    print(f"argmax inside target on {hits}/{len(te)} held-out samples")
    return m


# -- eval-seg ------------------------------------------------------------

def cmd_eval_seg(args):
    from fixsearch import segeval
    from fixsearch.cocomask import load_json

    cfg = _config(args)
    m = RunManifest("eval-seg", cfg.to_dict(), args.seed)
    m.add_input(args.gt)
    m.add_input(args.pred)
    fixations = None
    if args.fixations:
        from fixsearch import ingest

        m.add_input(args.fixations)
        with open(args.fixations, encoding="utf-8") as fh:
            trials = ingest.read_manifest(fh.read())
        fixations = {}
        for t in trials:
            if not t.augmented:
                fixations.setdefault(t.image_id, []).append(t)
    dims = tuple(args.dims) if args.dims else None
    gt_json = load_json(args.gt)
    gts = segeval.load_annotations(gt_json, dims, fixations, args.fixation_radius)
    preds = segeval.load_annotations(args.pred, dims, predictions=True, images=gt_json)
    labels = segeval.TWO_CLASS
    if args.three_class:
        gts = segeval.to_three_class(gts)
        labels = segeval.THREE_CLASS
    segeval.check_labels(preds, labels)
    matches = segeval.match_dataset(preds, gts, args.iou)
    scores = segeval.map_mar_f1(matches, labels)
    cm = segeval.confusion_matrix(matches, labels)
    out = Path(args.out)
    m.write_text(out / "seg_scores.csv", segeval.seg_scores_csv(scores))
    m.write_text(out / "confusion.csv", segeval.confusion_csv(cm))
    hist = segeval.distraction_histogram(gts)
    m.write_text(out / "distraction_histogram.csv", segeval.histogram_csv(hist))
    if args.png:
        m.write_bytes(out / "confusion.png", segeval.render_confusion_png(cm))
        m.write_bytes(out / "distraction_histogram.png", segeval.render_histogram_png(hist))
        present = segeval.gt_labels(matches)
        curves = [segeval.pr_curve(matches, lab) for lab in labels if lab in present]
        m.write_bytes(out / "pr_curve.png", segeval.render_pr_png(curves))
    print(f"MAP50 {scores.map50:.4f}  MAR50 {scores.mar50:.4f}  F1 {scores.f1:.4f}")
    return m


# -- report --------------------------------------------------------------

def read_scores_csv(path):
    """Rows of a scores CSV as (image_id, category, {metric: value}); ALL rows are skipped."""
    from fixsearch.metrics import METRIC_NAMES

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FixSearchError(f"{path}: empty CSV")
        missing = [k for k in ("image_id", "category") + METRIC_NAMES if k not in header]
        if missing:
            raise FixSearchError(f"{path}: row 1: missing columns {missing}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise FixSearchError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(rec)}")
            r = dict(zip(header, rec))
            if r["image_id"] == "ALL":
                continue
            try:
                vals = {k: float(r[k]) for k in METRIC_NAMES}
            except ValueError as exc:
                raise FixSearchError(f"{path}: row {lineno}: {exc}") from exc
            rows.append((r["image_id"], r["category"], vals))
    if not rows:
        raise FixSearchError(f"{path}: no score rows")
    return rows


def aggregate_table(rows):
    """CSV of mean and sd per metric, per category and over all rows."""
    from fixsearch.metrics import METRIC_NAMES, aggregate

    groups = {}
    for _, cat, vals in rows:
        groups.setdefault(cat, []).append(vals)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "n"] + [f"{k}_{s}" for k in METRIC_NAMES for s in ("mean", "sd")])
    for cat in sorted(groups) + ["ALL"]:
        members = groups[cat] if cat != "ALL" else [v for _, _, v in rows]
        agg = aggregate(members)
        w.writerow([cat, len(members)] + [repr(x) for k in METRIC_NAMES for x in agg[k]])
    return buf.getvalue()


def _bar_png(rows):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from fixsearch.metrics import METRIC_NAMES, aggregate

    agg = aggregate([v for _, _, v in rows])
    fig, ax = plt.subplots(figsize=(6, 3.2))
    x = np.arange(len(METRIC_NAMES))
    ax.bar(x, [agg[k][0] for k in METRIC_NAMES], yerr=[agg[k][1] for k in METRIC_NAMES], color="#2e86c1", capsize=3)
    ax.set_xticks(x, METRIC_NAMES, rotation=30, fontsize=8)
    ax.set_title(f"mean over {len(rows)} images")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()


def cmd_report(args):
    cfg = _config(args)
    m = RunManifest("report", cfg.to_dict(), args.seed)
    rows = []
    for p in args.scores:
        m.add_input(p)
        rows += read_scores_csv(p)
    out = Path(args.out)
    m.write_text(out / "aggregate.csv", aggregate_table(rows))
    m.write_bytes(out / "metrics.png", _bar_png(rows))
    if args.pred and args.gt:
        from fixsearch.fdm import render_heatmap

        preds, _ = _load_dir(args.pred)
        gts, _ = _load_dir(args.gt)
        for name in sorted(set(preds) & set(gts))[: args.max_images]:
            m.write_bytes(out / "heatmaps" / f"{name}.pred.png", render_heatmap(preds[name]))
            m.write_bytes(out / "heatmaps" / f"{name}.gt.png", render_heatmap(gts[name]))
    return m


# -- parser --------------------------------------------------------------

def _dims(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    return (w, h)


def build_parser():
    p = _Parser(prog="fixsearch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fixsearch {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--config", default=None, help="versioned JSON config; flags override it")

    sp = sub.add_parser("ingest", help="parse, filter, rescale and split fixation records")
    sp.add_argument("--fixations", required=True)
    sp.add_argument("--split-mode", choices=("paper", "random"), default="paper")
    sp.add_argument("--test-per-category", type=int, default=18)
    sp.add_argument("--augment", action="store_true", help="add mirrored copies of the training pairs")
    common(sp, "NDJSON manifest path")
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("fdm", help="build density and binary fixation maps")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split", choices=("train", "valid", "test"), default=None)
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--png", action="store_true")
    common(sp, "output directory")
    sp.set_defaults(fn=cmd_fdm)

    sp = sub.add_parser("eval-saliency", help="score predicted maps with the eight metrics")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.add_argument("--auc-step", type=float, default=None)
    common(sp, "scores CSV path")
    sp.set_defaults(fn=cmd_eval_saliency)

    sp = sub.add_parser("train-toy", help="train the toy two-stream model on synthetic scenes")
    sp.add_argument("--epochs", type=int, default=None)
    common(sp, "output directory")
    sp.set_defaults(fn=cmd_train_toy, seed=None)

    sp = sub.add_parser("predict", help="predict held-out synthetic scenes from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--png", action="store_true")
    common(sp, "output directory")
    sp.set_defaults(fn=cmd_predict, seed=None)

    sp = sub.add_parser("eval-seg", help="match segmentations and score MAP / MAR / F1")
    sp.add_argument("--gt", required=True, help="COCO-style ground-truth JSON")
    sp.add_argument("--pred", required=True, help="COCO results JSON")
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--three-class", action="store_true")
    sp.add_argument("--fixation-radius", type=float, default=0.0)
    sp.add_argument("--fixations", default=None, help="NDJSON manifest for distraction levels")
    sp.add_argument("--dims", type=_dims, default=None, help="working resolution WIDTHxHEIGHT")
    sp.add_argument("--png", action="store_true")
    common(sp, "output directory")
    sp.set_defaults(fn=cmd_eval_seg)

    sp = sub.add_parser("report", help="aggregate score CSVs into tables and plots")
    sp.add_argument("--scores", nargs="+", required=True)
    sp.add_argument("--pred", default=None)
    sp.add_argument("--gt", default=None)
    sp.add_argument("--max-images", type=int, default=8)
    common(sp, "output directory")
    sp.set_defaults(fn=cmd_report)
    return p


def _setup_logging():
    level = os.environ.get("FIXSEARCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def run(argv=None):
    _setup_logging()
    start = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        manifest = args.fn(args)
        _finish(manifest, args.out, start)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (FixSearchError, ValueError) as exc:
        print(f"fixsearch: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fixsearch: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
