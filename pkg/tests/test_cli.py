import csv
import json
import statistics

import numpy as np
import pytest

from fixsearch import cocomask, fdm
from fixsearch.cli import map_name, read_scores_csv, run, split_name
from fixsearch.metrics import METRIC_NAMES

TINY = {
    "version": 1,
    "model": {"image_dims": [32, 64], "target_dims": [16, 16], "base_channels": 2, "feature_channels": 4,
              "epochs": 2},
    "data": {"n_train": 3, "n_test": 2, "n_valid": 2},
}


def fixation_json(path, n_per_cat=4, cats=("bottle", "cup")):
    rng = np.random.default_rng(0)
    recs = []
    for cat in cats:
        for i in range(n_per_cat):
            for s in (1, 2, 3):
                n = 4
                recs.append({"name": f"{cat[:3]}{i:03d}.jpg", "subject": s, "task": cat,
                             "X": rng.uniform(0, 1680, n).round(1).tolist(),
                             "Y": rng.uniform(0, 1050, n).round(1).tolist(),
                             "T": [200] * n, "correct": 1, "split": "valid" if i == 0 else "train"})
    path.write_text(json.dumps(recs))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    fx = fixation_json(d / "fix.json")
    assert run(["ingest", "--fixations", str(fx), "--test-per-category", "2", "--out", str(d / "m.ndjson"),
                "--seed", "3"]) == 0
    assert run(["fdm", "--manifest", str(d / "m.ndjson"), "--sigma", "5", "--out", str(d / "gt")]) == 0
    # a blurrier prediction of the same fixations stands in for a model
    assert run(["fdm", "--manifest", str(d / "m.ndjson"), "--sigma", "20", "--out", str(d / "pred")]) == 0
    return d


def test_missing_required_flag_is_named(tmp_path, capsys):
    assert run(["eval-saliency", "--pred", str(tmp_path), "--out", str(tmp_path / "s.csv")]) == 1
    assert "--gt" in capsys.readouterr().err


def test_unknown_subcommand_and_flag(tmp_path, capsys):
    assert run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run(["report", "--scores", "x.csv", "--out", str(tmp_path), "--bogus"]) == 1


def test_io_error_exit_two(tmp_path):
    assert run(["ingest", "--fixations", str(tmp_path / "nope.json"), "--out", str(tmp_path / "m")]) == 2
    assert run(["eval-saliency", "--pred", str(tmp_path / "a"), "--gt", str(tmp_path / "b"),
                "--out", str(tmp_path / "s.csv")]) == 2


def test_validation_error_exit_one(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('[{"name": "a.jpg"}]')
    assert run(["ingest", "--fixations", str(bad), "--out", str(tmp_path / "m")]) == 1
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 9}))
    assert run(["train-toy", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 1


def test_help_and_version(capsys):
    assert run(["--version"]) == 0
    assert "fixsearch" in capsys.readouterr().out
    assert run(["eval-seg", "--help"]) == 0


def test_name_round_trip():
    n = map_name("dir/000123.jpg", "stop sign")
    assert n == "000123__stop_sign"
    assert split_name(n) == ("000123", "stop sign")


def test_fdm_outputs_and_manifest(pipeline):
    maps = sorted(p.name for p in (pipeline / "gt").glob("*.fdm") if not p.name.endswith(".fix.fdm"))
    assert len(maps) == 8
    for name in maps:
        m = fdm.read_map(pipeline / "gt" / name)
        assert abs(m.values.sum() - 1.0) < 1e-9 and m.dims == (512, 320)
    man = json.loads((pipeline / "gt" / "run.json").read_text())
    assert man["command"] == "fdm" and man["config"]["fdm"]["sigma"] == 5.0
    assert len(man["outputs"]) == 16
    assert str(pipeline / "m.ndjson") in man["inputs"]


def test_ingest_manifest_lines(pipeline):
    lines = (pipeline / "m.ndjson").read_text().splitlines()
    assert len(lines) == 24
    rec = json.loads(lines[0])
    assert {"image_id", "category", "subject", "fixations", "correct", "augmented"} <= set(rec)
    assert json.loads((pipeline / "m.ndjson.run.json").read_text())["command"] == "ingest"


def test_eval_saliency_rerun_is_byte_identical(pipeline, tmp_path):
    outs = []
    for k, jobs in enumerate(("1", "2")):
        out = tmp_path / f"s{k}.csv"
        assert run(["eval-saliency", "--pred", str(pipeline / "pred"), "--gt", str(pipeline / "gt"),
                    "--out", str(out), "--seed", "7", "--jobs", jobs]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    rows = read_scores_csv(tmp_path / "s0.csv")
    assert len(rows) == 8
    assert all(np.isfinite(v[k]) for _, _, v in rows for k in METRIC_NAMES)


def test_eval_saliency_missing_prediction(pipeline, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run(["eval-saliency", "--pred", str(empty), "--gt", str(pipeline / "gt"),
                "--out", str(tmp_path / "s.csv")]) == 1


def write_scores(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "category"] + list(METRIC_NAMES))
        for r in rows:
            w.writerow(r)


def read_aggregate(path):
    with open(path, newline="") as fh:
        return {r["category"]: r for r in csv.DictReader(fh)}


def test_report_single_row_equals_row(tmp_path):
    vals = [0.5 + 0.1 * i for i in range(len(METRIC_NAMES))]
    write_scores(tmp_path / "s.csv", [["a", "cup"] + vals])
    assert run(["report", "--scores", str(tmp_path / "s.csv"), "--out", str(tmp_path / "r")]) == 0
    agg = read_aggregate(tmp_path / "r" / "aggregate.csv")
    for k, v in zip(METRIC_NAMES, vals):
        assert float(agg["ALL"][f"{k}_mean"]) == v
        assert float(agg["cup"][f"{k}_mean"]) == v
    assert (tmp_path / "r" / "metrics.png").read_bytes()[:4] == b"\x89PNG"


def test_report_two_files_match_direct_statistics(tmp_path):
    rng = np.random.default_rng(1)
    a = rng.random((5, len(METRIC_NAMES)))
    b = rng.random((5, len(METRIC_NAMES)))
    write_scores(tmp_path / "a.csv", [[f"a{i}", "cup"] + list(r) for i, r in enumerate(a)])
    write_scores(tmp_path / "b.csv", [[f"b{i}", "bowl"] + list(r) for i, r in enumerate(b)])
    assert run(["report", "--scores", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"),
                "--out", str(tmp_path / "r")]) == 0
    agg = read_aggregate(tmp_path / "r" / "aggregate.csv")
    both = np.vstack([a, b])
    for j, k in enumerate(METRIC_NAMES):
        col = [float(x) for x in both[:, j]]
        assert float(agg["ALL"][f"{k}_mean"]) == pytest.approx(statistics.fmean(col), abs=1e-12)
        assert float(agg["ALL"][f"{k}_sd"]) == pytest.approx(statistics.stdev(col), abs=1e-12)
        assert float(agg["cup"][f"{k}_mean"]) == pytest.approx(statistics.fmean(a[:, j]), abs=1e-12)


def test_report_rejects_bad_csv(tmp_path, capsys):
    (tmp_path / "e.csv").write_text("")
    assert run(["report", "--scores", str(tmp_path / "e.csv"), "--out", str(tmp_path / "r")]) == 1
    write_scores(tmp_path / "m.csv", [["a", "cup"] + ["0.1"] * len(METRIC_NAMES), ["b", "cup", "0.2"]])
    assert run(["report", "--scores", str(tmp_path / "m.csv"), "--out", str(tmp_path / "r")]) == 1
    assert "row 3" in capsys.readouterr().err
    write_scores(tmp_path / "n.csv", [["a", "cup"] + ["oops"] * len(METRIC_NAMES)])
    assert run(["report", "--scores", str(tmp_path / "n.csv"), "--out", str(tmp_path / "r")]) == 1


def test_report_heatmaps(pipeline, tmp_path):
    write_scores(tmp_path / "s.csv", [["a", "cup"] + [0.0] * len(METRIC_NAMES)])
    assert run(["report", "--scores", str(tmp_path / "s.csv"), "--pred", str(pipeline / "pred"),
                "--gt", str(pipeline / "gt"), "--max-images", "2", "--out", str(tmp_path / "r")]) == 0
    assert len(list((tmp_path / "r" / "heatmaps").glob("*.png"))) == 4


def seg_files(tmp_path):
    def box(y0, x0, y1, x1):
        m = np.zeros((8, 8), bool)
        m[y0:y1, x0:x1] = True
        return m

    gt = {
        "images": [{"id": 1, "file_name": "a.jpg", "height": 8, "width": 8}],
        "categories": [{"id": 1, "name": "target"}, {"id": 2, "name": "distractor"},
                       {"id": 3, "name": "low-distractor"}, {"id": 4, "name": "high-distractor"}],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1, "segmentation": cocomask.rle_encode(box(0, 0, 3, 3))},
            {"id": 2, "image_id": 1, "category_id": 2, "segmentation": cocomask.rle_encode(box(5, 5, 8, 8)),
             "distraction_level": 4},
        ],
    }
    pred = [
        {"image_id": 1, "category_id": 1, "score": 0.9, "segmentation": cocomask.rle_encode(box(0, 0, 3, 3))},
        {"image_id": 1, "category_id": 2, "score": 0.8, "segmentation": cocomask.rle_encode(box(5, 5, 8, 8))},
    ]
    (tmp_path / "gt.json").write_text(json.dumps(gt))
    (tmp_path / "pred.json").write_text(json.dumps(pred))
    pred[1]["category_id"] = 4  # level 4 => high-distractor
    (tmp_path / "pred3.json").write_text(json.dumps(pred))


def test_eval_seg_perfect_prediction(tmp_path, capsys):
    seg_files(tmp_path)
    args = ["eval-seg", "--gt", str(tmp_path / "gt.json"), "--pred", str(tmp_path / "pred.json")]
    assert run(args + ["--png", "--out", str(tmp_path / "o")]) == 0
    assert "F1 1.0000" in capsys.readouterr().out
    conf = (tmp_path / "o" / "confusion.csv").read_text().splitlines()
    assert conf[1].split(",")[1:] == ["1", "0", "0", "1"]
    hist = (tmp_path / "o" / "distraction_histogram.csv").read_text().splitlines()
    assert hist[1 + 4].endswith(",1")
    for png in ("confusion.png", "distraction_histogram.png", "pr_curve.png"):
        assert (tmp_path / "o" / png).exists()
    # two-class labels are rejected in three-class mode
    assert run(args + ["--three-class", "--out", str(tmp_path / "bad")]) == 1
    assert "'distractor'" in capsys.readouterr().err
    args3 = ["eval-seg", "--gt", str(tmp_path / "gt.json"), "--pred", str(tmp_path / "pred3.json")]
    assert run(args3 + ["--three-class", "--png", "--out", str(tmp_path / "o3")]) == 0
    assert "F1 1.0000" in capsys.readouterr().out
    conf3 = (tmp_path / "o3" / "confusion.csv").read_text().splitlines()
    assert "high-distractor" in conf3[0]
    assert conf3[3].startswith("high-distractor,0,0,1,0")
    assert run(args + ["--out", str(tmp_path / "o2")]) == 0
    assert (tmp_path / "o" / "seg_scores.csv").read_bytes() == (tmp_path / "o2" / "seg_scores.csv").read_bytes()


def test_eval_seg_bad_dims(tmp_path):
    seg_files(tmp_path)
    assert run(["eval-seg", "--gt", str(tmp_path / "gt.json"), "--pred", str(tmp_path / "pred.json"),
                "--dims", "8by8", "--out", str(tmp_path / "o")]) == 1


def test_train_predict_tiny(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    for k in ("a", "b"):
        assert run(["train-toy", "--config", str(cfg), "--out", str(tmp_path / k)]) == 0
    assert "train loss" in capsys.readouterr().out
    for f in ("checkpoint.fdmp", "loss.csv", "train_report.json", "config.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rep = json.loads((tmp_path / "a" / "train_report.json").read_text())
    assert len(rep["train_loss"]) == 2 and len(rep["valid_loss"]) == 2
    assert run(["predict", "--config", str(cfg), "--checkpoint", str(tmp_path / "a" / "checkpoint.fdmp"),
                "--out", str(tmp_path / "p")]) == 0
    assert "/2 held-out" in capsys.readouterr().out
    preds = sorted((tmp_path / "p" / "pred").glob("*.fdm"))
    assert len(preds) == 2
    assert run(["eval-saliency", "--pred", str(tmp_path / "p" / "pred"), "--gt", str(tmp_path / "p" / "gt"),
                "--out", str(tmp_path / "s.csv")]) == 0
    man = json.loads((tmp_path / "p" / "run.json").read_text())
    assert str(tmp_path / "a" / "checkpoint.fdmp") in man["inputs"]


def test_predict_rejects_mismatched_checkpoint(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    assert run(["train-toy", "--config", str(cfg), "--epochs", "0", "--out", str(tmp_path / "a")]) == 0
    other = dict(TINY, model=dict(TINY["model"], base_channels=3))
    cfg2 = tmp_path / "cfg2.json"
    cfg2.write_text(json.dumps(other))
    assert run(["predict", "--config", str(cfg2), "--checkpoint", str(tmp_path / "a" / "checkpoint.fdmp"),
                "--out", str(tmp_path / "p")]) == 1
