from __future__ import annotations

import csv
import io
import json

from distprobe.probes import CurvePoint, ReportBundle
from distprobe.reports import CURVE_COLUMNS, bundle_json, curve_csv, load_report, strip_wall_clock, write_bundle


def point(abscissa, acc, trial=0, **metrics):
    report = {"accuracy": acc, "cross_entropy_nats": 0.5, "wall_clock_seconds": 1.25,
              "divergence": {"tv_lower": 2 * acc - 1, "jsd_estimate": 0.1}}
    return CurvePoint(abscissa, trial, 7, 123, report, metrics)


def bundle():
    b = ReportBundle("scale_curve", {"kind": "scale_curve", "params": {"ladder": (50, 200)}})
    b.points = [point(50, 0.6), point(200, 0.75, fake=float("nan"))]
    b.summarize()
    return b


def test_json_is_sorted_and_finite():
    text = bundle_json(bundle())
    data = json.loads(text)
    assert list(data) == sorted(data)
    assert data["points"][1]["metrics"]["fake"] is None
    assert data["spec"]["params"]["ladder"] == [50, 200]
    assert "NaN" not in text


def test_wall_clock_stripping():
    b = bundle()
    assert "wall_clock_seconds" in bundle_json(b)
    assert "wall_clock_seconds" not in bundle_json(b, wall_clock=False)
    assert strip_wall_clock({"a": [{"wall_clock_seconds": 3, "b": 1}]}) == {"a": [{"b": 1}]}


def test_curve_csv_columns():
    rows = list(csv.reader(io.StringIO(curve_csv(bundle().points))))
    assert rows[0] == CURVE_COLUMNS + ["trial", "fake"]
    assert rows[1] == ["50", "7", "0.6", "0.5", repr(2 * 0.6 - 1), "0.1", "0", ""]
    assert rows[2][0] == "200" and rows[2][-1] == ""


def test_curve_csv_without_divergence():
    p = CurvePoint("band:8-12", 1, 0, 1, {"accuracy": 0.9, "cross_entropy_nats": 0.3, "divergence": None})
    rows = list(csv.reader(io.StringIO(curve_csv([p]))))
    assert rows[1] == ["band:8-12", "0", "0.9", "0.3", "", "", "1"]


def test_write_bundle_splits_modes(tmp_path):
    b = ReportBundle("mix_eval", {})
    b.points = [point(0.0, 0.8, mode="baseline"), point(0.5, 0.7, mode="replace"), point(0.5, 0.75, mode="augment")]
    paths = write_bundle(b, tmp_path / "out")
    assert [p.name for p in paths] == ["report.json", "curve.csv", "curve_augment.csv", "curve_baseline.csv",
                                      "curve_replace.csv"]
    assert load_report(paths[0])["kind"] == "mix_eval"
    assert len((tmp_path / "out" / "curve_replace.csv").read_text().splitlines()) == 2


def test_summary_statistics():
    b = ReportBundle("crop_sweep", {})
    b.points = [point(8, a, trial=i, frechet=1.0 + i) for i, a in enumerate([0.6, 0.7, 0.8, 0.9])]
    b.summarize()
    row, = b.summary
    assert row["n"] == 4
    assert abs(row["accuracy_mean"] - 0.75) < 1e-12
    assert abs(row["accuracy_sd"] - 0.12909944487358055) < 1e-12
    assert row["frechet_mean"] == 2.5
    assert b.accuracies(8) == [0.6, 0.7, 0.8, 0.9]
