"""JSON and CSV emission for report bundles."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

WALL_CLOCK_KEYS = frozenset({"wall_clock_seconds"})
CURVE_COLUMNS = ["abscissa", "seed", "accuracy", "cross_entropy_nats", "tv_lower", "jsd_estimate"]


def _plain(obj):
    """Recursively convert numpy values, tuples and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def strip_wall_clock(obj):
    if isinstance(obj, dict):
        return {k: strip_wall_clock(v) for k, v in obj.items() if k not in WALL_CLOCK_KEYS}
    if isinstance(obj, list):
        return [strip_wall_clock(v) for v in obj]
    return obj


def bundle_json(bundle, wall_clock: bool = True) -> str:
    data = _plain(bundle.to_dict())
    if not wall_clock:
        data = strip_wall_clock(data)
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _cell(v) -> str:
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return str(v)


def curve_csv(points) -> str:
    """One row per curve point; extra metric columns are sorted by name."""
    extras = sorted({k for p in points for k in p.metrics})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS + ["trial"] + extras)
    for p in points:
        div = p.report.get("divergence") or {}
        w.writerow([_cell(p.abscissa), p.seed, _cell(p.report.get("accuracy")),
                    _cell(p.report.get("cross_entropy_nats")), _cell(div.get("tv_lower")),
                    _cell(div.get("jsd_estimate")), p.trial] + [_cell(p.metrics.get(k)) for k in extras])
    return buf.getvalue()


def write_bundle(bundle, out_dir) -> list[Path]:
    """Write ``report.json`` and the curve CSVs; returns the written paths.

    Points carrying a ``mode`` metric get one CSV per mode besides the combined
    ``curve.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json", out / "curve.csv"]
    written[0].write_text(bundle_json(bundle), encoding="utf-8")
    written[1].write_text(curve_csv(bundle.points), encoding="utf-8")
    modes = sorted({p.metrics["mode"] for p in bundle.points if "mode" in p.metrics})
    if len(modes) > 1:
        for mode in modes:
            path = out / f"curve_{mode}.csv"
            path.write_text(curve_csv([p for p in bundle.points if p.metrics.get("mode") == mode]),
                            encoding="utf-8")
            written.append(path)
    return written


def load_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
