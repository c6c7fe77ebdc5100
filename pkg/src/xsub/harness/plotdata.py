"""Group sweep CSV rows into per-(K, mode) attack-SR series."""

from __future__ import annotations

import csv
import io
import statistics
from collections import defaultdict
from pathlib import Path

from ..errors import FileError, FormatError
from .experiment import CSV_HEADER

SERIES_HEADER = ["scenario", "alpha", "beta", "n_seeds", "attack_sr_mean", "attack_sr_std",
                 "detection_rate_mean", "detection_rate_std"]


def read_metrics_csv(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileError(f"missing CSV {path}")
    text = path.read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    if rows[0] != CSV_HEADER:
        raise FormatError(f"{path}: unexpected header {rows[0]}")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(CSV_HEADER):
            raise FormatError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields")
        rec = dict(zip(CSV_HEADER, row))
        try:
            rec["alpha"] = float(rec["alpha"])
            rec["beta"] = float(rec["beta"])
            rec["k"] = int(rec["k"])
            rec["attack_sr"] = float(rec["attack_sr"])
            rec["detection_rate"] = float(rec["detection_rate"]) if rec["detection_rate"] else None
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        out.append(rec)
    if not out:
        raise FormatError(f"{path}: no data rows")
    return out


def _mean_std(values):
    if not values:
        return "", ""
    return repr(statistics.fmean(values)), repr(statistics.pstdev(values))


def emit_plot_data(csv_path, out_dir) -> list[Path]:
    """Write ``series_k<K>_<mode>.csv`` per group: mean/std over seeds per (alpha, beta)."""
    rows = read_metrics_csv(csv_path)
    groups = defaultdict(lambda: defaultdict(list))
    for r in rows:
        groups[(r["k"], r["mode"])][(r["scenario"], r["alpha"], r["beta"])].append(r)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for (k, mode), cells in sorted(groups.items()):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SERIES_HEADER)
        for (scenario, alpha, beta), recs in sorted(cells.items()):
            sr = _mean_std([r["attack_sr"] for r in recs])
            det = _mean_std([r["detection_rate"] for r in recs if r["detection_rate"] is not None])
            writer.writerow([scenario, repr(alpha), repr(beta), len(recs), *sr, *det])
        path = out_dir / f"series_k{k}_{mode}.csv"
        path.write_text(buf.getvalue(), encoding="utf-8")
        written.append(path)
    return written
