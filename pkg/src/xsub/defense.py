"""Simplified Beatrix-style poisoned-sample detector.

Features are the first-order Gram entries (pairwise products, upper
triangle) of a sample's penultimate activations. Each class keeps a
per-entry median and MAD over clean calibration data; a probe's score is
its largest MAD-normalised deviation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import FileError, FormatError, InvalidArgumentError
from .model import Classifier, predict_labels

MAD_FLOOR = 1e-9
PERCENTILE = 99.0
MIN_CALIBRATION = 100
REFERENCE_FORMAT = "xsub-clean-reference"
REFERENCE_VERSION = 1


def gram_entries(activations) -> np.ndarray:
    """Upper-triangular entries of h h^T for each row h, shape (n, m(m+1)/2)."""
    h = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    iu, ju = np.triu_indices(h.shape[1])
    return h[:, iu] * h[:, ju]


def nearest_rank_percentile(values, pct: float = PERCENTILE) -> float:
    values = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if values.size == 0:
        raise InvalidArgumentError("percentile of an empty set")
    rank = max(1, math.ceil(pct / 100.0 * values.size))
    return float(values[rank - 1])


def deviation_scores(entries, median, mad) -> np.ndarray:
    entries = np.atleast_2d(entries)
    return np.max(np.abs(entries - median) / (mad + MAD_FLOOR), axis=1)


@dataclass(frozen=True)
class CleanReference:
    medians: dict[int, np.ndarray]
    mads: dict[int, np.ndarray]
    threshold: float
    n_calibration: int
    calibration_scores: np.ndarray

    def to_dict(self) -> dict:
        return {
            "format": REFERENCE_FORMAT,
            "version": REFERENCE_VERSION,
            "threshold": self.threshold,
            "n_calibration": self.n_calibration,
            "classes": sorted(self.medians),
            "medians": [self.medians[c].tolist() for c in sorted(self.medians)],
            "mads": [self.mads[c].tolist() for c in sorted(self.mads)],
            "calibration_scores": self.calibration_scores.tolist(),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "CleanReference":
        path = Path(path)
        if not path.exists():
            raise FileError(f"missing clean reference {path}")
        rec = json.loads(path.read_text(encoding="utf-8"))
        if rec.get("format") != REFERENCE_FORMAT or rec.get("version") != REFERENCE_VERSION:
            raise FormatError(f"{path}: unsupported reference format/version")
        classes = rec["classes"]
        return cls(
            {c: np.asarray(m) for c, m in zip(classes, rec["medians"])},
            {c: np.asarray(m) for c, m in zip(classes, rec["mads"])},
            float(rec["threshold"]),
            int(rec["n_calibration"]),
            np.asarray(rec["calibration_scores"]),
        )


def calibrate_entries(entries, labels) -> CleanReference:
    """Fit per-class medians/MADs and the 99th-percentile threshold from Gram entries."""
    entries = np.asarray(entries, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size < MIN_CALIBRATION:
        raise InvalidArgumentError(
            f"calibration needs at least {MIN_CALIBRATION} samples, got {labels.size}"
        )
    medians, mads = {}, {}
    scores = np.empty(labels.size)
    for c in np.unique(labels):
        rows = labels == c
        med = np.median(entries[rows], axis=0)
        mad = np.median(np.abs(entries[rows] - med), axis=0)
        medians[int(c)], mads[int(c)] = med, mad
        scores[rows] = deviation_scores(entries[rows], med, mad)
    return CleanReference(medians, mads, nearest_rank_percentile(scores), labels.size, scores)


def calibrate(f: Classifier, clean: Dataset) -> CleanReference:
    return calibrate_entries(gram_entries(f.penultimate(clean.x)), clean.y)


@dataclass(frozen=True)
class DetectionResult:
    score: float
    flagged: bool
    predicted: int
    index: int | None = None


def score_entries(ref: CleanReference, entries, predicted) -> np.ndarray:
    entries = np.atleast_2d(entries)
    predicted = np.atleast_1d(predicted)
    out = np.empty(predicted.size)
    for c in np.unique(predicted):
        if int(c) not in ref.medians:
            raise InvalidArgumentError(f"class {c} has no calibrated statistics")
        rows = predicted == c
        out[rows] = deviation_scores(entries[rows], ref.medians[int(c)], ref.mads[int(c)])
    return out


def score(ref: CleanReference, f: Classifier, x, index: int | None = None) -> DetectionResult:
    """Score one probe against the statistics of its predicted class."""
    x = np.asarray(x, dtype=np.float64)
    pred = int(predict_labels(f, x)[0])
    s = float(score_entries(ref, gram_entries(f.penultimate(x)), [pred])[0])
    return DetectionResult(s, s > ref.threshold, pred, index)


def score_batch(ref: CleanReference, f: Classifier, xs) -> list[DetectionResult]:
    xs = np.asarray(xs, dtype=np.float64)
    preds = predict_labels(f, xs)
    scores = score_entries(ref, gram_entries(f.penultimate(xs)), preds)
    return [DetectionResult(float(s), bool(s > ref.threshold), int(p), i)
            for i, (s, p) in enumerate(zip(scores, preds))]


def detection_rate(results) -> float:
    results = list(results)
    if not results:
        raise InvalidArgumentError("detection rate of an empty result list")
    return sum(r.flagged for r in results) / len(results)
