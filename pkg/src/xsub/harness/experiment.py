"""Experiment orchestration: data loading, clean workspace, sweep cells, CSV."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .. import attack as atk
from ..data import (Dataset, load_cifar10_binary, load_idx, normalize_dataset,
                    synth_gaussians, train_test_split)
from ..defense import CleanReference, calibrate, detection_rate, score_batch
from ..errors import ConfigError, InvalidArgumentError
from ..explainer import Explainer
from ..model import Classifier, filter_correct, train
from .config import Config

CSV_HEADER = ["seed", "alpha", "beta", "k", "mode", "scenario", "accuracy", "attack_sr",
              "detection_rate", "queries_predict", "queries_explain", "wall_time_ms"]


def load_data(cfg: Config, seed: int | None = None) -> tuple[Dataset, Dataset]:
    """Normalised (train, test) datasets for the configured preset."""
    preset = cfg["data.preset"]
    if preset == "synthetic":
        shape = cfg["data.shape"]
        d = int(np.prod(shape))
        ds = synth_gaussians(cfg["data.n_per_class"], d, cfg["data.classes"],
                             cfg["data.separation"], cfg.data_seed(seed), shape=shape)
        train_set, test_set = train_test_split(ds, cfg["data.train_fraction"])
    elif preset in ("idx", "mnist"):
        train_set = load_idx(cfg["data.train_images"], cfg["data.train_labels"], "train")
        test_set = load_idx(cfg["data.test_images"], cfg["data.test_labels"], "test",
                            descriptor=train_set.descriptor)
    elif preset == "cifar10":
        train_set = load_cifar10_binary(cfg["data.train_file"], "train")
        test_set = load_cifar10_binary(cfg["data.test_file"], "test")
    else:
        raise ConfigError(f"unknown data preset {preset!r}", "data.preset")
    if cfg["data.limit_train"]:
        train_set = train_set.subset(np.arange(min(cfg["data.limit_train"], len(train_set))))
    if cfg["data.limit_test"]:
        test_set = test_set.subset(np.arange(min(cfg["data.limit_test"], len(test_set))))
    return normalize_dataset(train_set), normalize_dataset(test_set)


@dataclass
class Workspace:
    """Everything the attacker and evaluator need for one seed."""

    seed: int
    train: Dataset
    test: Dataset
    model: Classifier
    explainer: Explainer
    cache: atk.GoldenCache
    kept: Dataset
    reference: CleanReference | None = None


def prepare(cfg: Config, seed: int, model: Classifier | None = None,
            cache: atk.GoldenCache | None = None, defense: bool = False) -> Workspace:
    train_set, test_set = load_data(cfg, seed)
    if model is None:
        model = train(train_set, cfg.train_config(seed))
    g = Explainer.from_dataset(model, train_set, cfg.explainer_config(seed))
    if cache is None:
        cache = atk.build_golden_cache(model, g, test_set, cfg.attack_config(seed))
    ref = calibrate(model, train_set) if defense else None
    return Workspace(seed, train_set, test_set, model, g, cache,
                     filter_correct(model, test_set), ref)


@dataclass(frozen=True)
class MetricsRecord:
    seed: int
    alpha: float
    beta: float
    k: int
    mode: str
    scenario: str
    accuracy: float
    attack_sr: float
    detection_rate: float | None
    queries_predict: int
    queries_explain: int
    wall_time_ms: float = 0.0

    @property
    def key(self) -> tuple:
        return (self.scenario, self.mode, self.k, self.alpha, self.beta, self.seed)

    def row(self) -> list[str]:
        return [str(self.seed), repr(self.alpha), repr(self.beta), str(self.k), self.mode,
                self.scenario, repr(self.accuracy), repr(self.attack_sr),
                "" if self.detection_rate is None else repr(self.detection_rate),
                str(self.queries_predict), str(self.queries_explain),
                f"{self.wall_time_ms:.3f}"]


def _constant_budget(outcomes) -> tuple[int, int]:
    budgets = {(o.queries.predict_count, o.queries.explain_count) for o in outcomes}
    if len(budgets) != 1:
        raise InvalidArgumentError(f"per-sample query budget is not constant: {sorted(budgets)}")
    return budgets.pop()


def run_cell(ws: Workspace, cfg: Config, alpha: float, beta: float, k: int, mode: str,
             scenario: str, defense: bool = False, artifacts: dict | None = None) -> MetricsRecord:
    """Evaluate one sweep cell. ``artifacts`` (if given) receives the backdoored model/report."""
    start = time.perf_counter()
    acfg = cfg.attack_config(ws.seed, alpha=float(alpha), beta=float(beta), k=int(k),
                             placement_mode=mode)
    if scenario == "adversarial":
        model = ws.model
        outcomes = atk.attack_dataset(model, ws.explainer, ws.kept, ws.cache, acfg)
        acc = atk.accuracy(model, ws.test)
        ref = ws.reference
        if defense and ref is None:
            ref = ws.reference = calibrate(model, ws.train)
    elif scenario == "backdoor":
        model, report = atk.backdoor_attack(cfg.train_config(ws.seed), ws.explainer, ws.train,
                                            ws.test, ws.cache, acfg, clean=ws.model)
        outcomes = list(report.outcomes)
        if artifacts is not None:
            artifacts.update(model=model, report=report)
        acc = report.backdoor_accuracy
        ref = calibrate(model, ws.train) if defense else None
    else:
        raise ConfigError(f"unknown scenario {scenario!r}", "sweep.scenarios")
    det = None
    if defense:
        results = score_batch(ref, model, np.stack([o.perturbed for o in outcomes]))
        det = detection_rate(results)
    qp, qe = _constant_budget(outcomes)
    return MetricsRecord(ws.seed, float(alpha), float(beta), int(k), mode, scenario, acc,
                         atk.attack_sr(outcomes), det, qp, qe,
                         (time.perf_counter() - start) * 1000.0)


def run_seed(cfg: Config, seed: int) -> list[MetricsRecord]:
    spec = cfg.sweep_spec()
    ws = prepare(cfg, seed, defense=spec.defense)
    records = []
    for scenario, mode, k, alpha, beta in product(spec.scenarios, spec.modes, spec.ks,
                                                  spec.alphas, spec.betas):
        records.append(run_cell(ws, cfg, alpha, beta, k, mode, scenario, spec.defense))
    return records


def _run_seed_job(args):
    values, seed = args
    return run_seed(Config(dict(values)), seed)


def run_sweep(cfg: Config, workers: int = 1) -> list[MetricsRecord]:
    """All cells of the configured sweep, in canonical (sorted by cell key) order."""
    spec = cfg.sweep_spec()
    jobs = [(cfg.values, s) for s in spec.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_seed_job, jobs))
    else:
        chunks = [_run_seed_job(j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    return sorted(records, key=lambda r: r.key)


def records_to_csv(records, header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def append_csv(path, records) -> Path:
    """Append rows, writing the header first if the file is new or empty."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with path.open("a", encoding="utf-8", newline="") as fh:
        fh.write(records_to_csv(records, header=fresh))
    return path
