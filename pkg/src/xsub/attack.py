"""Golden-sample selection, feature substitution, and the attack pipelines."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (AttackConfig, Sample, apply_mask_arithmetic, position_mask,
                   rank_positions, rng_stream)
from .data import Dataset
from .errors import (EmptyClassError, FileError, FormatError, InvalidArgumentError)
from .explainer import Explainer, ExplanationVector, aggregate_channels
from .model import Classifier, QueryLog, TrainConfig, filter_correct, predict, predict_labels, train

log = logging.getLogger(__name__)

CACHE_FORMAT = "xsub-golden-cache"
CACHE_VERSION = 1


@dataclass(frozen=True)
class GoldenCacheEntry:
    target: int
    sample: np.ndarray
    explanation: ExplanationVector
    positions: tuple[int, ...]
    candidate_indices: tuple[int, ...]
    candidate_scores: tuple[float, ...]
    seed: int

    @property
    def set_size(self) -> int:
        return len(self.candidate_indices)

    @property
    def score(self) -> float:
        return max(self.candidate_scores)

    def to_dict(self) -> dict:
        return {
            "class": self.target,
            "shape": list(self.sample.shape),
            "sample": self.sample.ravel().tolist(),
            "explanation": self.explanation.to_dict(),
            "positions": list(self.positions),
            "candidate_indices": list(self.candidate_indices),
            "candidate_scores": list(self.candidate_scores),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "GoldenCacheEntry":
        return cls(
            int(rec["class"]),
            np.asarray(rec["sample"], dtype=np.float64).reshape(rec["shape"]),
            ExplanationVector.from_dict(rec["explanation"]),
            tuple(int(p) for p in rec["positions"]),
            tuple(int(i) for i in rec["candidate_indices"]),
            tuple(float(s) for s in rec["candidate_scores"]),
            int(rec["seed"]),
        )


@dataclass
class GoldenCache:
    entries: dict[int, GoldenCacheEntry]
    offline: QueryLog = field(default_factory=QueryLog)
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, cls: int) -> GoldenCacheEntry:
        try:
            return self.entries[cls]
        except KeyError:
            raise EmptyClassError(f"no golden sample cached for class {cls}") from None

    def __contains__(self, cls) -> bool:
        return cls in self.entries

    def __len__(self):
        return len(self.entries)

    def to_json(self) -> str:
        record = {
            "format": CACHE_FORMAT,
            "version": CACHE_VERSION,
            "entries": [self.entries[c].to_dict() for c in sorted(self.entries)],
            "offline_queries": {"predict": self.offline.predict_count,
                                "explain": self.offline.explain_count},
            "warnings": self.warnings,
        }
        return json.dumps(record)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "GoldenCache":
        path = Path(path)
        if not path.exists():
            raise FileError(f"missing golden cache {path}")
        try:
            rec = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a golden cache record") from exc
        if rec.get("format") != CACHE_FORMAT or rec.get("version") != CACHE_VERSION:
            raise FormatError(f"{path}: unsupported cache format/version")
        entries = {}
        for item in rec["entries"]:
            entry = GoldenCacheEntry.from_dict(item)
            entries[entry.target] = entry
        q = rec.get("offline_queries", {})
        return cls(entries, QueryLog(q.get("predict", 0), q.get("explain", 0)),
                   list(rec.get("warnings", [])))


def golden_index(scores) -> int:
    """Index of the highest candidate score; the earliest candidate wins ties."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyClassError("no candidates to choose from")
    return int(np.argmax(scores))


def _importance(agg: np.ndarray, rank_by: str) -> np.ndarray:
    return np.abs(agg) if rank_by == "absolute" else agg


def select_golden(f: Classifier, g: Explainer, test: Dataset, target: int,
                  cfg: AttackConfig, log_: QueryLog | None = None) -> GoldenCacheEntry:
    """Pick the golden sample of class ``target`` from a random candidate set.

    Candidates are drawn from test samples of that class the model gets
    right; the winner has the largest channel-aggregated attribution.
    """
    eligible = np.flatnonzero((test.y == target) & (predict_labels(f, test.x) == test.y))
    if eligible.size == 0:
        raise EmptyClassError(f"no correctly classified test samples of class {target}")
    rng = rng_stream(cfg.seed, f"golden:{target}")
    n = min(int(cfg.golden_set_size), eligible.size)
    chosen = rng.choice(eligible, size=n, replace=False)
    shape = test.descriptor.shape
    explanations, aggs, scores = [], [], []
    for idx in chosen:
        predict(f, test.x[idx], log_)
        ev = g.explain(test.x[idx], target, log_)
        agg = aggregate_channels(ev, shape)
        explanations.append(ev)
        aggs.append(agg)
        scores.append(float(_importance(agg, cfg.rank_by).max()))
    win = golden_index(scores)
    return GoldenCacheEntry(
        target=int(target),
        sample=np.array(test.x[chosen[win]]),
        explanation=explanations[win],
        positions=tuple(rank_positions(aggs[win], cfg.rank_by)),
        candidate_indices=tuple(int(i) for i in chosen),
        candidate_scores=tuple(scores),
        seed=int(cfg.seed),
    )


def build_golden_cache(f: Classifier, g: Explainer, test: Dataset, cfg: AttackConfig,
                       path=None) -> GoldenCache:
    """One golden entry per class, built offline; empty classes are skipped with a warning."""
    offline = QueryLog()
    cache = GoldenCache({}, offline)
    for cls in range(test.descriptor.num_classes):
        try:
            cache.entries[cls] = select_golden(f, g, test, cls, cfg, offline)
        except EmptyClassError as exc:
            cache.warnings.append(f"class {cls}: {exc}")
            log.warning("golden cache incomplete: %s", exc)
    if path is not None:
        cache.save(path)
    return cache


def load_or_build_cache(path, f, g, test, cfg) -> GoldenCache:
    path = Path(path)
    if path.exists():
        return GoldenCache.load(path)
    log.info("golden cache %s missing; rebuilding", path)
    return build_golden_cache(f, g, test, cfg, path)


def substitute(x, expl_x_agg, golden: GoldenCacheEntry,
               cfg: AttackConfig) -> tuple[np.ndarray, list[int]]:
    """Replace the top-K positions of ``x`` using the golden sample.

    ``paired``: x's rank-r position receives the golden value from the golden
    rank-r position. ``literal``: subtraction mask on x's positions, addition
    mask on the golden sample's own positions.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != golden.sample.shape:
        raise InvalidArgumentError(f"x{x.shape} and golden{golden.sample.shape} differ in shape")
    shape = x.shape if x.ndim == 3 else (x.size, 1, 1)
    x3 = x.reshape(shape)
    n_pos = shape[0] * shape[1]
    k = int(cfg.k)
    if k < 1 or k > n_pos or k > len(golden.positions):
        raise InvalidArgumentError(f"K={k} out of range for {n_pos} positions")
    x_pos = rank_positions(expl_x_agg, cfg.rank_by)[:k]
    g_pos = list(golden.positions[:k])
    g3 = golden.sample.reshape(shape)
    subtract = position_mask(shape, x_pos, x3)
    if cfg.placement_mode == "paired":
        add = np.zeros((n_pos, shape[2]))
        add[x_pos] = g3.reshape(n_pos, shape[2])[g_pos]
        add = add.reshape(shape)
        modified = list(x_pos)
    else:
        add = position_mask(shape, g_pos, g3)
        modified = list(x_pos) + [p for p in g_pos if p not in x_pos]
    out = apply_mask_arithmetic(x3, subtract, add, cfg.alpha, cfg.beta,
                                cfg.clamp, cfg.clamp_range)
    return out.reshape(x.shape), modified


@dataclass(frozen=True)
class AttackOutcome:
    sample: Sample
    perturbed: np.ndarray
    clean_label: int
    adv_label: int
    golden_class: int
    queries: QueryLog
    positions: tuple[int, ...]

    @property
    def success(self) -> bool:
        return self.adv_label != self.sample.label


def other_class(label: int, num_classes: int, rng: np.random.Generator) -> int:
    """Uniform draw from the classes different from ``label``."""
    pick = int(rng.integers(num_classes - 1))
    return pick if pick < label else pick + 1


def adversarial_attack(f: Classifier, g: Explainer, sample: Sample, cache: GoldenCache,
                       cfg: AttackConfig, index: int = 0, stream: str | None = None) -> AttackOutcome:
    """Online attack on one sample: 2 prediction queries and 1 explanation query.

    The golden class is drawn from the RNG stream ``attack:<index>`` (or
    ``stream`` when given), so outcomes do not depend on evaluation order.
    """
    queries = QueryLog()
    _, y_hat = predict(f, sample.data, queries)
    ev = g.explain(sample.data, y_hat, queries)
    shape = sample.data.shape if sample.data.ndim == 3 else (sample.data.size, 1, 1)
    agg = aggregate_channels(ev, shape)
    rng = rng_stream(cfg.seed, stream or f"attack:{index}")
    target = other_class(sample.label, f.num_classes, rng)
    x_adv, modified = substitute(sample.data, agg, cache[target], cfg)
    _, y_adv = predict(f, x_adv, queries)
    return AttackOutcome(sample, x_adv, y_hat, y_adv, target, queries, tuple(modified))


def attack_dataset(f, g, samples: Dataset, cache: GoldenCache, cfg: AttackConfig) -> list[AttackOutcome]:
    return [adversarial_attack(f, g, samples[i], cache, cfg, index=i) for i in range(len(samples))]


def accuracy(f: Classifier, samples) -> float:
    """Fraction of samples whose predicted label equals ground truth."""
    if isinstance(samples, Dataset):
        x, y = samples.x, samples.y
    else:
        samples = list(samples)
        x = np.stack([s.data for s in samples]) if samples else np.empty(0)
        y = np.array([s.label for s in samples])
    if len(y) == 0:
        raise InvalidArgumentError("accuracy of an empty sample list")
    return float(np.mean(predict_labels(f, x) == y))


def attack_sr(outcomes) -> float:
    """Fraction of perturbed samples no longer classified as their ground truth."""
    outcomes = list(outcomes)
    if not outcomes:
        raise InvalidArgumentError("attack success rate of an empty outcome list")
    return sum(o.success for o in outcomes) / len(outcomes)


@dataclass(frozen=True)
class PoisonedDataset:
    x: np.ndarray
    y: np.ndarray
    poisoned: np.ndarray
    source_indices: np.ndarray
    fraction: float

    @property
    def n_poison(self) -> int:
        return int(self.poisoned.sum())

    def __len__(self):
        return int(self.y.size)


def poison_count(n: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise InvalidArgumentError(f"poison fraction must lie in (0, 1], got {fraction}")
    count = int(round(fraction * n))
    if count < 1:
        raise InvalidArgumentError(f"poison fraction {fraction} of {n} samples is empty")
    return count


def poison_training_set(f: Classifier, g: Explainer, train_set: Dataset, cache: GoldenCache,
                        cfg: AttackConfig) -> PoisonedDataset:
    """Append substituted copies of round(p*|D|) distinct training samples."""
    n_p = poison_count(len(train_set), cfg.poison_fraction)
    rng = rng_stream(cfg.seed, "poison")
    picked = np.sort(rng.choice(len(train_set), size=n_p, replace=False))
    xs, ys = [], []
    for i in picked:
        out = adversarial_attack(f, g, train_set[i], cache, cfg, stream=f"poison:{i}")
        xs.append(out.perturbed)
        ys.append(out.golden_class if cfg.flip_labels else out.sample.label)
    x = np.concatenate([train_set.x, np.stack(xs)])
    y = np.concatenate([train_set.y, np.asarray(ys, dtype=np.int64)])
    flags = np.concatenate([np.zeros(len(train_set), bool), np.ones(n_p, bool)])
    return PoisonedDataset(x, y, flags, picked, cfg.poison_fraction)


@dataclass(frozen=True)
class BackdoorReport:
    clean_accuracy: float
    backdoor_accuracy: float
    attack_sr: float
    n_poison: int
    n_eval: int
    outcomes: tuple = ()


def backdoor_attack(train_cfg: TrainConfig, g: Explainer, train_set: Dataset, test: Dataset,
                    cache: GoldenCache, cfg: AttackConfig,
                    clean: Classifier | None = None) -> tuple[Classifier, BackdoorReport]:
    """Poison, retrain from scratch on the union, then evaluate.

    ``g`` explains the clean reference model; it crafts both the training
    poison and the test-time triggers so the two come from one generator.
    Accuracy is measured on the whole clean test set; attack SR on test
    samples the clean model classifies correctly.
    """
    clean = clean if clean is not None else g.model
    poisoned = poison_training_set(clean, g, train_set, cache, cfg)
    backdoored = train(train_set, train_cfg, x=poisoned.x, y=poisoned.y)
    kept = filter_correct(clean, test)
    outcomes = attack_dataset(backdoored, g, kept, cache, cfg)
    report = BackdoorReport(
        clean_accuracy=accuracy(clean, test),
        backdoor_accuracy=accuracy(backdoored, test),
        attack_sr=attack_sr(outcomes),
        n_poison=poisoned.n_poison,
        n_eval=len(kept),
        outcomes=tuple(outcomes),
    )
    return backdoored, report
