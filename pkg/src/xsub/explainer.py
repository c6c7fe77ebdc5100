"""Shapley-value attributions: exact enumeration and Kernel SHAP regression.

A model here is any callable mapping a batch ``(n, d)`` to scores of shape
``(n, C)`` (or ``(n,)`` for a single output). Features outside a coalition
take background values, and the coalition value is the mean model output
over the background set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import rng_stream
from .errors import CapacityError, FormatError, InvalidArgumentError, NumericalError
from .model import QueryLog

MAX_EXACT_FEATURES = 20
RIDGE = 1e-8
_CHUNK_ROWS = 1 << 16


@dataclass(frozen=True)
class ExplanationVector:
    values: np.ndarray
    target: int
    base_value: float
    shape: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64).ravel())
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("explanation contains NaN or Inf")

    def to_dict(self) -> dict:
        return {
            "class": int(self.target),
            "base_value": float(self.base_value),
            "values": self.values.tolist(),
            "shape": list(self.shape) if self.shape is not None else None,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "ExplanationVector":
        try:
            shape = record["shape"]
            return cls(np.asarray(record["values"]), int(record["class"]),
                       float(record["base_value"]), tuple(shape) if shape else None)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad explanation record: {exc}") from exc

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "ExplanationVector":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ExplainerConfig:
    mode: str = "kernel"
    n_coalitions: int = 2048
    background_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "kernel"):
            raise InvalidArgumentError(f"unknown explainer mode {self.mode!r}")
        if self.background_size < 1:
            raise InvalidArgumentError("background_size must be >= 1")


def _class_scores(f, batch: np.ndarray, target: int) -> np.ndarray:
    out = np.asarray(f(batch), dtype=np.float64)
    if out.ndim == 1:
        if target != 0:
            raise InvalidArgumentError("single-output model only has class 0")
        return out
    return out[:, target]


def coalition_values(f, x, background, masks, target, log: QueryLog | None = None) -> np.ndarray:
    """v(S) for each boolean row of ``masks``: mean score with absent features from background."""
    x = np.asarray(x, dtype=np.float64).ravel()
    bg = np.atleast_2d(np.asarray(background, dtype=np.float64))
    bg = bg.reshape(bg.shape[0], -1)
    if bg.shape[1] != x.size:
        raise InvalidArgumentError("background shape does not match x")
    masks = np.asarray(masks, dtype=bool)
    nb = bg.shape[0]
    per_chunk = max(1, _CHUNK_ROWS // nb)
    values = np.empty(masks.shape[0])
    for start in range(0, masks.shape[0], per_chunk):
        m = masks[start : start + per_chunk]
        batch = np.where(m[:, None, :], x[None, None, :], bg[None, :, :])
        scores = _class_scores(f, batch.reshape(-1, x.size), target)
        values[start : start + per_chunk] = scores.reshape(m.shape[0], nb).mean(axis=1)
    if log is not None:
        log.model_evals += masks.shape[0] * nb
    return values


def _all_masks(d: int) -> np.ndarray:
    codes = np.arange(1 << d, dtype=np.int64)
    return ((codes[:, None] >> np.arange(d)) & 1).astype(bool)


def exact_shapley(f, x, target: int, background, log: QueryLog | None = None) -> ExplanationVector:
    """Shapley values by enumerating all 2^d coalitions (d <= 20)."""
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    d = x.size
    if d > MAX_EXACT_FEATURES:
        raise CapacityError(f"exact enumeration limited to {MAX_EXACT_FEATURES} features, got {d}")
    masks = _all_masks(d)
    v = coalition_values(f, x, background, masks, target, log)
    sizes = masks.sum(axis=1)
    # weight for a coalition S of size s not containing j: s!(d-s-1)!/d!
    w = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d)
                  for s in range(d)])
    codes = np.arange(1 << d, dtype=np.int64)
    phi = np.empty(d)
    for j in range(d):
        without = codes[(codes >> j) & 1 == 0]
        phi[j] = np.dot(w[sizes[without]], v[without | (1 << j)] - v[without])
    return ExplanationVector(phi, target, float(v[0]), shape)


def shapley_kernel_weight(d: int, s) -> np.ndarray:
    """(d-1) / (C(d,s) s (d-s)); infinite at s = 0 and s = d."""
    s = np.asarray(s)
    comb = np.array([math.comb(d, int(k)) for k in s.ravel()], dtype=np.float64).reshape(s.shape)
    with np.errstate(divide="ignore"):
        return (d - 1) / (comb * s * (d - s))


def enumerate_coalitions(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Every non-trivial coalition with its exact Shapley kernel weight."""
    masks = _all_masks(d)[1:-1]
    return masks, shapley_kernel_weight(d, masks.sum(axis=1))


def sample_coalitions(d: int, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` coalitions with sizes proportional to the kernel mass of each size.

    Draws come in complementary pairs (antithetic sampling); importance
    sampling against the kernel makes the regression weights uniform.
    """
    if d < 2:
        raise InvalidArgumentError("sampling needs at least two features")
    sizes = np.arange(1, d)
    mass = (d - 1) / (sizes * (d - sizes))
    mass = mass / mass.sum()
    n_pairs = (n + 1) // 2
    draw = rng.choice(sizes, size=n_pairs, p=mass)
    masks = np.zeros((2 * n_pairs, d), dtype=bool)
    for i, s in enumerate(draw):
        chosen = rng.permutation(d)[:s]
        masks[2 * i, chosen] = True
        masks[2 * i + 1] = ~masks[2 * i]
    masks = masks[:n]
    return masks, np.full(masks.shape[0], 1.0)


def solve_constrained_wls(masks, weights, values, base: float, full: float) -> np.ndarray:
    """Weighted least squares for phi subject to sum(phi) == full - base.

    The last coefficient is eliminated through the constraint and the reduced
    system is solved from damped normal equations.
    """
    z = np.asarray(masks, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    total = full - base
    y = np.asarray(values, dtype=np.float64) - base
    d = z.shape[1]
    a = z[:, :-1] - z[:, [-1]]
    b = y - z[:, -1] * total
    gram = a.T @ (a * w[:, None])
    rhs = a.T @ (w * b)
    # judge solvability on the undamped system; the ridge only steadies the solve
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e14:
        raise NumericalError(
            f"singular coalition system: cond={cond:.3e}, coalitions={z.shape[0]}, "
            f"distinct={np.unique(z, axis=0).shape[0]}, d={d}"
        )
    head = np.linalg.solve(gram + RIDGE * np.eye(d - 1), rhs)
    return np.append(head, total - head.sum())


def kernel_shapley(f, x, target: int, background, cfg: ExplainerConfig | None = None,
                   log: QueryLog | None = None, coalitions=None) -> ExplanationVector:
    """Kernel SHAP estimate with efficiency enforced as a hard constraint.

    With ``n_coalitions >= 2**d - 2`` every coalition is enumerated with its
    exact kernel weight, which reproduces exact Shapley values.
    """
    cfg = cfg or ExplainerConfig()
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    if d == 1:
        ends = coalition_values(f, x, background, np.array([[False], [True]]), target, log)
        return ExplanationVector([ends[1] - ends[0]], target, float(ends[0]), x.shape)
    need = min_coalitions(d)
    if cfg.n_coalitions < need:
        raise InvalidArgumentError(f"need at least {need} coalitions for d={d}, "
                                   f"got {cfg.n_coalitions}")
    if coalitions is None:
        coalitions = default_coalitions(d, cfg)
    masks, weights = coalitions
    ends = coalition_values(f, x, background, np.array([np.zeros(d, bool), np.ones(d, bool)]),
                            target, log)
    v = coalition_values(f, x, background, masks, target, log)
    phi = solve_constrained_wls(masks, weights, v, ends[0], ends[1])
    return ExplanationVector(phi, target, float(ends[0]), x.shape)


def min_coalitions(d: int) -> int:
    """Smallest accepted design size.

    A complementary pair contributes a single direction once the efficiency
    constraint is eliminated, so a sampled design needs d-1 distinct pairs.
    Repeated draws at the extreme sizes are common, hence the 4d floor.
    """
    return (1 << d) - 2 if d <= 30 and (1 << d) - 2 <= 4 * d else 4 * d


def default_coalitions(d: int, cfg: ExplainerConfig):
    if d <= 30 and cfg.n_coalitions >= (1 << d) - 2:
        return enumerate_coalitions(d)
    return sample_coalitions(d, cfg.n_coalitions, rng_stream(cfg.seed, f"coalitions:{d}"))


def aggregate_channels(ev, shape) -> np.ndarray:
    """Sum attributions over channels at each pixel: (H*W*C,) -> (H*W,)."""
    values = ev.values if isinstance(ev, ExplanationVector) else np.asarray(ev, dtype=np.float64)
    values = values.ravel()
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or values.size != int(np.prod(shape)):
        raise InvalidArgumentError(f"{values.size} attributions do not fit shape {shape}")
    h, w, c = shape
    return values.reshape(h * w, c).sum(axis=1)


class Explainer:
    """Explanation service over a frozen model.

    Each :meth:`explain` call is one user-visible query; forward passes spent
    inside the estimator land in ``log.model_evals``. The kernel-mode
    coalition design is drawn once per explainer, so repeated calls on the
    same input are identical.
    """

    def __init__(self, model, background, cfg: ExplainerConfig | None = None):
        self.model = model
        self.cfg = cfg or ExplainerConfig()
        bg = np.asarray(background, dtype=np.float64)
        if bg.shape[0] == 0:
            raise InvalidArgumentError("background set is empty")
        self.background = bg.reshape(bg.shape[0], -1)
        self.d = self.background.shape[1]
        if self.cfg.mode == "exact" and self.d > MAX_EXACT_FEATURES:
            raise CapacityError(f"exact mode limited to {MAX_EXACT_FEATURES} features")
        self._coalitions = None
        if self.cfg.mode == "kernel" and self.d > 1:
            if self.cfg.n_coalitions < min_coalitions(self.d):
                raise InvalidArgumentError(f"kernel mode needs at least {min_coalitions(self.d)} "
                                           f"coalitions for d={self.d}")
            self._coalitions = default_coalitions(self.d, self.cfg)

    @classmethod
    def from_dataset(cls, model, train, cfg: ExplainerConfig | None = None) -> "Explainer":
        cfg = cfg or ExplainerConfig()
        rng = rng_stream(cfg.seed, "background")
        n = min(cfg.background_size, len(train))
        idx = np.sort(rng.choice(len(train), size=n, replace=False))
        return cls(model, train.flat[idx], cfg)

    def explain(self, x, target: int, log: QueryLog | None = None) -> ExplanationVector:
        x = np.asarray(x, dtype=np.float64)
        if x.size != self.d:
            raise InvalidArgumentError(f"input has {x.size} features, explainer expects {self.d}")
        if log is not None:
            log.explain_count += 1
        if self.cfg.mode == "exact":
            return exact_shapley(self.model, x, target, self.background, log)
        return kernel_shapley(self.model, x, target, self.background, self.cfg, log,
                              coalitions=self._coalitions)
