"""Domain types and tensor primitives shared by every other module.

Tensors are plain ``numpy.ndarray`` values (float64). A *position* is a flat
index into the channel-aggregated ``H*W`` grid; for multi-channel data one
position covers every channel at that pixel.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError

PLACEMENT_MODES = ("paired", "literal")
RANKINGS = ("signed", "absolute")


def as_tensor(values, shape=None) -> np.ndarray:
    """Return ``values`` as a finite float64 array, optionally reshaped."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise InvalidArgumentError(
                f"value count {arr.size} does not match shape {shape}"
            )
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("tensor contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class Sample:
    data: np.ndarray
    label: int

    def __post_init__(self):
        object.__setattr__(self, "data", as_tensor(self.data))
        if int(self.label) < 0:
            raise InvalidArgumentError(f"negative label {self.label}")
        object.__setattr__(self, "label", int(self.label))


@dataclass(frozen=True)
class AttackConfig:
    """Every knob of the substitution attack.

    ``rank_by`` selects signed (default) or absolute explanation values for
    position ranking. ``flip_labels`` (default) relabels backdoor poison with
    the golden class; set it False for clean-label poisoning.
    """

    alpha: float = 1.0
    beta: float = 1.0
    k: int = 1
    placement_mode: str = "paired"
    clamp: bool = False
    clamp_range: tuple[float, float] = (0.0, 1.0)
    golden_set_size: int = 8
    seed: int = 0
    poison_fraction: float = 0.10
    rank_by: str = "signed"
    flip_labels: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidArgumentError("alpha and beta must be nonnegative")
        if int(self.k) < 1:
            raise InvalidArgumentError(f"k must be positive, got {self.k}")
        if self.placement_mode not in PLACEMENT_MODES:
            raise InvalidArgumentError(f"unknown placement mode {self.placement_mode!r}")
        if self.rank_by not in RANKINGS:
            raise InvalidArgumentError(f"unknown ranking {self.rank_by!r}")
        if int(self.golden_set_size) < 1:
            raise InvalidArgumentError("golden_set_size must be >= 1")
        if not 0.0 <= self.poison_fraction <= 1.0:
            raise InvalidArgumentError("poison_fraction must lie in [0, 1]")
        lo, hi = self.clamp_range
        if lo > hi:
            raise InvalidArgumentError("clamp_range lower bound exceeds upper bound")

    def with_(self, **changes) -> "AttackConfig":
        return replace(self, **changes)


def _label_key(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


@dataclass(frozen=True)
class RngStream:
    """Labelled substream of a master seed.

    Identical ``(seed, label)`` pairs give identical sequences in any process;
    the label is hashed with SHA-256 rather than ``hash()`` for that reason.
    """

    seed: int
    label: str
    _key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_key", tuple(_label_key(self.label)))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=self._key)
        return np.random.Generator(np.random.PCG64(ss))


def rng_stream(seed: int, label: str) -> np.random.Generator:
    return RngStream(seed, label).generator()


def top_k_positions(agg, k: int) -> list[int]:
    """Indices of the ``k`` largest values, descending; ties go to the lower index."""
    agg = np.asarray(agg, dtype=np.float64).ravel()
    if not np.all(np.isfinite(agg)):
        raise InvalidArgumentError("aggregated explanation contains NaN or Inf")
    k = int(k)
    if k < 1 or k > agg.size:
        raise InvalidArgumentError(f"k={k} out of range for {agg.size} positions")
    # lexsort sorts by the last key first: value descending, then index ascending
    order = np.lexsort((np.arange(agg.size), -agg))
    return [int(i) for i in order[:k]]


def rank_positions(agg, rank_by: str = "signed") -> list[int]:
    """Full importance ordering of all positions."""
    agg = np.asarray(agg, dtype=np.float64).ravel()
    if rank_by == "absolute":
        agg = np.abs(agg)
    elif rank_by != "signed":
        raise InvalidArgumentError(f"unknown ranking {rank_by!r}")
    return top_k_positions(agg, agg.size)


def apply_mask_arithmetic(x, subtract, add, alpha: float, beta: float,
                          clamp: bool = False, range: Sequence[float] = (0.0, 1.0)) -> np.ndarray:
    """Evaluate ``x - alpha*subtract + beta*add``, optionally clipped to ``range``."""
    x = np.asarray(x, dtype=np.float64)
    subtract = np.asarray(subtract, dtype=np.float64)
    add = np.asarray(add, dtype=np.float64)
    if x.shape != subtract.shape or x.shape != add.shape:
        raise InvalidArgumentError(
            f"shape mismatch: x{x.shape}, subtract{subtract.shape}, add{add.shape}"
        )
    if alpha == 0 and beta == 0:
        out = x.copy()
    else:
        out = x - alpha * subtract + beta * add
        # keep untouched entries bit-exact (x - 0.0 + 0.0 can flip -0.0)
        untouched = (subtract == 0) & (add == 0)
        out[untouched] = x[untouched]
    if clamp:
        lo, hi = range
        out = np.clip(out, lo, hi)
    return out


def position_mask(shape: tuple[int, ...], positions: Sequence[int], source=None) -> np.ndarray:
    """Mask of ``shape`` (H, W, C) that is zero except at ``positions``.

    Values at the listed positions are copied from ``source`` (same shape),
    or set to one when ``source`` is None.
    """
    shape = tuple(shape)
    n_pos = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    channels = shape[-1] if len(shape) > 1 else 1
    mask = np.zeros((n_pos, channels))
    idx = np.asarray(list(positions), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n_pos):
        raise InvalidArgumentError("position out of range")
    if source is None:
        mask[idx] = 1.0
    else:
        mask[idx] = np.asarray(source, dtype=np.float64).reshape(n_pos, channels)[idx]
    return mask.reshape(shape)
