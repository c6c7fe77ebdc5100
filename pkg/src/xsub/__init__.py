"""Explanation-driven black-box adversarial attack via feature substitution."""

from .attack import (AttackOutcome, GoldenCache, GoldenCacheEntry, accuracy,
                     adversarial_attack, attack_sr, backdoor_attack, build_golden_cache,
                     select_golden, substitute)
from .core import AttackConfig, Sample, apply_mask_arithmetic, rng_stream, top_k_positions
from .data import Dataset, DatasetDescriptor, load_cifar10_binary, load_idx, synth_gaussians
from .explainer import Explainer, ExplainerConfig, ExplanationVector, exact_shapley, kernel_shapley
from .model import Classifier, QueryLog, TrainConfig, predict, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackOutcome", "Classifier", "Dataset", "DatasetDescriptor", "Explainer",
    "ExplainerConfig", "ExplanationVector", "GoldenCache", "GoldenCacheEntry", "QueryLog",
    "Sample", "TrainConfig", "accuracy", "adversarial_attack", "apply_mask_arithmetic",
    "attack_sr", "backdoor_attack", "build_golden_cache", "exact_shapley", "kernel_shapley",
    "load_cifar10_binary", "load_idx", "predict", "rng_stream", "select_golden", "substitute",
    "synth_gaussians", "top_k_positions", "train",
]
