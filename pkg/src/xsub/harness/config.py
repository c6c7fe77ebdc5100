"""Line-oriented ``key = value`` configuration with a fixed dotted-key schema.

Lines starting with ``#`` are comments. Lists are comma separated. Every key
must appear in :data:`SCHEMA`; anything else is a :class:`ConfigError`
naming the key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..core import AttackConfig
from ..errors import ConfigError, FileError
from ..explainer import ExplainerConfig
from ..model import TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(kind):
    def parse(text: str):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return [kind(t) for t in items]
    parse.__name__ = f"list[{kind.__name__}]"
    return parse


def _shape(text: str) -> tuple[int, int, int]:
    parts = tuple(int(p) for p in text.lower().split("x"))
    if len(parts) != 3:
        raise ValueError(f"shape must look like HxWxC, got {text!r}")
    return parts


# key -> (parser, default)
SCHEMA = {
    "run.seed": (int, 1),
    "data.preset": (str, "synthetic"),
    "data.seed": (str, "run"),
    "data.n_per_class": (int, 250),
    "data.shape": (_shape, (8, 8, 1)),
    "data.classes": (int, 4),
    "data.separation": (float, 3.0),
    "data.train_fraction": (float, 0.8),
    "data.train_images": (str, ""),
    "data.train_labels": (str, ""),
    "data.test_images": (str, ""),
    "data.test_labels": (str, ""),
    "data.train_file": (str, ""),
    "data.test_file": (str, ""),
    "data.limit_train": (int, 0),
    "data.limit_test": (int, 0),
    "model.hidden": (_list(int), [64]),
    "train.lr": (float, 0.05),
    "train.epochs": (int, 20),
    "train.batch_size": (int, 32),
    "explainer.mode": (str, "kernel"),
    "explainer.coalitions": (int, 512),
    "explainer.background": (int, 16),
    "attack.alpha": (float, 1.0),
    "attack.beta": (float, 1.0),
    "attack.k": (int, 1),
    "attack.mode": (str, "paired"),
    "attack.clamp": (_bool, False),
    "attack.clamp_lo": (float, 0.0),
    "attack.clamp_hi": (float, 1.0),
    "attack.golden_set_size": (int, 8),
    "attack.rank_by": (str, "signed"),
    "attack.poison_fraction": (float, 0.10),
    "attack.flip_labels": (_bool, True),
    "defense.enabled": (_bool, False),
    "sweep.alphas": (_list(float), [1.0, 5.0, 10.0, 100.0, 200.0]),
    "sweep.betas": (_list(float), [1.0, 5.0, 10.0, 100.0, 200.0]),
    "sweep.ks": (_list(int), [1]),
    "sweep.modes": (_list(str), ["paired"]),
    "sweep.scenarios": (_list(str), ["adversarial"]),
    "sweep.seeds": (_list(int), list(range(1, 11))),
    "export.count": (int, 4),
}


@dataclass(frozen=True)
class SweepSpec:
    alphas: tuple[float, ...]
    betas: tuple[float, ...]
    ks: tuple[int, ...]
    modes: tuple[str, ...]
    scenarios: tuple[str, ...]
    seeds: tuple[int, ...]
    defense: bool = False

    def __post_init__(self):
        for name in ("alphas", "betas", "ks", "modes", "scenarios", "seeds"):
            if not getattr(self, name):
                raise ConfigError(f"sweep.{name} must not be empty", f"sweep.{name}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("sweep.seeds must be distinct", "sweep.seeds")
        for s in self.scenarios:
            if s not in ("adversarial", "backdoor"):
                raise ConfigError(f"unknown scenario {s!r}", "sweep.scenarios")

    @property
    def cell_count(self) -> int:
        return (len(self.alphas) * len(self.betas) * len(self.ks) * len(self.modes)
                * len(self.scenarios) * len(self.seeds))


@dataclass
class Config:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}", key)
        return self.values.get(key, SCHEMA[key][1])

    def set(self, key, text: str) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}", key)
        parser = SCHEMA[key][0]
        try:
            self.values[key] = parser(text) if isinstance(text, str) else text
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", key) from exc

    def with_seed(self, seed: int) -> "Config":
        values = dict(self.values)
        values["run.seed"] = int(seed)
        return Config(values)

    @property
    def seed(self) -> int:
        return int(self["run.seed"])

    def data_seed(self, seed: int | None = None) -> int:
        raw = self["data.seed"]
        if raw == "run":
            return self.seed if seed is None else int(seed)
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"data.seed must be an integer or 'run', got {raw!r}",
                              "data.seed") from None

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(lr=self["train.lr"], epochs=self["train.epochs"],
                           batch_size=self["train.batch_size"],
                           seed=self.seed if seed is None else seed,
                           hidden=tuple(self["model.hidden"]))

    def explainer_config(self, seed: int | None = None) -> ExplainerConfig:
        return ExplainerConfig(mode=self["explainer.mode"],
                               n_coalitions=self["explainer.coalitions"],
                               background_size=self["explainer.background"],
                               seed=self.seed if seed is None else seed)

    def attack_config(self, seed: int | None = None, **overrides) -> AttackConfig:
        cfg = AttackConfig(
            alpha=self["attack.alpha"], beta=self["attack.beta"], k=self["attack.k"],
            placement_mode=self["attack.mode"], clamp=self["attack.clamp"],
            clamp_range=(self["attack.clamp_lo"], self["attack.clamp_hi"]),
            golden_set_size=self["attack.golden_set_size"],
            seed=self.seed if seed is None else seed,
            poison_fraction=self["attack.poison_fraction"],
            rank_by=self["attack.rank_by"], flip_labels=self["attack.flip_labels"],
        )
        return cfg.with_(**overrides) if overrides else cfg

    def sweep_spec(self) -> SweepSpec:
        return SweepSpec(tuple(self["sweep.alphas"]), tuple(self["sweep.betas"]),
                         tuple(self["sweep.ks"]), tuple(self["sweep.modes"]),
                         tuple(self["sweep.scenarios"]), tuple(self["sweep.seeds"]),
                         self["defense.enabled"])


def parse_config(text: str) -> Config:
    cfg = Config()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", key)
        seen.add(key)
        cfg.set(key, value.strip())
    return cfg


def load_config(path) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    if not path.exists():
        raise FileError(f"missing config file {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def dump_config(cfg: Config) -> str:
    """Render every schema key with its effective value."""
    lines = []
    for key, (parser, _) in SCHEMA.items():
        value = cfg[key]
        if isinstance(value, (list, tuple)) and key != "data.shape":
            text = ", ".join(str(v) for v in value)
        elif key == "data.shape":
            text = "x".join(str(v) for v in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
