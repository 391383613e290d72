"""Experiment configuration: flat `key = value` text with dotted sections.

Sections are dataset.*, learner.*, attack.*, and eval.*. Unknown keys are
errors; '#' starts a comment. Every key has a typed default below, so a
config file only states what differs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def _as_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _as_optional_int(raw: str) -> int | None:
    return None if raw.lower() == "none" else int(raw)


# key -> (coercer, default)
SCHEMA: dict[str, tuple] = {
    "dataset.source": (str, "rendered"),          # rendered | mnist | synthetic
    "dataset.benchmark": (str, "rotation"),       # rotation | split
    "dataset.scenario": (str, "DIL"),             # DIL | CIL
    "dataset.n_tasks": (int, 5),
    "dataset.classes_per_task": (int, 2),
    "dataset.train_cap": (_as_optional_int, 2000),
    "dataset.test_cap": (_as_optional_int, 1000),
    "dataset.base_train": (int, 12000),
    "dataset.base_test": (int, 6000),
    "dataset.path": (str, ""),
    "learner.kind": (str, "ewc"),                 # ewc | online_ewc | si | dgr | dgr-d
    "learner.lambda": (float, 100.0),
    "learner.gamma": (float, 1.0),
    "learner.xi": (float, 0.1),
    "learner.epochs": (int, 4),
    "learner.batch": (int, 128),
    "learner.lr": (float, 1e-3),
    "learner.vae_lr": (float, 0.0),  # 0 means: use learner.lr
    "learner.fisher_samples": (int, 500),
    "learner.hidden": (str, "256,256"),
    "learner.latent_dim": (int, 32),
    "learner.vae_hidden": (int, 256),
    "attack.enabled": (_as_bool, False),
    "attack.kind": (str, "frame"),                # frame | watermark
    "attack.frame_width": (int, 5),
    "attack.amplitude": (float, 0.03),
    "attack.epsilon": (float, 0.01),
    "attack.fraction": (float, 0.01),
    "attack.insertion_task": (int, 5),
    "attack.target_task": (int, 1),
    "attack.false_label": (int, 0),
    "attack.source": (str, "current"),            # current | target
    "eval.runs": (int, 3),
    "eval.seed": (int, 7),
    "eval.out": (str, ""),
}

REGULARIZATION_KINDS = ("ewc", "online_ewc", "si")
REPLAY_KINDS = ("dgr", "dgr-d")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: default for k, (_, default) in SCHEMA.items()}
        for key, val in self.values.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = val
        self.values = merged
        self._validate()

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def with_overrides(self, **dotted) -> "ExperimentConfig":
        """Copy with keys like eval_seed=3 mapped onto 'eval.seed'."""
        out = dict(self.values)
        for name, value in dotted.items():
            if value is None:
                continue
            out[name.replace("_", ".", 1)] = value
        return ExperimentConfig(out)

    def _validate(self) -> None:
        v = self.values
        if v["dataset.source"] not in ("rendered", "mnist", "synthetic"):
            raise ConfigError(f"unknown dataset source {v['dataset.source']!r}")
        if v["dataset.benchmark"] not in ("rotation", "split"):
            raise ConfigError(f"unknown benchmark {v['dataset.benchmark']!r}")
        if v["dataset.scenario"] not in ("DIL", "CIL"):
            raise ConfigError("dataset.scenario must be DIL or CIL")
        kind = v["learner.kind"]
        if kind not in REGULARIZATION_KINDS + REPLAY_KINDS:
            raise ConfigError(f"unknown learner kind {kind!r}")
        if kind in REGULARIZATION_KINDS and v["dataset.scenario"] != "DIL":
            raise ConfigError("regularization learners are only exercised under DIL")
        if v["dataset.source"] == "mnist" and not v["dataset.path"]:
            raise ConfigError("dataset.source=mnist needs dataset.path")
        if v["eval.runs"] < 1:
            raise ConfigError("eval.runs must be >= 1")
        n_tasks = self.n_tasks
        if v["attack.enabled"]:
            for key in ("attack.insertion_task", "attack.target_task"):
                if not 1 <= v[key] <= n_tasks:
                    raise ConfigError(f"{key}={v[key]} outside 1..{n_tasks}")
            if v["attack.kind"] not in ("frame", "watermark"):
                raise ConfigError(f"unknown attack kind {v['attack.kind']!r}")
            if v["attack.source"] not in ("current", "target"):
                raise ConfigError(f"unknown attack source {v['attack.source']!r}")

    @property
    def n_tasks(self) -> int:
        if self.values["dataset.source"] == "synthetic":
            return self.values["dataset.n_tasks"]
        if self.values["dataset.benchmark"] == "rotation":
            return self.values["dataset.n_tasks"]
        return 10 // self.values["dataset.classes_per_task"]

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(int(w) for w in str(self.values["learner.hidden"]).split(",") if w)

    def canonical_text(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values)) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_val = line.partition("=")
        key, raw_val = key.strip(), raw_val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        coerce, _ = SCHEMA[key]
        try:
            values[key] = coerce(raw_val)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return ExperimentConfig(values)


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())
