"""Trigger patterns, training-set poisoning, and tagged evaluation sets.

Two trigger families: an additive border frame whose band pixels carry a
small constant amplitude, and a watermark that scales a binary border mask
by a weight epsilon. Both keep the per-pixel perturbation bounded, so the
tag stays invisible on dark-border images.
"""

from __future__ import annotations

import copy
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .data import TaskData, TaskSequence

FRAME = "frame"
WATERMARK = "watermark"

CURRENT_TASK = "current"  # substitute rows already in the insertion task
TARGET_TASK = "target"    # append rows drawn from the target task


def frame_mask(h: int, w: int, frame_width: int) -> np.ndarray:
    """Binary border band: 1 where min distance to an edge < frame_width."""
    if frame_width < 0:
        raise ValueError("frame_width must be >= 0")
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    dist = np.minimum(np.minimum(rows, h - 1 - rows), np.minimum(cols, w - 1 - cols))
    return (dist < frame_width).astype(np.float64)


@dataclass(frozen=True)
class TriggerPattern:
    """Cached trigger image r_f plus its strength bound.

    frame: r_f equals `amplitude` on the border band, 0 inside.
    watermark: r_f is the binary band mask; applied scaled by `strength`.
    """

    kind: str
    mask: np.ndarray
    strength: float
    height: int
    width: int

    def __post_init__(self):
        if self.kind not in (FRAME, WATERMARK):
            raise ValueError(f"unknown trigger kind {self.kind!r}")
        if self.strength < 0:
            raise ValueError("trigger strength must be >= 0")

    def apply(self, X: np.ndarray) -> np.ndarray:
        if self.kind == FRAME:
            return apply_additive(X, self)
        return apply_watermark(X, self)


def make_frame_pattern(h: int, w: int, frame_width: int, amplitude: float) -> TriggerPattern:
    """Additive frame: band pixels carry `amplitude`. Oversized widths clamp
    to the whole image rather than erroring."""
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    band = frame_mask(h, w, frame_width)
    return TriggerPattern(FRAME, band.ravel() * amplitude, float(amplitude), h, w)


def make_watermark_pattern(h: int, w: int, frame_width: int, epsilon: float) -> TriggerPattern:
    """Watermark: binary band mask applied with weight epsilon."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    return TriggerPattern(WATERMARK, frame_mask(h, w, frame_width).ravel(), float(epsilon), h, w)


def _check_images(X: np.ndarray, pattern: TriggerPattern) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    flat = X.reshape(-1, X.shape[-1]) if X.ndim == 2 else X.reshape(1, -1)
    if flat.shape[1] != pattern.mask.size:
        raise ValueError(
            f"image rows of length {flat.shape[1]} do not match a "
            f"{pattern.height}x{pattern.width} pattern"
        )
    return X


def apply_additive(X: np.ndarray, pattern: TriggerPattern) -> np.ndarray:
    """x_m = clamp(x + r_f, 0, 1); the sup-norm change never exceeds amplitude."""
    X = _check_images(X, pattern)
    return np.clip(X + pattern.mask, 0.0, 1.0)


def apply_watermark(X: np.ndarray, pattern: TriggerPattern) -> np.ndarray:
    """x_m = clamp(x + epsilon * mask, 0, 1); change bounded by epsilon."""
    X = _check_images(X, pattern)
    return np.clip(X + pattern.strength * pattern.mask, 0.0, 1.0)


@dataclass(frozen=True)
class BackdoorSpec:
    """Everything the attacker decides.

    The attacker never poisons samples of its own false label's class, so
    `excluded_class` always equals `false_label`.
    """

    pattern: TriggerPattern
    poison_fraction: float
    insertion_task: int
    target_task: int
    false_label: int
    poison_source: str = CURRENT_TASK
    excluded_class: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.poison_fraction <= 1.0:
            raise ValueError("poison_fraction must lie in [0, 1]")
        if self.poison_source not in (CURRENT_TASK, TARGET_TASK):
            raise ValueError(f"unknown poison source {self.poison_source!r}")
        if self.excluded_class is None:
            object.__setattr__(self, "excluded_class", self.false_label)
        elif self.excluded_class != self.false_label:
            raise ValueError("excluded_class must equal false_label")


@dataclass
class PoisonManifest:
    """Exact record of what was poisoned, exportable for audit."""

    indices: np.ndarray          # row positions inside the poisoned insertion task
    original_labels: np.ndarray
    assigned_labels: np.ndarray
    source_task: int

    def __len__(self) -> int:
        return len(self.indices)

    def to_table(self) -> str:
        buf = io.StringIO()
        buf.write("index\toriginal_label\tfalse_label\tsource_task\n")
        for i, orig, false in zip(self.indices, self.original_labels, self.assigned_labels):
            buf.write(f"{i}\t{orig}\t{false}\t{self.source_task}\n")
        return buf.getvalue()


def _round_count(fraction: float, size: int) -> int:
    return int(np.floor(fraction * size + 0.5))


def poison_train_set(
    seq: TaskSequence, spec: BackdoorSpec, rng: np.random.Generator
) -> tuple[TaskSequence, PoisonManifest]:
    """Inject tagged, falsely-labeled samples into one task's training data.

    current-task source: rows already inside the insertion task are tagged
    and relabeled in place. target-task source: rows drawn from the target
    task are tagged, relabeled, and appended to the insertion task. Every
    other task's arrays are reused untouched.
    """
    n_tasks = seq.n_tasks
    for t in (spec.insertion_task, spec.target_task):
        if not 1 <= t <= n_tasks:
            raise ValueError(f"task index {t} outside 1..{n_tasks}")

    source = seq.train[
        (spec.insertion_task if spec.poison_source == CURRENT_TASK else spec.target_task) - 1
    ]
    eligible = np.nonzero(source.y != spec.excluded_class)[0]
    if eligible.size == 0:
        raise ValueError("no eligible source samples once the excluded class is removed")
    n_poison = _round_count(spec.poison_fraction, len(source))
    if n_poison == 0:
        warnings.warn("poison fraction rounds to zero samples; sequence unchanged")
        manifest = PoisonManifest(
            np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64), source.task_id,
        )
        return seq, manifest
    if n_poison > eligible.size:
        raise ValueError(
            f"poison count {n_poison} exceeds the {eligible.size} eligible source rows"
        )

    chosen = np.sort(rng.choice(eligible, size=n_poison, replace=False))
    tagged_rows = spec.pattern.apply(source.X[chosen])
    insertion = seq.train[spec.insertion_task - 1]

    if spec.poison_source == CURRENT_TASK:
        new_X = insertion.X.copy()
        new_y = insertion.y.copy()
        new_X[chosen] = tagged_rows
        new_y[chosen] = spec.false_label
        positions = chosen
    else:
        new_X = np.concatenate([insertion.X, tagged_rows])
        new_y = np.concatenate([insertion.y, np.full(n_poison, spec.false_label, dtype=np.int64)])
        positions = np.arange(len(insertion), len(insertion) + n_poison)

    poisoned_task = TaskData(
        X=new_X, y=new_y, task_id=insertion.task_id,
        class_names=insertion.class_names, angle=insertion.angle,
    )
    new_train = list(seq.train)
    new_train[spec.insertion_task - 1] = poisoned_task
    poisoned_seq = copy.copy(seq)
    poisoned_seq.train = new_train
    manifest = PoisonManifest(
        indices=positions,
        original_labels=source.y[chosen].copy(),
        assigned_labels=np.full(n_poison, spec.false_label, dtype=np.int64),
        source_task=source.task_id,
    )
    return poisoned_seq, manifest


def tag_eval_set(target_test: TaskData, spec: BackdoorSpec) -> TaskData:
    """Trigger-tag every test sample except the excluded class's.

    True labels are kept for accuracy accounting; the `tagged` mask marks
    the rows that carry the trigger for attack-success accounting.
    """
    tagged_mask = target_test.y != spec.excluded_class
    X = target_test.X.copy()
    if tagged_mask.any():
        X[tagged_mask] = spec.pattern.apply(X[tagged_mask])
    return TaskData(
        X=X, y=target_test.y.copy(), task_id=target_test.task_id,
        class_names=target_test.class_names, angle=target_test.angle,
        tagged=tagged_mask,
    )
