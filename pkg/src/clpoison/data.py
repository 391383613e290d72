"""Dataset ingestion and task-sequence construction for DIL/CIL protocols.

Three sources feed the same TaskSequence contract: IDX files (the classic
digit-image distribution format), a procedurally rendered digit corpus
(self-contained stand-in with the same geometry: 28x28 grayscale in [0,1],
dark borders), and synthetic Gaussian blobs for fast deterministic tests.
"""

from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
_MAX_DIM = 1 << 31
_MAX_ELEMENTS = 1 << 40


class IdxParseError(ValueError):
    pass


def parse_idx(blob: bytes) -> tuple[np.ndarray, str]:
    """Decode one IDX payload into (array, kind) with kind 'images' | 'labels'.

    Images come back as (n, h*w) float64 rows scaled to [0,1]; labels as int64.
    """
    if len(blob) < 4:
        raise IdxParseError("IDX payload shorter than the magic field")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic == IMAGE_MAGIC:
        ndim, kind = 3, "images"
    elif magic == LABEL_MAGIC:
        ndim, kind = 1, "labels"
    else:
        raise IdxParseError(f"bad IDX magic 0x{magic:08x}")

    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise IdxParseError("IDX header truncated before dimension sizes")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    count = 1
    for d in dims:  # plain ints; the product must not wrap
        count *= int(d)
    if any(d >= _MAX_DIM for d in dims) or count > _MAX_ELEMENTS:
        raise IdxParseError(f"IDX dimension overflow: {dims}")
    if len(blob) < header_len + count:
        raise IdxParseError(
            f"IDX payload truncated: expected {count} bytes, found {len(blob) - header_len}"
        )

    raw = np.frombuffer(blob, dtype=np.uint8, count=count, offset=header_len)
    if kind == "labels":
        return raw.astype(np.int64), kind
    n, h, w = dims
    return raw.reshape(n, h * w).astype(np.float64) / 255.0, kind


def _read_idx_file(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if path.suffix == ".gz" or blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    arr, _ = parse_idx(blob)
    return arr


def load_idx_dataset(directory: str | Path) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Load the four canonical IDX files (optionally gzipped) from a directory."""
    directory = Path(directory)
    out = []
    for stem in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                 "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
        for candidate in (directory / stem, directory / (stem + ".gz")):
            if candidate.exists():
                out.append(_read_idx_file(candidate))
                break
        else:
            raise FileNotFoundError(f"missing IDX file {stem}[.gz] under {directory}")
    return (out[0], out[1]), (out[2], out[3])


# ---------------------------------------------------------------------------
# Rendered digit corpus
# ---------------------------------------------------------------------------

def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One 28x28 grayscale digit in [0,1] with randomized font and geometry."""
    import cv2  # heavyweight; only needed for the rendered source

    canvas = np.zeros((56, 56), dtype=np.uint8)
    fonts = (cv2.FONT_HERSHEY_SIMPLEX, cv2.FONT_HERSHEY_DUPLEX, cv2.FONT_HERSHEY_COMPLEX)
    font = fonts[rng.integers(0, len(fonts))]
    scale = 1.3 + 0.35 * rng.uniform(-1.0, 1.0)
    thickness = int(rng.integers(1, 4))
    cv2.putText(canvas, str(int(digit)), (14, 42), font, scale, 255, thickness, cv2.LINE_AA)
    rot = cv2.getRotationMatrix2D((28, 28), float(rng.uniform(-12.0, 12.0)), 1.0)
    canvas = cv2.warpAffine(canvas, rot, (56, 56))

    ys, xs = np.nonzero(canvas > 12)
    if len(ys) == 0:
        return np.zeros((28, 28))
    glyph = canvas[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    side = max(glyph.shape) + 8
    boxed = np.zeros((side, side), dtype=np.uint8)
    y0 = (side - glyph.shape[0]) // 2
    x0 = (side - glyph.shape[1]) // 2
    boxed[y0:y0 + glyph.shape[0], x0:x0 + glyph.shape[1]] = glyph
    core = cv2.resize(boxed, (20, 20), interpolation=cv2.INTER_AREA)

    out = np.zeros((28, 28))
    dy, dx = rng.integers(-2, 3, size=2)
    out[4 + dy:24 + dy, 4 + dx:24 + dx] = core.astype(np.float64) / 255.0
    return np.clip(out, 0.0, 1.0)


def render_digit_corpus(
    n_train: int, n_test: int, rng: np.random.Generator
) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Class-balanced rendered train/test splits, deterministic per rng seed.

    Discrete rendering parameters occasionally reproduce a pixel-identical
    image, so test rows colliding with a train row are re-rendered until the
    splits are disjoint.
    """
    def build(n: int, taken: set[bytes] | None = None) -> tuple[np.ndarray, np.ndarray]:
        labels = np.arange(n) % 10
        images = []
        for d in labels:
            img = render_digit(d, rng).ravel()
            if taken is not None:
                for _ in range(100):
                    if hashlib.blake2b(img.tobytes(), digest_size=16).digest() not in taken:
                        break
                    img = render_digit(d, rng).ravel()
                else:
                    raise RuntimeError("could not render a test digit distinct from train")
            images.append(img)
        order = rng.permutation(n)
        return np.stack(images)[order], labels[order]

    train = build(n_train)
    return train, build(n_test, taken=fingerprint_rows(train[0]))


# ---------------------------------------------------------------------------
# Task sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Label-space semantics of a task sequence.

    DIL: every task shares one fixed label space of size classes_per_task.
    CIL: each task brings a fresh disjoint block; the head spans all blocks.
    """

    kind: str
    n_tasks: int
    classes_per_task: int

    def __post_init__(self):
        if self.kind not in ("DIL", "CIL"):
            raise ValueError(f"scenario kind must be DIL or CIL, got {self.kind!r}")

    @property
    def head_size(self) -> int:
        if self.kind == "DIL":
            return self.classes_per_task
        return self.classes_per_task * self.n_tasks

    def task_classes(self, task_id: int) -> np.ndarray:
        """Label values task `task_id` (1-based) may carry."""
        if self.kind == "DIL":
            return np.arange(self.classes_per_task)
        lo = (task_id - 1) * self.classes_per_task
        return np.arange(lo, lo + self.classes_per_task)


@dataclass
class TaskData:
    """One task's samples: rows in [0,1], integer labels, 1-based task id."""

    X: np.ndarray
    y: np.ndarray
    task_id: int
    class_names: np.ndarray
    angle: float | None = None
    tagged: np.ndarray | None = None  # eval-time trigger mask, None for train data

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"X and y disagree: X {self.X.shape}, y {self.y.shape}"
            )

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass
class TaskSequence:
    train: list[TaskData]
    test: list[TaskData]
    scenario: Scenario
    # Degenerate synthetic data (zero variance) legitimately duplicates rows
    # across splits; everything else must keep the fingerprint check on.
    check_disjoint: bool = True

    def __post_init__(self):
        validate_sequence(self)

    @property
    def n_tasks(self) -> int:
        return len(self.train)


def fingerprint_rows(X: np.ndarray) -> set[bytes]:
    return {
        hashlib.blake2b(np.ascontiguousarray(row).tobytes(), digest_size=16).digest()
        for row in X
    }


def validate_sequence(seq: TaskSequence) -> None:
    """Enforce the sequence contract; raises on any violation."""
    scenario = seq.scenario
    if len(seq.train) != len(seq.test) or len(seq.train) != scenario.n_tasks:
        raise ValueError("train/test task counts disagree with the scenario")
    for idx, (tr, te) in enumerate(zip(seq.train, seq.test), start=1):
        if tr.task_id != idx or te.task_id != idx:
            raise ValueError(f"task ids must be consecutive from 1, found {tr.task_id} at {idx}")
        allowed = set(scenario.task_classes(idx).tolist())
        for part in (tr, te):
            labels = set(np.unique(part.y).tolist())
            if not labels <= allowed:
                raise ValueError(
                    f"task {idx} carries labels {sorted(labels - allowed)} outside its space"
                )
    if scenario.kind == "CIL":
        seen: set[int] = set()
        for t in range(1, scenario.n_tasks + 1):
            block = set(scenario.task_classes(t).tolist())
            if seen & block:
                raise ValueError("CIL label blocks must be pairwise disjoint")
            seen |= block
    if seq.check_disjoint:
        train_prints = set().union(*(fingerprint_rows(t.X) for t in seq.train)) if seq.train else set()
        test_prints = set().union(*(fingerprint_rows(t.X) for t in seq.test)) if seq.test else set()
        if train_prints & test_prints:
            raise ValueError("train and test splits share fingerprinted samples")


def rotate_images(X: np.ndarray, angle_rad: float, side: int | None = None) -> np.ndarray:
    """Bilinear rotation about the image center; outside pixels become 0.

    Rows are flat square images. Angle 0 returns the input bitwise unchanged.
    """
    X = np.asarray(X, dtype=np.float64)
    if angle_rad == 0.0:
        return X.copy()
    n, d = X.shape
    side = side if side is not None else int(round(np.sqrt(d)))
    if side * side != d:
        raise ValueError(f"rows of length {d} are not square images")
    stack = X.reshape(n, side, side)
    rotated = ndimage.rotate(
        stack, np.degrees(angle_rad), axes=(1, 2), reshape=False,
        order=1, mode="constant", cval=0.0, prefilter=False,
    )
    return np.clip(rotated.reshape(n, d), 0.0, 1.0)


def sample_rotation_angles(n_tasks: int, rng: np.random.Generator) -> np.ndarray:
    """Task 1 gets angle 0; later tasks draw i.i.d. from the half-open (0, pi/3]."""
    angles = np.zeros(n_tasks)
    for t in range(1, n_tasks):
        angles[t] = (1.0 - rng.random()) * (np.pi / 3.0)
    return angles


def stratified_indices(y: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Pick `cap` indices with per-class counts proportional to prevalence."""
    y = np.asarray(y)
    if cap >= len(y):
        return np.arange(len(y))
    classes, counts = np.unique(y, return_counts=True)
    quota = counts * cap / len(y)
    take = np.floor(quota).astype(int)
    remainder = cap - take.sum()
    for i in np.argsort(-(quota - take))[:remainder]:
        take[i] += 1
    picked = []
    for cls, k in zip(classes, take):
        pool = np.nonzero(y == cls)[0]
        picked.append(rng.choice(pool, size=k, replace=False))
    return np.sort(np.concatenate(picked))


def build_rotation_sequence(
    train: tuple[np.ndarray, np.ndarray],
    test: tuple[np.ndarray, np.ndarray],
    n_tasks: int,
    rng: np.random.Generator,
    scenario_kind: str = "DIL",
    train_cap: int | None = None,
    test_cap: int | None = None,
) -> TaskSequence:
    """Each task is the full base problem under one random rotation.

    Task 1 is unrotated. Under CIL each task's labels shift into a fresh
    block of size classes_per_task.
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    Xtr, ytr = np.asarray(train[0], dtype=np.float64), np.asarray(train[1], dtype=np.int64)
    Xte, yte = np.asarray(test[0], dtype=np.float64), np.asarray(test[1], dtype=np.int64)
    classes = np.unique(ytr)
    scenario = Scenario(scenario_kind, n_tasks, len(classes))
    angles = sample_rotation_angles(n_tasks, rng)

    train_tasks, test_tasks = [], []
    for t in range(1, n_tasks + 1):
        offset = 0 if scenario.kind == "DIL" else (t - 1) * len(classes)
        task_parts = []
        for (X, y), cap in (((Xtr, ytr), train_cap), ((Xte, yte), test_cap)):
            idx = stratified_indices(y, cap, rng) if cap is not None else np.arange(len(y))
            task_parts.append(TaskData(
                X=rotate_images(X[idx], angles[t - 1]),
                y=y[idx] + offset,
                task_id=t,
                class_names=classes.copy(),
                angle=float(angles[t - 1]),
            ))
        train_tasks.append(task_parts[0])
        test_tasks.append(task_parts[1])
    return TaskSequence(train_tasks, test_tasks, scenario)


def build_split_sequence(
    train: tuple[np.ndarray, np.ndarray],
    test: tuple[np.ndarray, np.ndarray],
    classes_per_task: int,
    scenario_kind: str = "DIL",
    rng: np.random.Generator | None = None,
    train_cap: int | None = None,
    test_cap: int | None = None,
) -> TaskSequence:
    """Partition consecutive class blocks into tasks.

    Task k holds original classes [(k-1)*c, k*c). DIL relabels within-task
    to 0..c-1; CIL keeps the original (global) labels.
    """
    Xtr, ytr = np.asarray(train[0], dtype=np.float64), np.asarray(train[1], dtype=np.int64)
    Xte, yte = np.asarray(test[0], dtype=np.float64), np.asarray(test[1], dtype=np.int64)
    classes = np.unique(np.concatenate([ytr, yte]))
    n_classes = int(classes.max()) + 1
    if n_classes % classes_per_task != 0:
        raise ValueError(f"{n_classes} classes not divisible by {classes_per_task}")
    for split_name, yy in (("train", ytr), ("test", yte)):
        missing = sorted(set(range(n_classes)) - set(np.unique(yy).tolist()))
        if missing:
            raise ValueError(f"base {split_name} data is missing classes {missing}")
    if (train_cap is not None or test_cap is not None) and rng is None:
        raise ValueError("caps need an rng for the stratified draw")
    n_tasks = n_classes // classes_per_task
    scenario = Scenario(scenario_kind, n_tasks, classes_per_task)

    train_tasks, test_tasks = [], []
    for t in range(1, n_tasks + 1):
        block = np.arange((t - 1) * classes_per_task, t * classes_per_task)
        task_parts = []
        for (X, y), cap in (((Xtr, ytr), train_cap), ((Xte, yte), test_cap)):
            mask = np.isin(y, block)
            Xb, yb = X[mask], y[mask]
            if cap is not None and rng is not None:
                idx = stratified_indices(yb, cap, rng)
                Xb, yb = Xb[idx], yb[idx]
            labels = yb - block[0] if scenario.kind == "DIL" else yb
            task_parts.append(TaskData(
                X=Xb.copy(), y=labels, task_id=t, class_names=block.copy(),
            ))
        train_tasks.append(task_parts[0])
        test_tasks.append(task_parts[1])
    return TaskSequence(train_tasks, test_tasks, scenario)


@dataclass(frozen=True)
class BlobSpec:
    """Gaussian blob layout: means[t][c] is class c's center in task t.

    All means must lie in [0,1]^d; samples are clipped back into range.
    """

    means: tuple
    variance: float = 0.01
    n_train_per_class: int = 100
    n_test_per_class: int = 50
    scenario_kind: str = "DIL"


def make_synthetic_sequence(spec: BlobSpec, rng: np.random.Generator) -> TaskSequence:
    if spec.variance < 0:
        raise ValueError("variance must be non-negative")
    n_tasks = len(spec.means)
    classes_per_task = len(spec.means[0])
    scenario = Scenario(spec.scenario_kind, n_tasks, classes_per_task)
    std = np.sqrt(spec.variance)

    def draw(task_idx: int, per_class: int) -> TaskData:
        Xs, ys = [], []
        offset = 0 if scenario.kind == "DIL" else task_idx * classes_per_task
        for c, mean in enumerate(spec.means[task_idx]):
            mean = np.asarray(mean, dtype=np.float64)
            if mean.min() < 0 or mean.max() > 1:
                raise ValueError("blob means must lie in [0,1]")
            Xs.append(np.clip(mean + std * rng.standard_normal((per_class, mean.size)), 0.0, 1.0))
            ys.append(np.full(per_class, c + offset))
        return TaskData(
            X=np.concatenate(Xs), y=np.concatenate(ys),
            task_id=task_idx + 1, class_names=np.arange(classes_per_task),
        )

    train = [draw(t, spec.n_train_per_class) for t in range(n_tasks)]
    test = [draw(t, spec.n_test_per_class) for t in range(n_tasks)]
    return TaskSequence(train, test, scenario, check_disjoint=spec.variance > 0)
