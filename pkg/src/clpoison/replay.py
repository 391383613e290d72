"""Generative-replay learners: hard-label replay and soft-target distillation.

While training task t, pseudo-samples drawn from a frozen snapshot of the
generator stand in for all earlier tasks. The solver's loss mixes the
current-task term with weight 1/T and the replay (or distillation) term with
weight 1 - 1/T, T being the number of tasks seen so far.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import TaskData
from .models import MlpClassifier, SoftTargets, Vae, cross_entropy, softmax, vae_generate
from .optim import OptimizerConfig, init_state, optimizer_step, shuffled_batches

HARD = "hard"  # replay with argmax labels
SOFT = "soft"  # distillation with full predictive rows


def mix_weights(tasks_seen: int) -> tuple[float, float]:
    """(current, replay) loss weights: (1/T, 1 - 1/T)."""
    if tasks_seen < 1:
        raise ValueError("tasks_seen must be >= 1")
    return 1.0 / tasks_seen, 1.0 - 1.0 / tasks_seen


def _params_fingerprint(*models) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for m in models:
        h.update(m.params.flatten().tobytes())
    return h.digest()


@dataclass
class ReplaySnapshot:
    """Frozen copies of the generator and solver taken at a task boundary."""

    generator: Vae
    solver: MlpClassifier
    tasks_seen: int
    active_classes: np.ndarray  # head mask of classes the snapshot knows
    fingerprint: bytes = b""

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = _params_fingerprint(self.generator, self.solver)

    def check_unchanged(self) -> None:
        if _params_fingerprint(self.generator, self.solver) != self.fingerprint:
            raise RuntimeError("replay snapshot was mutated after capture")


@dataclass
class ReplayBatch:
    """Generated inputs plus targets produced entirely by the frozen solver."""

    X: np.ndarray
    targets: np.ndarray | SoftTargets

    def __len__(self) -> int:
        return self.X.shape[0]


def make_replay_batch(
    snap: ReplaySnapshot, n: int, mode: str, rng: np.random.Generator
) -> ReplayBatch:
    if mode not in (HARD, SOFT):
        raise ValueError(f"unknown replay mode {mode!r}")
    X = vae_generate(snap.generator, n, rng)
    if n == 0:
        empty = np.zeros(0, dtype=np.int64) if mode == HARD else SoftTargets(
            np.zeros((0, snap.solver.num_classes)))
        return ReplayBatch(X, empty)
    logits = snap.solver.classify(X)
    if mode == HARD:
        masked = np.where(snap.active_classes, logits, -np.inf)
        return ReplayBatch(X, masked.argmax(axis=1))
    return ReplayBatch(X, SoftTargets(softmax(logits, active=snap.active_classes)))


def composed_loss(
    model: MlpClassifier,
    params,
    current: tuple[np.ndarray, np.ndarray],
    replay: ReplayBatch | None,
    tasks_seen: int,
    active: np.ndarray | None = None,
):
    """(1/T) * current-task loss + (1 - 1/T) * replay/distillation loss."""
    w_cur, w_rep = mix_weights(tasks_seen)
    Xc, yc = current
    loss = ad.mul(cross_entropy(model.forward(params, Xc), yc, active=active), w_cur)
    if tasks_seen == 1:
        if replay is not None and len(replay) > 0:
            raise ValueError("replay batch must be empty on the first task")
        return loss
    if replay is None or len(replay) == 0:
        raise ValueError("tasks beyond the first need a replay batch")
    replay_term = cross_entropy(model.forward(params, replay.X), replay.targets, active=active)
    return ad.add(loss, ad.mul(replay_term, w_rep))


@dataclass(frozen=True)
class ReplayHyper:
    epochs: int = 4
    batch_size: int = 128
    solver_lr: float = 1e-3
    vae_lr: float = 1e-3
    optimizer: str = "adam"


def train_task_generative(
    solver: MlpClassifier,
    vae: Vae,
    task: TaskData,
    tasks_seen: int,
    mode: str,
    hyper: ReplayHyper,
    rng: np.random.Generator,
    snapshot: ReplaySnapshot | None = None,
    active: np.ndarray | None = None,
) -> tuple[MlpClassifier, Vae, ReplaySnapshot]:
    """One task of joint solver+generator training with generated rehearsal.

    Per current-task minibatch of size B, a replay batch of size B is drawn
    from the snapshot; the solver minimizes the mixed loss and the VAE is
    refit on current plus replayed inputs (inputs only). A fresh frozen
    snapshot is captured at the end.
    """
    if tasks_seen > 1 and snapshot is None:
        raise ValueError("a snapshot is required once earlier tasks exist")
    opt_solver = OptimizerConfig(kind=hyper.optimizer, lr=hyper.solver_lr)
    opt_vae = OptimizerConfig(kind=hyper.optimizer, lr=hyper.vae_lr)
    s_params = solver.params.copy()
    v_params = vae.params.copy()
    s_state = init_state(s_params, opt_solver)
    v_state = init_state(v_params, opt_vae)
    # Separate streams so paired experiments that differ only in a few
    # training rows still draw identical replay batches and VAE noise.
    shuffle_rng, gen_rng = rng.spawn(2)

    for _ in range(hyper.epochs):
        for idx in shuffled_batches(len(task), hyper.batch_size, shuffle_rng):
            Xb, yb = task.X[idx], task.y[idx]
            replay = (
                make_replay_batch(snapshot, len(Xb), mode, gen_rng)
                if tasks_seen > 1 else None
            )

            def solver_loss(pv):
                return composed_loss(solver, pv, (Xb, yb), replay, tasks_seen, active=active)

            _, s_grads = ad.forward_backward(s_params, solver_loss)
            s_params, s_state = optimizer_step(s_params, s_grads, s_state, opt_solver)

            vae_inputs = Xb if replay is None else np.concatenate([Xb, replay.X])
            eps = gen_rng.standard_normal((vae_inputs.shape[0], vae.latent_dim))
            _, v_grads = ad.forward_backward(v_params, vae.loss_fn(vae_inputs, eps))
            v_params, v_state = optimizer_step(v_params, v_grads, v_state, opt_vae)

    new_solver = MlpClassifier(solver.input_dim, solver.num_classes, solver.hidden, params=s_params)
    new_vae = Vae(vae.input_dim, vae.latent_dim, vae.hidden, params=v_params)
    head_mask = (
        np.ones(new_solver.num_classes, dtype=bool) if active is None else np.asarray(active, bool)
    )
    new_snapshot = ReplaySnapshot(
        generator=new_vae.copy(), solver=new_solver.copy(),
        tasks_seen=tasks_seen, active_classes=head_mask,
    )
    return new_solver, new_vae, new_snapshot


class GenerativeReplayLearner:
    """Harness-facing wrapper tracking the snapshot, task count, and head mask."""

    def __init__(
        self,
        mode: str,
        input_dim: int,
        head_size: int,
        hyper: ReplayHyper,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (256, 256),
        latent_dim: int = 32,
        vae_hidden: int = 256,
    ):
        if mode not in (HARD, SOFT):
            raise ValueError(f"unknown replay mode {mode!r}")
        self.mode = mode
        self.solver = MlpClassifier(input_dim, head_size, hidden, rng=rng)
        self.vae = Vae(input_dim, latent_dim=latent_dim, hidden=vae_hidden, rng=rng)
        self.hyper = hyper
        self.snapshot: ReplaySnapshot | None = None
        self.tasks_seen = 0
        self.seen_classes: set[int] = set()

    @property
    def active(self) -> np.ndarray:
        mask = np.zeros(self.solver.num_classes, dtype=bool)
        mask[sorted(self.seen_classes)] = True
        return mask

    def train_task(self, task: TaskData, rng: np.random.Generator) -> None:
        self.tasks_seen += 1
        self.seen_classes.update(np.unique(task.y).tolist())
        self.solver, self.vae, self.snapshot = train_task_generative(
            self.solver, self.vae, task, self.tasks_seen, self.mode,
            self.hyper, rng, snapshot=self.snapshot, active=self.active,
        )

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.solver.predict(X, active=self.active)
