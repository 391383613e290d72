"""Regularization-based sequential learners: EWC, online EWC, and SI.

All three minimize the task loss plus a quadratic drift penalty
lambda * sum_i I_i (theta_i - theta*_i)^2 anchored at previously consolidated
parameters; they differ only in how the importance I is computed and how it
is carried across tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import TaskData
from .models import MlpClassifier, cross_entropy, softmax
from .optim import OptimizerConfig, init_state, optimizer_step, shuffled_batches
from .params import ParamSet

EWC = "ewc"
ONLINE_EWC = "online_ewc"
SI = "si"
METHODS = (EWC, ONLINE_EWC, SI)


@dataclass
class SiAccumulator:
    """Per-parameter path integral for one task, reset at task boundaries."""

    omega: ParamSet
    theta_start: ParamSet

    @classmethod
    def fresh(cls, params: ParamSet) -> "SiAccumulator":
        return cls(omega=params.zeros_like(), theta_start=params.copy())

    def accumulate(self, grads: ParamSet, delta: ParamSet) -> None:
        # omega_i += -g_i * dtheta_i; one plain step gives lr * g_i^2 >= 0
        self.omega = self.omega.combine(grads.combine(delta, lambda g, d: -g * d),
                                        lambda o, inc: o + inc)


@dataclass
class ImportanceState:
    """Importance/anchor pairs. EWC keeps one pair per completed task;
    online EWC and SI keep a single consolidated pair."""

    method: str
    pairs: list[tuple[ParamSet, ParamSet]] = field(default_factory=list)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for importance, anchor in self.pairs:
            importance.check_aligned(anchor)
            if any(t.min(initial=0.0) < 0 for _, t in importance.items()):
                raise ValueError("importance values must be non-negative")


def penalty(params, state: ImportanceState, lam: float):
    """lambda * sum over history pairs of sum_i I_i (theta_i - theta*_i)^2.

    Works on tape Vars during training and on plain arrays for inspection.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    total = None
    for importance, anchor in state.pairs:
        for name in importance:
            drift = ad.square(ad.sub(params[name], anchor[name]))
            term = ad.vsum(ad.mul(drift, importance[name]))
            total = term if total is None else ad.add(total, term)
    if total is None:
        return np.float64(0.0)
    return ad.mul(total, lam)


def compute_fisher(
    model: MlpClassifier,
    data: TaskData,
    n_samples: int,
    rng: np.random.Generator,
    active: np.ndarray | None = None,
) -> ParamSet:
    """Diagonal empirical Fisher: mean over sampled inputs of the squared
    gradient of log p(yhat | x), with yhat drawn from the model's own
    predictive distribution."""
    if len(data) == 0:
        raise ValueError("cannot estimate importance from an empty task")
    n_samples = min(n_samples, len(data))
    picked = rng.choice(len(data), size=n_samples, replace=False)
    total = model.params.zeros_like()
    for i in picked:
        x = data.X[i:i + 1]
        probs = softmax(model.classify(x), active=active)[0]
        label = int(rng.choice(probs.size, p=probs))
        _, grads = ad.forward_backward(
            model.params,
            lambda pv: cross_entropy(model.forward(pv, x), np.array([label]), active=active),
        )
        total = total.combine(grads, lambda t, g: t + g * g)
    return total.map(lambda t: t / n_samples)


def si_fold(acc: SiAccumulator, theta_end: ParamSet, xi: float) -> ParamSet:
    """Convert a task's path integral into an importance increment:
    omega_i / ((theta_end_i - theta_start_i)^2 + xi)."""
    if xi <= 0:
        raise ValueError("xi must be positive")
    delta = theta_end.combine(acc.theta_start, lambda a, b: a - b)
    folded = acc.omega.combine(delta, lambda o, d: o / (d * d + xi))
    # Negative path contributions are clipped; importance stays >= 0.
    return folded.map(lambda t: np.maximum(t, 0.0))


def consolidate(
    state: ImportanceState,
    new_importance: ParamSet,
    current_params: ParamSet,
    gamma: float = 1.0,
) -> ImportanceState:
    """Fold a finished task's importance estimate into the state.

    EWC appends an (I, theta*) pair; online EWC decays and adds into its
    single pair; SI adds its (already folded) increment into its single pair.
    The first consolidation yields I == new_importance for every method.
    """
    anchor = current_params.copy()
    if state.method == EWC:
        return ImportanceState(EWC, [*state.pairs, (new_importance.copy(), anchor)])
    if not state.pairs:
        merged = new_importance.copy()
    elif state.method == ONLINE_EWC:
        merged = state.pairs[0][0].combine(new_importance, lambda old, new: gamma * old + new)
    else:  # SI
        merged = state.pairs[0][0].combine(new_importance, lambda old, new: old + new)
    return ImportanceState(state.method, [(merged, anchor)])


@dataclass(frozen=True)
class RegHyper:
    lambda_: float = 100.0
    epochs: int = 4
    batch_size: int = 128
    lr: float = 1e-3
    optimizer: str = "adam"
    fisher_samples: int = 500
    gamma: float = 1.0   # online EWC decay
    xi: float = 0.1      # SI damping


def train_task_regularized(
    model: MlpClassifier,
    state: ImportanceState,
    task: TaskData,
    hyper: RegHyper,
    rng: np.random.Generator,
    active: np.ndarray | None = None,
) -> tuple[MlpClassifier, ImportanceState]:
    """Minibatch-train on one task under the drift penalty, then consolidate
    importance from this task's data. Returns fresh (model', state')."""
    opt_cfg = OptimizerConfig(kind=hyper.optimizer, lr=hyper.lr)
    params = model.params.copy()
    opt_state = init_state(params, opt_cfg)
    si_acc = SiAccumulator.fresh(params) if state.method == SI else None
    use_penalty = hyper.lambda_ > 0 and bool(state.pairs)
    # Separate shuffle and importance-sampling streams keep paired runs in step.
    shuffle_rng, fisher_rng = rng.spawn(2)

    for _ in range(hyper.epochs):
        for idx in shuffled_batches(len(task), hyper.batch_size, shuffle_rng):
            Xb, yb = task.X[idx], task.y[idx]

            def loss_fn(pv):
                loss = cross_entropy(model.forward(pv, Xb), yb, active=active)
                if use_penalty:
                    loss = ad.add(loss, penalty(pv, state, hyper.lambda_))
                return loss

            _, grads = ad.forward_backward(params, loss_fn)
            new_params, opt_state = optimizer_step(params, grads, opt_state, opt_cfg)
            if si_acc is not None:
                si_acc.accumulate(grads, new_params.combine(params, lambda a, b: a - b))
            params = new_params

    trained = MlpClassifier(model.input_dim, model.num_classes, model.hidden, params=params)
    if state.method == SI:
        increment = si_fold(si_acc, params, hyper.xi)
    else:
        increment = compute_fisher(trained, task, hyper.fisher_samples, fisher_rng, active=active)
    return trained, consolidate(state, increment, params, gamma=hyper.gamma)


class RegularizedLearner:
    """Harness-facing wrapper: owns the model, the importance state, and the
    head mask bookkeeping across a task sequence."""

    def __init__(
        self,
        method: str,
        input_dim: int,
        head_size: int,
        hyper: RegHyper,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (256, 256),
    ):
        self.model = MlpClassifier(input_dim, head_size, hidden, rng=rng)
        self.state = ImportanceState(method)
        self.hyper = hyper
        self.seen_classes: set[int] = set()

    @property
    def active(self) -> np.ndarray:
        mask = np.zeros(self.model.num_classes, dtype=bool)
        mask[sorted(self.seen_classes)] = True
        return mask

    def train_task(self, task: TaskData, rng: np.random.Generator) -> None:
        self.seen_classes.update(np.unique(task.y).tolist())
        self.model, self.state = train_task_regularized(
            self.model, self.state, task, self.hyper, rng, active=self.active,
        )

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict(X, active=self.active)
