"""First-order optimizers over ParamSets: plain gradient steps and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamSet


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"  # "adam" | "sgd"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class OptimizerState:
    step_count: int = 0
    m: ParamSet | None = None
    v: ParamSet | None = None
    extras: dict = field(default_factory=dict)


def init_state(params: ParamSet, cfg: OptimizerConfig) -> OptimizerState:
    if cfg.kind == "sgd":
        return OptimizerState()
    return OptimizerState(m=params.zeros_like(), v=params.zeros_like())


def shuffled_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield index arrays covering 0..n-1 once, in rng-shuffled order."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def optimizer_step(
    params: ParamSet,
    grads: ParamSet,
    state: OptimizerState,
    cfg: OptimizerConfig,
) -> tuple[ParamSet, OptimizerState]:
    """One update; returns fresh (params', state'), inputs untouched.

    sgd computes exactly theta - lr * g. adam uses bias-corrected moments.
    """
    params.check_aligned(grads)
    if cfg.kind == "sgd":
        new = params.combine(grads, lambda t, g: t - cfg.lr * g)
        return new, OptimizerState(step_count=state.step_count + 1)

    if state.m is None or state.v is None:
        raise ValueError("adam state not initialized for this ParamSet; call init_state")
    params.check_aligned(state.m)
    t = state.step_count + 1
    m_new, v_new, out = {}, {}, {}
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, theta in params.items():
        g = grads[name]
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        out[name] = theta - cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        m_new[name] = m
        v_new[name] = v
    return ParamSet(out), OptimizerState(step_count=t, m=ParamSet(m_new), v=ParamSet(v_new))
