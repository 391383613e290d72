"""Fast property suite: training-free checks of the core numeric contracts.

Each check returns (name, passed, detail); the CLI `verify` subcommand and
the acceptance tests both run this list. Everything is seeded, finishes in
well under two minutes, and avoids the image-rendering path entirely.
"""

from __future__ import annotations

import os
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .backdoor import (
    CURRENT_TASK,
    TARGET_TASK,
    BackdoorSpec,
    apply_additive,
    apply_watermark,
    make_frame_pattern,
    make_watermark_pattern,
    poison_train_set,
)
from .config import ExperimentConfig
from .data import BlobSpec, TaskData, make_synthetic_sequence
from .harness import attack_success_rate, run_experiment
from .models import MlpClassifier, SoftTargets, Vae, cross_entropy, softmax
from .params import ParamSet
from .regularization import EWC, ImportanceState, compute_fisher, penalty
from .replay import ReplayBatch, mix_weights
from .report import comparable_bytes, write_report


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def check_gradient_agreement() -> CheckResult:
    """grad_check <= 1e-4 relative error across 100 random loss instances."""
    rng = np.random.default_rng(20240)
    worst = 0.0
    for i in range(100):
        kind = i % 5
        if kind == 0:  # hard-label cross-entropy through a 2-layer net
            m = MlpClassifier(4, 3, hidden=(6,), rng=rng)
            X = rng.random((5, 4))
            y = rng.integers(0, 3, 5)
            err = ad.grad_check(lambda pv: cross_entropy(m.forward(pv, X), y), m.params)
        elif kind == 1:  # soft-target cross-entropy with a masked head
            m = MlpClassifier(3, 4, hidden=(), rng=rng)
            X = rng.random((4, 3))
            active = np.array([True, True, False, True])
            probs = rng.random((4, 4)) * active
            probs /= probs.sum(axis=1, keepdims=True)
            err = ad.grad_check(
                lambda pv: cross_entropy(m.forward(pv, X), probs, active=active), m.params
            )
        elif kind == 2:  # full VAE loss (reconstruction + KL)
            v = Vae(6, latent_dim=2, hidden=5, rng=rng)
            X = rng.random((3, 6))
            eps = rng.standard_normal((3, 2))
            err = ad.grad_check(v.loss_fn(X, eps), v.params)
        elif kind == 3:  # quadratic drift penalty over two history pairs
            p = ParamSet({"w": rng.standard_normal((3, 2)), "b": rng.standard_normal(2)})
            state = ImportanceState(EWC, [
                (p.map(lambda t: np.abs(rng.standard_normal(t.shape))),
                 p.map(lambda t: rng.standard_normal(t.shape)))
                for _ in range(2)
            ])
            err = ad.grad_check(lambda pv: penalty(pv, state, 2.5), p)
        else:  # mixed current + replay loss
            m = MlpClassifier(4, 3, hidden=(5,), rng=rng)
            Xc = rng.random((4, 4))
            yc = rng.integers(0, 3, 4)
            Xr = rng.random((4, 4))
            probs = rng.random((4, 3))
            probs /= probs.sum(axis=1, keepdims=True)

            def mixed(pv):
                cur = cross_entropy(m.forward(pv, Xc), yc)
                rep = cross_entropy(m.forward(pv, Xr), SoftTargets(probs))
                return ad.add(ad.mul(cur, 1.0 / 3.0), ad.mul(rep, 2.0 / 3.0))

            err = ad.grad_check(mixed, m.params)
        worst = max(worst, err)
    return CheckResult("gradient-agreement", worst <= 1e-4, f"max relative error {worst:.2e}")


def check_mix_weights() -> CheckResult:
    ok = True
    for t in range(1, 11):
        cur, rep = mix_weights(t)
        ok &= cur == 1.0 / t and rep == 1.0 - 1.0 / t and cur + rep == 1.0
    ok &= mix_weights(1) == (1.0, 0.0) and mix_weights(2) == (0.5, 0.5)
    return CheckResult("mix-weights", bool(ok), "exact (1/T, 1-1/T) for T in 1..10")


def check_penalty_cases() -> CheckResult:
    theta = ParamSet({"w": np.array([3.0, -1.0])})
    anchor = theta.copy()
    importance = ParamSet({"w": np.array([2.0, 5.0])})
    zero_at_anchor = float(penalty(theta, ImportanceState(EWC, [(importance, anchor)]), 7.0))
    zero_importance = float(penalty(
        ParamSet({"w": np.array([9.0, 9.0])}),
        ImportanceState(EWC, [(importance.zeros_like(), anchor)]), 7.0,
    ))
    hand = float(penalty(
        ParamSet({"w": np.array([1.0, 1.0])}),
        ImportanceState(EWC, [(ParamSet({"w": np.array([1.0, 2.0])}),
                               ParamSet({"w": np.array([0.0, 0.0])}))]),
        0.5,
    ))
    ok = zero_at_anchor == 0.0 and zero_importance == 0.0 and hand == 1.5
    return CheckResult(
        "penalty-cases", ok,
        f"anchor->{zero_at_anchor}, zero-I->{zero_importance}, hand->{hand} (want 1.5)",
    )


def check_injection() -> CheckResult:
    """Exact poison counts and class exclusion over 200 random attack specs."""
    rng = np.random.default_rng(99)
    for trial in range(200):
        n_tasks = int(rng.integers(2, 4))
        classes = int(rng.integers(2, 5))
        dims = 16
        means = tuple(
            tuple(rng.uniform(0.2, 0.8, dims) for _ in range(classes))
            for _ in range(n_tasks)
        )
        seq = make_synthetic_sequence(
            BlobSpec(means, variance=0.005, n_train_per_class=int(rng.integers(10, 30)),
                     n_test_per_class=5), rng,
        )
        false_label = int(rng.integers(0, classes))
        source_mode = CURRENT_TASK if rng.random() < 0.5 else TARGET_TASK
        spec = BackdoorSpec(
            pattern=make_frame_pattern(4, 4, int(rng.integers(0, 3)), float(rng.random() * 0.05)),
            poison_fraction=float(rng.random() * 0.3),
            insertion_task=n_tasks,
            target_task=1,
            false_label=false_label,
            poison_source=source_mode,
        )
        source_task = seq.train[(n_tasks if source_mode == CURRENT_TASK else 1) - 1]
        expected = int(np.floor(spec.poison_fraction * len(source_task) + 0.5))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            poisoned, manifest = poison_train_set(seq, spec, rng)
        if len(manifest) != expected:
            return CheckResult(
                "injection-exactness", False,
                f"trial {trial}: got {len(manifest)} poisoned rows, expected {expected}",
            )
        if np.any(manifest.original_labels == false_label):
            return CheckResult(
                "injection-exactness", False,
                f"trial {trial}: a poisoned row originated from the excluded class",
            )
        for t in range(1, n_tasks + 1):
            if t == spec.insertion_task:
                continue
            if poisoned.train[t - 1].X is not seq.train[t - 1].X:
                return CheckResult(
                    "injection-exactness", False,
                    f"trial {trial}: non-insertion task {t} was copied or altered",
                )
    return CheckResult("injection-exactness", True, "200 random specs: counts and exclusion hold")


def check_imperceptibility() -> CheckResult:
    """sup-norm bound on 1000 random images under both trigger kinds."""
    rng = np.random.default_rng(7)
    frame = make_frame_pattern(28, 28, 5, 0.03)
    mark = make_watermark_pattern(28, 28, 5, 0.01)
    X = rng.random((1000, 784))
    d_frame = np.abs(apply_additive(X, frame) - X).max()
    d_mark = np.abs(apply_watermark(X, mark) - X).max()
    ones = np.ones((4, 784))
    clamped = apply_watermark(ones, make_watermark_pattern(28, 28, 5, 0.1))
    interior_frame = frame.mask.reshape(28, 28)[5:-5, 5:-5]
    ok = (
        d_frame <= 0.03 + 1e-15
        and d_mark <= 0.01 + 1e-15
        and np.array_equal(clamped, ones)
        and not interior_frame.any()
    )
    return CheckResult(
        "imperceptibility", bool(ok),
        f"frame sup-change {d_frame:.4f} <= 0.03; watermark {d_mark:.4f} <= 0.01; "
        "saturated images unchanged",
    )


def check_fisher_bruteforce() -> CheckResult:
    """Importance matches an independent per-sample squared-gradient loop."""
    rng_data = np.random.default_rng(5)
    model = MlpClassifier(4, 2, hidden=(), rng=rng_data)  # 4*2 + 2 = 10 parameters
    X = rng_data.random((30, 4))
    task = TaskData(X=X, y=rng_data.integers(0, 2, 30), task_id=1, class_names=np.arange(2))

    fisher = compute_fisher(model, task, 12, np.random.default_rng(77))

    # Brute force: replicate the documented sampling order, then accumulate
    # squared per-sample gradients in a plain loop.
    oracle_rng = np.random.default_rng(77)
    picked = oracle_rng.choice(len(task), size=12, replace=False)
    acc = model.params.zeros_like()
    for i in picked:
        x = task.X[i:i + 1]
        probs = softmax(model.classify(x))[0]
        label = int(oracle_rng.choice(2, p=probs))
        _, grads = ad.forward_backward(
            model.params,
            lambda pv: cross_entropy(model.forward(pv, x), np.array([label])),
        )
        acc = acc.combine(grads, lambda t, g: t + g * g)
    brute = acc.map(lambda t: t / 12)
    diff = float(np.abs(fisher.flatten() - brute.flatten()).max())
    return CheckResult("fisher-bruteforce", diff <= 1e-10, f"max abs difference {diff:.2e}")


def check_asr_cases() -> CheckResult:
    all_hit = attack_success_rate(np.zeros(6, dtype=int), np.ones(6, dtype=bool), 0)
    none_hit = attack_success_rate(np.ones(6, dtype=int), np.ones(6, dtype=bool), 0)
    try:
        attack_success_rate(np.zeros(3, dtype=int), np.zeros(3, dtype=bool), 0)
        empty_raises = False
    except ValueError:
        empty_raises = True
    ok = all_hit == 1.0 and none_hit == 0.0 and empty_raises
    return CheckResult(
        "attack-success-rate", ok,
        "all->1.0, none->0.0, empty mask rejected "
        "(full-scale references: 0.98 hard replay, 1.00 distillation)",
    )


_MICRO_CONFIG = {
    "dataset.source": "synthetic",
    "dataset.n_tasks": 2,
    "dataset.classes_per_task": 2,
    "dataset.train_cap": 80,
    "dataset.test_cap": 40,
    "learner.kind": "ewc",
    "learner.epochs": 1,
    "learner.batch": 32,
    "learner.fisher_samples": 10,
    "attack.enabled": True,
    "attack.frame_width": 1,
    "attack.fraction": 0.1,
    "attack.insertion_task": 2,
    "attack.target_task": 1,
    "attack.false_label": 0,
    "attack.source": "current",
    "eval.runs": 1,
    "eval.seed": 321,
}


def check_determinism() -> CheckResult:
    """Identical config + seed => identical result tables (micro scale)."""
    cfg = ExperimentConfig(dict(_MICRO_CONFIG))
    blobs = []
    for _ in range(2):
        report = run_experiment(cfg)
        with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as fh:
            path = fh.name
        try:
            write_report(report, path)
            blobs.append(comparable_bytes(path))
        finally:
            os.unlink(path)
    ok = blobs[0] == blobs[1]
    return CheckResult("end-to-end-determinism", ok, f"{len(blobs[0])} comparable bytes equal")


CHECKS = (
    check_gradient_agreement,
    check_mix_weights,
    check_penalty_cases,
    check_injection,
    check_imperceptibility,
    check_fisher_bruteforce,
    check_asr_cases,
    check_determinism,
)


def run_all(verbose: bool = False) -> list[CheckResult]:
    results = []
    for check in CHECKS:
        result = check()
        results.append(result)
        if verbose:
            status = "PASS" if result.passed else "FAIL"
            print(f"[{status}] {result.name}: {result.detail}")
    return results
