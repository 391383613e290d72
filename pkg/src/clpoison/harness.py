"""Experiment orchestration: (learner x scenario x attack) over seeds.

When an attack is configured, every run trains a paired clean twin from the
same initialization, data, and rng streams, so the no-attack column and the
attack column differ only by the poisoned rows.
"""

from __future__ import annotations

import time

import numpy as np

from . import data as data_mod
from .backdoor import (
    CURRENT_TASK,
    TARGET_TASK,
    BackdoorSpec,
    PoisonManifest,
    make_frame_pattern,
    make_watermark_pattern,
    poison_train_set,
    tag_eval_set,
)
from .config import REPLAY_KINDS, ExperimentConfig
from .data import TaskSequence
from .regularization import RegHyper, RegularizedLearner
from .replay import HARD, SOFT, GenerativeReplayLearner, ReplayHyper
from .report import ArmResult, ExperimentReport


class ExperimentError(RuntimeError):
    """A run failed; `completed` holds the runs that finished before it."""

    def __init__(self, message: str, completed: list):
        super().__init__(message)
        self.completed = completed


def build_sequence(cfg: ExperimentConfig, rng: np.random.Generator) -> TaskSequence:
    source = cfg["dataset.source"]
    scenario = cfg["dataset.scenario"]
    if source == "synthetic":
        dims = 16
        means = tuple(
            tuple(rng.uniform(0.1, 0.9, size=dims) for _ in range(cfg["dataset.classes_per_task"]))
            for _ in range(cfg["dataset.n_tasks"])
        )
        spec = data_mod.BlobSpec(
            means=means, variance=0.01,
            n_train_per_class=(cfg["dataset.train_cap"] or 200) // cfg["dataset.classes_per_task"],
            n_test_per_class=(cfg["dataset.test_cap"] or 100) // cfg["dataset.classes_per_task"],
            scenario_kind=scenario,
        )
        return data_mod.make_synthetic_sequence(spec, rng)

    if source == "mnist":
        train, test = data_mod.load_idx_dataset(cfg["dataset.path"])
    else:
        train, test = data_mod.render_digit_corpus(
            cfg["dataset.base_train"], cfg["dataset.base_test"], rng
        )

    if cfg["dataset.benchmark"] == "rotation":
        return data_mod.build_rotation_sequence(
            train, test, cfg["dataset.n_tasks"], rng, scenario_kind=scenario,
            train_cap=cfg["dataset.train_cap"], test_cap=cfg["dataset.test_cap"],
        )
    return data_mod.build_split_sequence(
        train, test, cfg["dataset.classes_per_task"], scenario_kind=scenario, rng=rng,
        train_cap=cfg["dataset.train_cap"], test_cap=cfg["dataset.test_cap"],
    )


def make_backdoor_spec(cfg: ExperimentConfig, image_side: int = 28) -> BackdoorSpec | None:
    if not cfg["attack.enabled"]:
        return None
    if cfg["attack.kind"] == "frame":
        pattern = make_frame_pattern(
            image_side, image_side, cfg["attack.frame_width"], cfg["attack.amplitude"]
        )
    else:
        pattern = make_watermark_pattern(
            image_side, image_side, cfg["attack.frame_width"], cfg["attack.epsilon"]
        )
    return BackdoorSpec(
        pattern=pattern,
        poison_fraction=cfg["attack.fraction"],
        insertion_task=cfg["attack.insertion_task"],
        target_task=cfg["attack.target_task"],
        false_label=cfg["attack.false_label"],
        poison_source=CURRENT_TASK if cfg["attack.source"] == "current" else TARGET_TASK,
    )


def make_learner(cfg: ExperimentConfig, seq: TaskSequence, rng: np.random.Generator):
    kind = cfg["learner.kind"]
    input_dim = seq.train[0].X.shape[1]
    head = seq.scenario.head_size
    if kind in REPLAY_KINDS:
        hyper = ReplayHyper(
            epochs=cfg["learner.epochs"], batch_size=cfg["learner.batch"],
            solver_lr=cfg["learner.lr"],
            vae_lr=cfg["learner.vae_lr"] or cfg["learner.lr"],
        )
        return GenerativeReplayLearner(
            HARD if kind == "dgr" else SOFT, input_dim, head, hyper, rng,
            hidden=cfg.hidden_widths, latent_dim=cfg["learner.latent_dim"],
            vae_hidden=cfg["learner.vae_hidden"],
        )
    hyper = RegHyper(
        lambda_=cfg["learner.lambda"], epochs=cfg["learner.epochs"],
        batch_size=cfg["learner.batch"], lr=cfg["learner.lr"],
        fisher_samples=cfg["learner.fisher_samples"],
        gamma=cfg["learner.gamma"], xi=cfg["learner.xi"],
    )
    return RegularizedLearner(kind, input_dim, head, hyper, rng, hidden=cfg.hidden_widths)


def attack_success_rate(
    predictions: np.ndarray, tagged_mask: np.ndarray, false_label: int
) -> float:
    """Fraction of trigger-tagged samples predicted exactly as the false label."""
    tagged_mask = np.asarray(tagged_mask, dtype=bool)
    if not tagged_mask.any():
        raise ValueError("attack success rate undefined: no tagged samples")
    return float(np.mean(np.asarray(predictions)[tagged_mask] == false_label))


def evaluate(
    learner, seq: TaskSequence, spec: BackdoorSpec | None
) -> tuple[np.ndarray, float | None]:
    """Clean per-task accuracy, except the target task which is scored on its
    tagged evaluation set. ASR comes from the same prediction pass."""
    accs = np.zeros(seq.n_tasks)
    asr = None
    for t, task in enumerate(seq.test, start=1):
        if spec is not None and t == spec.target_task:
            tagged = tag_eval_set(task, spec)
            preds = learner.predict(tagged.X)
            accs[t - 1] = float(np.mean(preds == tagged.y))
            asr = attack_success_rate(preds, tagged.tagged, spec.false_label)
        else:
            preds = learner.predict(task.X)
            accs[t - 1] = float(np.mean(preds == task.y))
    return accs, asr


def train_sequence(learner, seq: TaskSequence, rng: np.random.Generator):
    # One child stream per task: paired clean/attacked runs then share all
    # task-level randomness, so arm differences come from the poison alone.
    for task, task_rng in zip(seq.train, rng.spawn(seq.n_tasks)):
        learner.train_task(task, task_rng)
    return learner


def _run_once(cfg: ExperimentConfig, seed: int) -> dict:
    """One seeded run: clean arm, and the attacked twin when configured."""
    ss = np.random.SeedSequence(seed)
    data_ss, init_ss, train_ss, poison_ss = ss.spawn(4)
    seq = build_sequence(cfg, np.random.default_rng(data_ss))
    side = int(round(np.sqrt(seq.train[0].X.shape[1])))
    spec = make_backdoor_spec(cfg, image_side=side)

    out: dict = {"seed": seed}
    learner = make_learner(cfg, seq, np.random.default_rng(init_ss))
    train_sequence(learner, seq, np.random.default_rng(train_ss))
    out["clean_acc"], _ = evaluate(learner, seq, None)

    if spec is not None:
        poisoned, manifest = poison_train_set(seq, spec, np.random.default_rng(poison_ss))
        twin = make_learner(cfg, poisoned, np.random.default_rng(init_ss))
        train_sequence(twin, poisoned, np.random.default_rng(train_ss))
        out["attacked_acc"], out["asr"] = evaluate(twin, poisoned, spec)
        out["manifest_size"] = len(manifest)
    return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.monotonic()
    base = cfg["eval.seed"]
    seeds = [base + r for r in range(cfg["eval.runs"])]
    completed: list[dict] = []
    for r, seed in enumerate(seeds):
        try:
            completed.append(_run_once(cfg, seed))
        except Exception as exc:
            raise ExperimentError(f"run {r} (seed {seed}) failed: {exc}", completed) from exc

    clean = ArmResult.from_runs(np.stack([run["clean_acc"] for run in completed]))
    attacked = None
    asr_mean = asr_std = None
    target_task = None
    if cfg["attack.enabled"]:
        attacked = ArmResult.from_runs(np.stack([run["attacked_acc"] for run in completed]))
        asrs = np.array([run["asr"] for run in completed], dtype=np.float64)
        asr_mean, asr_std = float(asrs.mean()), float(asrs.std())
        target_task = cfg["attack.target_task"]
    return ExperimentReport(
        learner=cfg["learner.kind"],
        scenario=cfg["dataset.scenario"],
        n_runs=cfg["eval.runs"],
        seeds=seeds,
        clean=clean,
        attacked=attacked,
        asr_mean=asr_mean,
        asr_std=asr_std,
        target_task=target_task,
        config_fingerprint=cfg.fingerprint(),
        wall_time_s=time.monotonic() - t0,
    )


def poison_audit(cfg: ExperimentConfig, seed: int | None = None) -> PoisonManifest:
    """Build the sequence, poison it, and return just the manifest."""
    if not cfg["attack.enabled"]:
        raise ValueError("config has no attack to audit")
    ss = np.random.SeedSequence(seed if seed is not None else cfg["eval.seed"])
    data_ss, _, _, poison_ss = ss.spawn(4)
    seq = build_sequence(cfg, np.random.default_rng(data_ss))
    side = int(round(np.sqrt(seq.train[0].X.shape[1])))
    spec = make_backdoor_spec(cfg, image_side=side)
    _, manifest = poison_train_set(seq, spec, np.random.default_rng(poison_ss))
    return manifest
