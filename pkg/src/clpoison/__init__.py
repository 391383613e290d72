"""Backdoor-poisoning testbed for continual learners.

Train regularization-based (EWC, online EWC, SI) and generative-replay
(hard-label and distilled) learners on DIL/CIL task sequences, inject a
small fraction of imperceptibly tagged, mislabeled samples into one task,
and measure the targeted forgetting of a victim task at test time.
"""

from .autodiff import NumericFailure, Var, backward, forward_backward, grad_check
from .backdoor import (
    BackdoorSpec,
    PoisonManifest,
    TriggerPattern,
    apply_additive,
    apply_watermark,
    make_frame_pattern,
    make_watermark_pattern,
    poison_train_set,
    tag_eval_set,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config_text
from .data import (
    BlobSpec,
    Scenario,
    TaskData,
    TaskSequence,
    build_rotation_sequence,
    build_split_sequence,
    load_idx_dataset,
    make_synthetic_sequence,
    parse_idx,
    render_digit_corpus,
    rotate_images,
)
from .harness import attack_success_rate, evaluate, poison_audit, run_experiment
from .models import MlpClassifier, SoftTargets, Vae, cross_entropy, softmax, vae_generate, vae_loss
from .optim import OptimizerConfig, init_state, optimizer_step
from .params import ParamSet
from .regularization import (
    ImportanceState,
    RegHyper,
    RegularizedLearner,
    SiAccumulator,
    compute_fisher,
    consolidate,
    penalty,
    si_fold,
    train_task_regularized,
)
from .replay import (
    GenerativeReplayLearner,
    ReplayBatch,
    ReplayHyper,
    ReplaySnapshot,
    composed_loss,
    make_replay_batch,
    mix_weights,
    train_task_generative,
)
from .report import ExperimentReport, human_table, read_report, write_report

__version__ = "0.1.0"
