import numpy as np
import pytest

from clpoison.config import ExperimentConfig
from clpoison.data import BlobSpec, make_synthetic_sequence
from clpoison.harness import (
    attack_success_rate,
    build_sequence,
    evaluate,
    make_backdoor_spec,
    poison_audit,
    run_experiment,
)
from clpoison.report import (
    comparable_bytes,
    human_table,
    machine_table,
    read_report,
    render_report,
    write_report,
)

MICRO = {
    "dataset.source": "synthetic",
    "dataset.n_tasks": 2,
    "dataset.classes_per_task": 2,
    "dataset.train_cap": 80,
    "dataset.test_cap": 40,
    "learner.kind": "ewc",
    "learner.epochs": 1,
    "learner.batch": 32,
    "learner.fisher_samples": 10,
    "eval.runs": 2,
    "eval.seed": 5,
}

ATTACK = {
    "attack.enabled": True,
    "attack.frame_width": 1,
    "attack.fraction": 0.1,
    "attack.insertion_task": 2,
    "attack.target_task": 1,
    "attack.false_label": 0,
    "attack.source": "current",
}


class TestAttackSuccessRate:
    def test_all_hit(self):
        assert attack_success_rate(np.zeros(5, dtype=int), np.ones(5, bool), 0) == 1.0

    def test_none_hit(self):
        assert attack_success_rate(np.ones(5, dtype=int), np.ones(5, bool), 0) == 0.0

    def test_partial(self):
        preds = np.array([0, 0, 1, 2])
        mask = np.array([True, True, True, False])
        assert attack_success_rate(preds, mask, 0) == pytest.approx(2 / 3)

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            attack_success_rate(np.zeros(3, dtype=int), np.zeros(3, bool), 0)


class ConstantPredictor:
    def __init__(self, label):
        self.label = label

    def predict(self, X):
        return np.full(len(X), self.label, dtype=int)


class TestEvaluate:
    def test_constant_predictor_on_balanced_task(self):
        seq = make_synthetic_sequence(
            BlobSpec(
                ((np.full(4, 0.2), np.full(4, 0.8)),),
                variance=0.002, n_train_per_class=10, n_test_per_class=25,
            ),
            np.random.default_rng(0),
        )
        accs, asr = evaluate(ConstantPredictor(0), seq, None)
        assert accs[0] == 0.5
        assert asr is None

    def test_with_spec_scores_target_on_tagged_set(self):
        cfg = ExperimentConfig({**MICRO, **ATTACK})
        seq = build_sequence(cfg, np.random.default_rng(1))
        spec = make_backdoor_spec(cfg, image_side=4)
        accs, asr = evaluate(ConstantPredictor(0), seq, spec)
        # everything predicted as the false label: full attack success
        assert asr == 1.0
        # on the tagged target task only the excluded class is right
        target = seq.test[0]
        assert accs[0] == pytest.approx(float(np.mean(target.y == 0)))


class TestRunExperiment:
    def test_no_attack_report_has_no_asr(self):
        report = run_experiment(ExperimentConfig(dict(MICRO)))
        assert report.asr_mean is None
        assert report.attacked is None
        assert report.n_tasks == 2
        assert np.all((0 <= report.clean.task_mean) & (report.clean.task_mean <= 1))

    def test_equal_seeds_give_identical_runs(self):
        cfg = ExperimentConfig(dict(MICRO))
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        np.testing.assert_array_equal(a.clean.task_mean, b.clean.task_mean)
        np.testing.assert_array_equal(a.clean.task_std, b.clean.task_std)

    def test_single_run_has_zero_std(self):
        cfg = ExperimentConfig({**MICRO, "eval.runs": 1})
        report = run_experiment(cfg)
        np.testing.assert_array_equal(report.clean.task_std, np.zeros(2))

    def test_attack_arms_and_manifest(self):
        report = run_experiment(ExperimentConfig({**MICRO, **ATTACK, "eval.runs": 1}))
        assert report.attacked is not None
        assert report.asr_mean is not None
        assert report.target_task == 1


class TestPoisonAudit:
    def test_manifest_counts(self):
        cfg = ExperimentConfig({**MICRO, **ATTACK})
        manifest = poison_audit(cfg)
        assert len(manifest) == 8  # 10% of the 80-row insertion task
        assert not np.any(manifest.original_labels == 0)

    def test_requires_attack(self):
        with pytest.raises(ValueError):
            poison_audit(ExperimentConfig(dict(MICRO)))


class TestReportFormat:
    def make_report(self, attack=True):
        cfg = ExperimentConfig({**MICRO, **(ATTACK if attack else {}), "eval.runs": 1})
        return run_experiment(cfg)

    def test_roundtrip_exact(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "res.txt"
        write_report(report, path)
        rows = read_report(path)
        for t in range(2):
            mean, std, flag = rows[("na", str(t + 1))]
            assert abs(mean - report.clean.task_mean[t]) <= 1e-12
            assert abs(std - report.clean.task_std[t]) <= 1e-12
        atk_mean, _, flag = rows[("attack", "1")]
        assert abs(atk_mean - report.attacked.task_mean[0]) <= 1e-12
        assert flag == "1"
        assert ("attack", "asr") in rows

    def test_task_rows_plus_mean_row(self):
        report = self.make_report(attack=False)
        lines = machine_table(report).strip().splitlines()
        na_rows = [l for l in lines if l.startswith("na\t")]
        assert len(na_rows) == 2 + 1  # one per task + the mean row
        assert na_rows[-1].split("\t")[1] == "mean"

    def test_emitted_mean_equals_mean_of_task_rows(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "res.txt"
        write_report(report, path)
        rows = read_report(path)
        task_means = [rows[("na", str(t + 1))][0] for t in range(2)]
        assert rows[("na", "mean")][0] == pytest.approx(float(np.mean(task_means)), abs=1e-12)

    def test_human_table_has_na_and_attack_columns(self):
        report = self.make_report()
        text = human_table(report)
        assert "EWC (NA)" in text and "EWC (With Attack)" in text
        assert text.splitlines()[1].startswith("T1")
        assert any(line.startswith("Mean") for line in text.splitlines())
        assert any(line.startswith("ASR") for line in text.splitlines())

    def test_comparable_bytes_mask_wall_time(self, tmp_path):
        report = self.make_report()
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        write_report(report, p1)
        report.wall_time_s += 100.0
        write_report(report, p2)
        assert p1.read_bytes() != p2.read_bytes()
        assert comparable_bytes(p1) == comparable_bytes(p2)

    def test_render_contains_fingerprint(self):
        report = self.make_report()
        assert report.config_fingerprint in render_report(report)
