import numpy as np
import pytest

from clpoison import autodiff as ad
from clpoison.data import TaskData
from clpoison.models import MlpClassifier, SoftTargets, Vae, cross_entropy
from clpoison.optim import OptimizerConfig, init_state, optimizer_step, shuffled_batches
from clpoison.replay import (
    HARD,
    SOFT,
    GenerativeReplayLearner,
    ReplayBatch,
    ReplayHyper,
    ReplaySnapshot,
    composed_loss,
    make_replay_batch,
    mix_weights,
    train_task_generative,
)


class TestMixWeights:
    def test_exact_values(self):
        assert mix_weights(1) == (1.0, 0.0)
        assert mix_weights(2) == (0.5, 0.5)
        assert mix_weights(5) == (0.2, 0.8)

    def test_sum_to_one_for_all_t(self):
        for t in range(1, 11):
            cur, rep = mix_weights(t)
            assert cur + rep == 1.0

    def test_rejects_t_below_one(self):
        with pytest.raises(ValueError):
            mix_weights(0)


def snapshot_fixture(rng, input_dim=6, classes=3):
    solver = MlpClassifier(input_dim, classes, hidden=(5,), rng=rng)
    vae = Vae(input_dim, latent_dim=2, hidden=4, rng=rng)
    return ReplaySnapshot(
        generator=vae, solver=solver, tasks_seen=1,
        active_classes=np.ones(classes, dtype=bool),
    )


class TestMakeReplayBatch:
    def test_soft_rows_sum_to_one(self):
        snap = snapshot_fixture(np.random.default_rng(0))
        batch = make_replay_batch(snap, 8, SOFT, np.random.default_rng(1))
        np.testing.assert_allclose(batch.targets.probs.sum(axis=1), np.ones(8), atol=1e-6)

    def test_hard_labels_are_argmax_of_soft_rows(self):
        snap = snapshot_fixture(np.random.default_rng(2))
        hard = make_replay_batch(snap, 10, HARD, np.random.default_rng(3))
        soft = make_replay_batch(snap, 10, SOFT, np.random.default_rng(3))
        np.testing.assert_array_equal(hard.targets, soft.targets.probs.argmax(axis=1))

    def test_same_seed_same_batch(self):
        snap = snapshot_fixture(np.random.default_rng(4))
        a = make_replay_batch(snap, 5, HARD, np.random.default_rng(9))
        b = make_replay_batch(snap, 5, HARD, np.random.default_rng(9))
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.targets, b.targets)

    def test_empty_batch(self):
        snap = snapshot_fixture(np.random.default_rng(5))
        batch = make_replay_batch(snap, 0, SOFT, np.random.default_rng(0))
        assert len(batch) == 0

    def test_inactive_classes_get_no_mass(self):
        snap = snapshot_fixture(np.random.default_rng(6))
        snap.active_classes = np.array([True, True, False])
        soft = make_replay_batch(snap, 7, SOFT, np.random.default_rng(7))
        assert np.all(soft.targets.probs[:, 2] == 0.0)
        hard = make_replay_batch(snap, 7, HARD, np.random.default_rng(7))
        assert not np.any(hard.targets == 2)


class TestComposedLoss:
    def setup_method(self):
        rng = np.random.default_rng(8)
        self.model = MlpClassifier(4, 3, hidden=(5,), rng=rng)
        self.Xc = rng.random((6, 4))
        self.yc = rng.integers(0, 3, 6)
        self.Xr = rng.random((6, 4))
        self.yr = rng.integers(0, 3, 6)

    def test_t1_equals_current_loss_exactly(self):
        got = float(composed_loss(self.model, self.model.params, (self.Xc, self.yc), None, 1))
        want = float(cross_entropy(self.model.classify(self.Xc), self.yc))
        assert got == want

    def test_weighted_hand_case(self):
        # current loss 1.0 and replay loss 3.0 at T=2 -> 2.0
        class Fake:
            def forward(self, params, X):
                return X

        # softmax prob of the true class is e^-1 (CE 1.0) resp. e^-3 (CE 3.0)
        logits_cur = np.array([[0.0, np.log(np.e - 1.0)]])
        logits_rep = np.array([[np.log(np.e ** 3 - 1.0), 0.0]])
        loss = composed_loss(
            Fake(), {}, (logits_cur, np.array([0])),
            ReplayBatch(logits_rep, np.array([1])), 2,
        )
        assert abs(float(loss) - 2.0) <= 1e-12

    def test_gradient_is_weighted_sum_of_term_gradients(self):
        T = 3
        replay = ReplayBatch(self.Xr, self.yr)

        def current_only(pv):
            return cross_entropy(self.model.forward(pv, self.Xc), self.yc)

        def replay_only(pv):
            return cross_entropy(self.model.forward(pv, self.Xr), self.yr)

        _, g_cur = ad.forward_backward(self.model.params, current_only)
        _, g_rep = ad.forward_backward(self.model.params, replay_only)
        _, g_mix = ad.forward_backward(
            self.model.params,
            lambda pv: composed_loss(self.model, pv, (self.Xc, self.yc), replay, T),
        )
        expected = g_cur.combine(g_rep, lambda a, b: a / T + (1 - 1 / T) * b)
        diff = np.abs(g_mix.flatten() - expected.flatten())
        scale = np.maximum(np.abs(expected.flatten()), 1e-12)
        assert (diff / scale).max() <= 1e-10

    def test_replay_with_t1_rejected(self):
        with pytest.raises(ValueError):
            composed_loss(
                self.model, self.model.params, (self.Xc, self.yc),
                ReplayBatch(self.Xr, self.yr), 1,
            )

    def test_missing_replay_after_t1_rejected(self):
        with pytest.raises(ValueError):
            composed_loss(self.model, self.model.params, (self.Xc, self.yc), None, 2)


def blob_task(rng, task_id=1, n=48, dim=6, classes=2):
    centers = np.linspace(0.2, 0.8, classes)
    X = np.concatenate([
        np.clip(c + 0.03 * rng.standard_normal((n // classes, dim)), 0, 1) for c in centers
    ])
    y = np.repeat(np.arange(classes), n // classes)
    return TaskData(X=X, y=y, task_id=task_id, class_names=np.arange(classes))


class TestTrainTaskGenerative:
    def test_t1_matches_plain_joint_training(self):
        rng = np.random.default_rng(10)
        task = blob_task(rng)
        solver = MlpClassifier(6, 2, hidden=(5,), rng=np.random.default_rng(1))
        vae = Vae(6, latent_dim=2, hidden=4, rng=np.random.default_rng(2))
        hyper = ReplayHyper(epochs=2, batch_size=16)
        new_solver, new_vae, snap = train_task_generative(
            solver, vae, task, 1, HARD, hyper, np.random.default_rng(3)
        )

        # plain loop with the same stream splitting
        rng2 = np.random.default_rng(3)
        shuffle_rng, gen_rng = rng2.spawn(2)
        s_params, v_params = solver.params.copy(), vae.params.copy()
        cfg_s = OptimizerConfig(lr=hyper.solver_lr)
        cfg_v = OptimizerConfig(lr=hyper.vae_lr)
        s_state, v_state = init_state(s_params, cfg_s), init_state(v_params, cfg_v)
        for _ in range(2):
            for idx in shuffled_batches(len(task), 16, shuffle_rng):
                Xb, yb = task.X[idx], task.y[idx]
                _, gs = ad.forward_backward(
                    s_params, lambda pv: cross_entropy(solver.forward(pv, Xb), yb)
                )
                s_params, s_state = optimizer_step(s_params, gs, s_state, cfg_s)
                eps = gen_rng.standard_normal((len(Xb), 2))
                _, gv = ad.forward_backward(v_params, vae.loss_fn(Xb, eps))
                v_params, v_state = optimizer_step(v_params, gv, v_state, cfg_v)
        assert np.array_equal(new_solver.params.flatten(), s_params.flatten())
        assert np.array_equal(new_vae.params.flatten(), v_params.flatten())
        assert snap.tasks_seen == 1

    def test_snapshot_required_beyond_first_task(self):
        rng = np.random.default_rng(11)
        task = blob_task(rng)
        solver = MlpClassifier(6, 2, rng=rng)
        vae = Vae(6, latent_dim=2, hidden=4, rng=rng)
        with pytest.raises(ValueError):
            train_task_generative(solver, vae, task, 2, HARD, ReplayHyper(), rng)

    def test_snapshot_immutable_across_next_task(self):
        rng = np.random.default_rng(12)
        learner = GenerativeReplayLearner(
            HARD, 6, 2, ReplayHyper(epochs=1, batch_size=16),
            np.random.default_rng(0), hidden=(5,), latent_dim=2, vae_hidden=4,
        )
        learner.train_task(blob_task(rng, task_id=1), np.random.default_rng(1))
        snap = learner.snapshot
        fingerprint_before = snap.fingerprint
        learner.train_task(blob_task(rng, task_id=2), np.random.default_rng(2))
        snap.check_unchanged()
        assert snap.fingerprint == fingerprint_before
        assert learner.snapshot is not snap

    def test_learner_determinism(self):
        results = []
        for _ in range(2):
            rng = np.random.default_rng(13)
            learner = GenerativeReplayLearner(
                SOFT, 6, 2, ReplayHyper(epochs=1, batch_size=16),
                np.random.default_rng(0), hidden=(5,), latent_dim=2, vae_hidden=4,
            )
            learner.train_task(blob_task(rng, task_id=1), np.random.default_rng(1))
            learner.train_task(blob_task(rng, task_id=2), np.random.default_rng(2))
            results.append(learner.solver.params.flatten())
        assert np.array_equal(results[0], results[1])
