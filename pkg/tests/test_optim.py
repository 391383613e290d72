import numpy as np
import pytest

from clpoison import autodiff as ad
from clpoison.optim import OptimizerConfig, init_state, optimizer_step, shuffled_batches
from clpoison.params import ParamSet


def test_plain_step_is_exact():
    cfg = OptimizerConfig(kind="sgd", lr=0.1)
    params = ParamSet({"t": np.array([1.0])})
    grads = ParamSet({"t": np.array([2.0])})
    new, _ = optimizer_step(params, grads, init_state(params, cfg), cfg)
    assert new["t"][0] == 0.8


def test_zero_gradient_leaves_params_unchanged():
    for kind in ("sgd", "adam"):
        cfg = OptimizerConfig(kind=kind)
        params = ParamSet({"t": np.array([1.5, -2.0])})
        state = init_state(params, cfg)
        new, new_state = optimizer_step(params, params.zeros_like(), state, cfg)
        np.testing.assert_array_equal(new["t"], params["t"])
        assert new_state.step_count == 1


def test_adam_decreases_quadratic_loss_over_100_steps():
    cfg = OptimizerConfig(kind="adam", lr=0.05)
    params = ParamSet({"t": np.array([3.0, -4.0, 1.0])})
    state = init_state(params, cfg)

    def loss_fn(pv):
        return ad.mul(ad.vsum(ad.square(pv["t"])), 0.5)

    first, _ = ad.forward_backward(params, loss_fn)
    for _ in range(100):
        _, grads = ad.forward_backward(params, loss_fn)
        params, state = optimizer_step(params, grads, state, cfg)
    last, _ = ad.forward_backward(params, loss_fn)
    assert last < first


def test_shape_mismatch_rejected():
    cfg = OptimizerConfig(kind="sgd")
    params = ParamSet({"t": np.zeros(3)})
    grads = ParamSet({"t": np.zeros(4)})
    with pytest.raises(ValueError):
        optimizer_step(params, grads, init_state(params, cfg), cfg)


def test_steps_are_deterministic():
    cfg = OptimizerConfig(kind="adam", lr=1e-2)
    params = ParamSet({"t": np.array([0.5, 0.25])})
    grads = ParamSet({"t": np.array([1.0, -2.0])})
    a, _ = optimizer_step(params, grads, init_state(params, cfg), cfg)
    b, _ = optimizer_step(params, grads, init_state(params, cfg), cfg)
    assert np.array_equal(a["t"], b["t"])


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        OptimizerConfig(kind="lion")


def test_shuffled_batches_cover_everything_once():
    rng = np.random.default_rng(0)
    chunks = list(shuffled_batches(10, 3, rng))
    assert [len(c) for c in chunks] == [3, 3, 3, 1]
    assert sorted(np.concatenate(chunks).tolist()) == list(range(10))
