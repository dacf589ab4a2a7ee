import numpy as np
import pytest

from vlatrainer.nn.optim import adam_step, clip_grad_norm, global_norm
from vlatrainer.nn.params import ParamStore


def test_first_adam_step_moves_by_learning_rate():
    store = ParamStore({"w": [0.0]})

    adam_step(store, {"w": np.array([1.0])}, lr=0.1)

    assert store["w"][0] == pytest.approx(-0.1, abs=1e-9)
    assert store.step_count == 1


def test_frozen_params_keep_values_and_moments():
    store = ParamStore({"w": [1.0], "v": [2.0]})

    adam_step(store, {"w": np.array([1.0]), "v": np.array([1.0])}, lr=0.1, frozen={"v"})

    assert store["v"][0] == 2.0
    assert store.first_moment["v"][0] == 0.0
    assert store["w"][0] != 1.0


def test_replaced_arrays_do_not_alias_earlier_lookups():
    store = ParamStore({"w": [0.0]})
    before = store["w"]

    adam_step(store, {"w": np.array([1.0])}, lr=0.1)

    assert before[0] == 0.0


def test_gradient_names_must_match():
    store = ParamStore({"w": [0.0]})

    with pytest.raises(ValueError):
        adam_step(store, {"x": np.array([1.0])}, lr=0.1)


def test_clip_grad_norm_scales_trainable_only():
    grads = {"a": np.array([3.0]), "b": np.array([4.0]), "frozen": np.array([100.0])}

    clipped, norm = clip_grad_norm(grads, 1.0, frozen={"frozen"})

    assert norm == pytest.approx(5.0)
    assert global_norm(clipped, ["a", "b"]) == pytest.approx(1.0)
    assert clipped["frozen"][0] == 100.0


def test_frozen_copy_is_read_only():
    store = ParamStore({"w": [1.0, 2.0]})
    frozen = store.frozen_copy()

    with pytest.raises(ValueError):
        frozen["w"][0] = 5.0
    assert frozen.equal(store)
