import numpy as np
import pytest

from roadcond import tensor as T
from roadcond.gradcheck import finite_diff_check
from roadcond.optim import AdamState, NonFiniteGradient, adam_step
from roadcond.tensor import Tensor


def _param(value, grad=None):
    p = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
    p.grad = None if grad is None else np.asarray(grad, dtype=np.float64)
    return p


def test_zero_gradient_leaves_params_unchanged(rng):
    w0 = rng.normal(size=(3, 4))
    p = _param(w0, np.zeros((3, 4)))
    state = adam_step({"w": p}, AdamState())
    np.testing.assert_array_equal(p.data, w0)
    assert state.t == 1


def test_missing_grad_counts_as_zero():
    p = _param([1.0, 2.0])
    adam_step({"w": p}, AdamState())
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_first_step_moves_by_lr():
    p = _param([0.5], [1.0])
    adam_step({"w": p}, AdamState())
    # bias-corrected first step: lr * g / (|g| + eps)
    assert p.data[0] == pytest.approx(0.5 - 1e-4, abs=1e-11)


def test_step_counter_and_buffer_shapes(rng):
    p = _param(rng.normal(size=(2, 3)))
    state = AdamState()
    for t in range(1, 4):
        p.grad = rng.normal(size=(2, 3))
        adam_step({"w": p}, state)
        assert state.t == t
    assert state.m["w"].shape == state.v["w"].shape == (2, 3)


def test_matches_reference_update(rng):
    w = rng.normal(size=5)
    grads = [rng.normal(size=5) for _ in range(4)]
    p = _param(w)
    state = AdamState(lr=1e-2)
    m = np.zeros(5)
    v = np.zeros(5)
    for t, g in enumerate(grads, start=1):
        p.grad = g
        adam_step({"w": p}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p.data, w, rtol=1e-13)


def test_deterministic_reruns(rng):
    w0 = rng.normal(size=(4, 4))
    grads = [rng.normal(size=(4, 4)) for _ in range(2)]
    out = []
    for _ in range(2):
        p = _param(w0)
        state = AdamState()
        for g in grads:
            p.grad = g
            adam_step({"w": p}, state)
        out.append(p.data.copy())
    np.testing.assert_array_equal(out[0], out[1])


def test_shape_mismatch():
    p = _param(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError, match="shape"):
        adam_step({"w": p}, AdamState())


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_names_parameter(bad):
    params = {"ok": _param([1.0], [0.1]), "head.w": _param([1.0, 2.0], [0.0, bad])}
    with pytest.raises(NonFiniteGradient, match="head.w"):
        adam_step(params, AdamState())
    # nothing moves when a gradient is rejected
    np.testing.assert_array_equal(params["ok"].data, [1.0])


def test_negative_lr_rejected():
    with pytest.raises(ValueError):
        adam_step({"w": _param([1.0], [1.0])}, AdamState(lr=-1.0))


def test_float32_params_stay_float32(rng):
    p = Tensor(rng.normal(size=3).astype(np.float32), requires_grad=True)
    p.grad = np.ones(3, dtype=np.float32)
    adam_step({"w": p}, AdamState())
    assert p.data.dtype == np.float32


def test_finite_diff_sum_of_squares(rng):
    x = Tensor(rng.normal(size=(4, 3)))
    assert finite_diff_check(lambda t: T.sum(t * t), x) < 1e-8


def test_finite_diff_rejects_bad_inputs():
    x = Tensor(np.ones(2))
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: T.sum(t), x, step=0.0)
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: t * 1.0, x)
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: T.sum(t * np.inf), x)


def test_finite_diff_restores_input(rng):
    data = rng.normal(size=6)
    x = Tensor(data.copy())
    finite_diff_check(lambda t: T.sum(T.exp(t)), x)
    np.testing.assert_array_equal(x.data, data)
