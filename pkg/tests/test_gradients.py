import numpy as np
import pytest

from roadcond import tensor as T
from roadcond.gradcheck import GRAD_TOL, finite_diff_check, run_suites

PRIMITIVES = ["add", "sub", "mul", "matmul", "conv2d", "relu", "max_pool2d", "global_avg_pool", "reshape",
              "concat", "log", "exp", "sum", "mean", "softmax", "l2_norm", "sigmoid", "clip", "log_softmax",
              "upsample2d"]
LOSSES = ["seg_bce", "contrastive_paper", "contrastive_simclr", "cross_entropy", "combined"]


def test_primitive_table_covered():
    assert set(PRIMITIVES) == set(T.PRIMITIVES)


@pytest.mark.parametrize("name", PRIMITIVES + LOSSES)
def test_suite(gradient_suites, name):
    suites, _ = gradient_suites
    r = suites[name]
    assert r.instances >= 20
    assert r.max_error <= GRAD_TOL, f"{name}: {r.max_error:.3e}"


def test_suite_filter_and_seed():
    a = run_suites(instances=2, seed=3, names=["softmax"])
    b = run_suites(instances=2, seed=3, names=["softmax"])
    assert [r.name for r in a] == ["softmax"]
    assert a[0].max_error == b[0].max_error


def test_detects_wrong_gradient(rng):
    # an op with a deliberately wrong backward must be caught
    def bad_square(x):
        out = T.Tensor(x.data ** 2, requires_grad=True)
        out._parents = (x,)
        out._backward = lambda g: [g * x.data]
        return T.sum(out)

    x = T.Tensor(rng.uniform(1.0, 2.0, size=5))
    assert finite_diff_check(bad_square, x) > 0.1
