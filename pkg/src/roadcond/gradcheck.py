"""Central finite-difference checking of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import losses
from . import tensor as T
from .config import ContrastiveConfig
from .tensor import Tensor, backward


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5,
                      max_coords: int | None = None, seed: int = 0) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``x`` is perturbed in place and restored. With ``max_coords`` only a
    seeded random subset of coordinates is probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if out.data.size != 1 or not np.isfinite(out.data).all():
        raise ValueError(f"f(x) must be a finite scalar, got {out.data!r}")
    backward(out, leaves=[x])
    analytic = x.grad.reshape(-1).astype(np.float64).copy()
    x.grad = None

    flat = x.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        idx = np.sort(np.random.default_rng(seed).choice(flat.size, max_coords, replace=False))

    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x).data)
        flat[i] = orig - step
        fm = float(f(x).data)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * step)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst


def check_params(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], step: float = 1e-5,
                 max_coords: int | None = None, seed: int = 0) -> dict[str, float]:
    """Run :func:`finite_diff_check` for each named parameter of a closure."""
    return {
        name: finite_diff_check(lambda _p: loss_fn(), p, step=step, max_coords=max_coords, seed=seed)
        for name, p in params.items()
    }


# ----------------------------------------------------------------------------
# seeded suites: every primitive and every loss
# ----------------------------------------------------------------------------

GRAD_TOL = 1e-4


@dataclass
class SuiteResult:
    name: str
    instances: int
    max_error: float
    tol: float = GRAD_TOL

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def _weighted(y: Tensor, rng: np.random.Generator) -> Tensor:
    # random upstream weights so every output coordinate matters
    return T.sum(y * rng.normal(size=y.shape))


def _away_from(rng, shape, points, gap=0.05, scale=1.0):
    x = rng.uniform(-scale, scale, size=shape)
    for p in points:
        close = np.abs(x - p) < gap
        x[close] = p + np.sign(x[close] - p + 1e-12) * gap
    return x


def _distinct(rng, shape):
    # values spaced 0.01 apart so max pooling has no near-ties
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.01 - n * 0.005).reshape(shape)


def _labels_with_pairs(rng, k, n_classes):
    lab = rng.integers(0, n_classes, size=k)
    lab[1] = lab[0]
    lab[2] = (lab[0] + 1) % n_classes
    return rng.permutation(lab)


def _prim_cases(rng):
    axis = [None, 0, 1][rng.integers(3)]
    keep = bool(rng.integers(2))
    tb = bool(rng.integers(2))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    return {
        "add": (lambda a, b: T.add(a, b), [rng.normal(size=(3, 4)), rng.normal(size=(4,))]),
        "sub": (lambda a, b: T.sub(a, b), [rng.normal(size=(3, 4)), rng.normal(size=(3, 1))]),
        "mul": (lambda a, b: T.mul(a, b), [rng.normal(size=(3, 4)), rng.normal(size=(1, 4))]),
        "relu": (T.relu, [_away_from(rng, (4, 5), [0.0])]),
        "log": (T.log, [rng.uniform(0.5, 2.0, size=(4, 5))]),
        "exp": (T.exp, [rng.uniform(-1.0, 1.0, size=(4, 5))]),
        "sigmoid": (T.sigmoid, [rng.normal(0.0, 2.0, size=(4, 5))]),
        "clip": (lambda x: T.clip(x, -0.5, 0.5), [_away_from(rng, (4, 5), [-0.5, 0.5])]),
        "sum": (lambda x: T.sum(x, axis=axis, keepdims=keep), [rng.normal(size=(3, 4))]),
        "mean": (lambda x: T.mean(x, axis=axis, keepdims=keep), [rng.normal(size=(3, 4))]),
        "reshape": (lambda x: T.reshape(x, (6, 4)), [rng.normal(size=(2, 3, 4))]),
        "concat": (lambda a, b: T.concat([a, b], axis=-1), [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))]),
        "matmul": (lambda a, b: T.matmul(a, b, transpose_b=tb),
                   [rng.normal(size=(3, 4)), rng.normal(size=(5, 4) if tb else (4, 5))]),
        "softmax": (T.softmax, [rng.normal(size=(3, 5))]),
        "log_softmax": (T.log_softmax, [rng.normal(size=(3, 5))]),
        "l2_norm": (T.l2_norm, [rng.normal(size=(3, 4)) + 0.5]),
        "conv2d": (lambda x, w: T.conv2d(x, w, stride=stride, pad=pad),
                   [rng.normal(size=(2, 5, 6, 3)), rng.normal(size=(3, 3, 3, 4))]),
        "max_pool2d": (lambda x: T.max_pool2d(x, 2), [_distinct(rng, (2, 4, 6, 3))]),
        "global_avg_pool": (T.global_avg_pool, [rng.normal(size=(2, 3, 4, 5))]),
        "upsample2d": (lambda x: T.upsample2d(x, 2), [rng.normal(size=(2, 3, 3, 2))]),
    }


def _loss_cases(rng):
    k, d, n = int(rng.integers(3, 9)), int(rng.integers(2, 7)), int(rng.integers(2, 5))
    lab = _labels_with_pairs(rng, k, n)
    tau = float(rng.uniform(0.05, 1.0))
    lam = float(rng.uniform(0.1, 2.0))
    target = (rng.random((3, 5)) < 0.5).astype(np.float64)
    paper = ContrastiveConfig(tau=tau, denominator_mode="paper")
    simclr = ContrastiveConfig(tau=tau, denominator_mode="simclr")
    return {
        "seg_bce": (lambda p: losses.seg_bce_loss(p, target), [rng.uniform(0.05, 0.95, size=(3, 5))]),
        "contrastive_paper": (lambda e: losses.batch_contrastive_loss(e, lab, paper), [rng.normal(size=(k, d))]),
        "contrastive_simclr": (lambda e: losses.batch_contrastive_loss(e, lab, simclr), [rng.normal(size=(k, d))]),
        "cross_entropy": (lambda z: losses.categorical_ce_loss(z, lab % n), [rng.normal(size=(k, n))]),
        "combined": (lambda z, e: losses.combined_loss(losses.categorical_ce_loss(z, lab % n),
                                                       losses.batch_contrastive_loss(e, lab, paper), lam),
                     [rng.normal(size=(k, n)), rng.normal(size=(k, d))]),
    }


def _case_error(fn, arrays, rng, scalar: bool, step: float) -> float:
    inputs = [Tensor(a.astype(np.float64)) for a in arrays]
    weights_seed = int(rng.integers(2**31))
    worst = 0.0
    for i in range(len(inputs)):
        def f(x, i=i):
            args = [x if j == i else inputs[j] for j in range(len(inputs))]
            y = fn(*args)
            return y if scalar else _weighted(y, np.random.default_rng(weights_seed))
        worst = max(worst, finite_diff_check(f, inputs[i], step=step))
        inputs[i].requires_grad = False
    return worst


def run_suites(instances: int = 20, seed: int = 0, step: float = 1e-5,
               names: Sequence[str] | None = None) -> list[SuiteResult]:
    """Finite-difference check of every primitive and loss on seeded float64 instances."""
    results: dict[str, SuiteResult] = {}
    for builder, scalar in ((_prim_cases, False), (_loss_cases, True)):
        for inst in range(instances):
            rng = np.random.default_rng([seed, inst, 0 if scalar else 1])
            for name, (fn, arrays) in builder(rng).items():
                if names is not None and name not in names:
                    continue
                err = _case_error(fn, arrays, rng, scalar, step)
                r = results.setdefault(name, SuiteResult(name, 0, 0.0))
                r.instances += 1
                r.max_error = max(r.max_error, err)
    return list(results.values())
