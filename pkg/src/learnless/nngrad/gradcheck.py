"""Central-difference verification of every backward kernel and the full network."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..rng import make_rng, stream_seed
from . import ops
from .model import build_small_cnn

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    trials: int
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} gradcheck/{self.name}: {self.trials} trials, max rel err {self.max_rel_error:.2e} (tol {self.tolerance:.0e})"


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def directional_grad(f: Callable[[], float], x: np.ndarray, direction: np.ndarray, step: float = STEP) -> float:
    orig = x.copy()
    x[...] = orig + step * direction
    fp = f()
    x[...] = orig - step * direction
    fm = f()
    x[...] = orig
    return (fp - fm) / (2 * step)


def rel_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a||, ||n||)``; zero when both vanish."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def check_conv(trials: int = 100, seed: int = 0) -> CheckResult:
    worst = 0.0
    for t in range(trials):
        rng = make_rng(stream_seed(seed, 1, t))
        n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        k, stride, pad = rng.integers(1, 4), rng.integers(1, 3), rng.integers(0, 2)
        h, w_ = rng.integers(max(k, 3), 8, size=2)
        x = rng.normal(size=(n, c, h, w_))
        w = rng.normal(size=(o, c, k, k))
        b = rng.normal(size=o)
        out = ops.conv2d_forward(x, w, b, stride, pad)
        r = rng.normal(size=out.shape)
        f = lambda: float(np.sum(r * ops.conv2d_forward(x, w, b, stride, pad)))
        gw, gb, gx = ops.conv2d_backward(r, x, w, stride, pad, ordered=bool(t % 2))
        for analytic, arr in ((gw, w), (gb, b), (gx, x)):
            worst = max(worst, rel_error(analytic, numeric_grad(f, arr)))
    return CheckResult("conv", trials, worst)


def check_dense(trials: int = 100, seed: int = 0) -> CheckResult:
    worst = 0.0
    for t in range(trials):
        rng = make_rng(stream_seed(seed, 2, t))
        n, fi, fo = rng.integers(1, 4), rng.integers(1, 7), rng.integers(1, 5)
        x, w, b = rng.normal(size=(n, fi)), rng.normal(size=(fo, fi)), rng.normal(size=fo)
        r = rng.normal(size=(n, fo))
        f = lambda: float(np.sum(r * ops.dense_forward(x, w, b)))
        gw, gb, gx = ops.dense_backward(r, x, w)
        for analytic, arr in ((gw, w), (gb, b), (gx, x)):
            worst = max(worst, rel_error(analytic, numeric_grad(f, arr)))
    return CheckResult("dense", trials, worst)


def check_pooling(trials: int = 100, seed: int = 0) -> CheckResult:
    worst = 0.0
    for t in range(trials):
        rng = make_rng(stream_seed(seed, 3, t))
        n, c = rng.integers(1, 3), rng.integers(1, 3)
        h, w = rng.integers(2, 8, size=2)
        size = int(rng.integers(2, 4))
        # distinct, well separated values so max-pool winners cannot swap under the FD step
        x = (rng.permutation(n * c * h * w).reshape(n, c, h, w) * 0.1 + rng.uniform(0, 0.01, (n, c, h, w)))
        if t % 2 == 0:
            out = ops.avgpool2d_forward(x, size)
            r = rng.normal(size=out.shape)
            f = lambda: float(np.sum(r * ops.avgpool2d_forward(x, size)))
            g = ops.avgpool2d_backward(r, x.shape, size)
        else:
            out, arg = ops.maxpool2d_forward(x, size)
            r = rng.normal(size=out.shape)
            f = lambda: float(np.sum(r * ops.maxpool2d_forward(x, size)[0]))
            g = ops.maxpool2d_backward(r, arg, x.shape, size)
        worst = max(worst, rel_error(g, numeric_grad(f, x)))
        # global average pool and nearest upsampling ride along
        r2 = rng.normal(size=(n, c))
        f2 = lambda: float(np.sum(r2 * ops.global_avgpool_forward(x)))
        worst = max(worst, rel_error(ops.global_avgpool_backward(r2, x.shape), numeric_grad(f2, x)))
        r3 = rng.normal(size=(n, c, 2 * h, 2 * w))
        f3 = lambda: float(np.sum(r3 * ops.upsample_forward(x, 2)))
        worst = max(worst, rel_error(ops.upsample_backward(r3, 2), numeric_grad(f3, x)))
    return CheckResult("pooling", trials, worst)


def check_sigmoid(trials: int = 100, seed: int = 0) -> CheckResult:
    worst = 0.0
    for t in range(trials):
        rng = make_rng(stream_seed(seed, 4, t))
        x = rng.normal(scale=3.0, size=rng.integers(1, 20))
        r = rng.normal(size=x.shape)
        f = lambda: float(np.sum(r * ops.sigmoid(x)))
        worst = max(worst, rel_error(ops.sigmoid_backward(r, ops.sigmoid(x)), numeric_grad(f, x)))
        fs = lambda: float(np.sum(r * ops.silu_forward(x)))
        worst = max(worst, rel_error(ops.silu_backward(r, x), numeric_grad(fs, x)))
    return CheckResult("sigmoid", trials, worst)


def check_bce(trials: int = 100, seed: int = 0) -> CheckResult:
    worst = 0.0
    for t in range(trials):
        rng = make_rng(stream_seed(seed, 5, t))
        m = int(rng.integers(1, 10))
        p = rng.uniform(0.02, 0.98, size=m)
        y = rng.integers(0, 2, size=m).astype(float)
        f = lambda: float(np.sum(ops.bce_loss(p, y)[0]))
        _, g = ops.bce_loss(p, y)
        worst = max(worst, rel_error(g, numeric_grad(f, p)))
    return CheckResult("bce", trials, worst)


def check_network(trials: int = 100, seed: int = 0, size: int = 8, arch=None) -> CheckResult:
    """Whole default CNN on a 3xSxS batch: directional derivatives along a random
    +-1 direction (every entry moves by exactly ``STEP``) for every parameter
    tensor and for the input."""
    worst = 0.0
    for t in range(trials):
        rng = make_rng(stream_seed(seed, 6, t))
        model = build_small_cnn(arch, rng=stream_seed(seed, 7, t))
        x = rng.normal(size=(2, 3, size, size))
        y = np.array([0.0, 1.0])

        def f():
            out, _ = model.forward(x)
            return float(np.mean(ops.bce_loss(out.reshape(-1), y)[0]))

        out, caches = model.forward(x)
        _, dpred = ops.bce_loss(out.reshape(-1), y)
        grads, gx = model.backward(caches, (dpred / 2).reshape(out.shape))
        targets = [(grads[k], model.params[k]) for k in model.params] + [(gx, x)]
        for analytic, arr in targets:
            d = rng.choice([-1.0, 1.0], size=arr.shape)
            worst = max(worst, rel_error(float(np.sum(analytic * d)), directional_grad(f, arr, d)))
    return CheckResult("network", trials, worst)


def run_suite(trials: int = 100, seed: int = 0) -> list[CheckResult]:
    return [
        check_conv(trials, seed),
        check_dense(trials, seed),
        check_pooling(trials, seed),
        check_sigmoid(trials, seed),
        check_bce(trials, seed),
        check_network(trials, seed),
    ]
