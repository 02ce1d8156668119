"""Central finite-difference verification of every autodiff operator.

Each op is exercised on randomized small instances in float64; an op passes
when the worst relative error against central differences stays under the
tolerance. Backs the `panohdr gradcheck` command and the acceptance suite.
"""

import zlib

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor

TOLERANCE = 1e-3


def _t(rng, shape, scale=1.0, shift=0.0):
    return Tensor(rng.standard_normal(shape) * scale + shift, requires_grad=True)


def _check_conv2d(rng):
    x = _t(rng, (2, 2, 6, 8))
    w = _t(rng, (3, 2, 3, 3))
    b = _t(rng, (3,))
    t = rng.standard_normal((2, 3, 3, 4))
    return ad.finite_difference_check(lambda: ad.mse(ad.conv2d(x, w, b), t), [x, w, b])


def _check_conv_transpose2d(rng):
    x = _t(rng, (2, 3, 3, 4))
    w = _t(rng, (3, 2, 3, 3))
    b = _t(rng, (2,))
    t = rng.standard_normal((2, 2, 6, 8))
    return ad.finite_difference_check(lambda: ad.mse(ad.conv_transpose2d(x, w, b), t), [x, w, b])


def _check_batchnorm(rng):
    x = _t(rng, (4, 2, 3, 3))
    gamma = _t(rng, (2,), shift=1.5)
    beta = _t(rng, (2,))
    t = rng.standard_normal((4, 2, 3, 3))

    def build():
        return ad.mse(ad.batchnorm(x, gamma, beta, BatchNormState(2, np.float64), training=True), t)

    return ad.finite_difference_check(build, [x, gamma, beta])


def _check_elu(rng):
    # central differences are invalid inside the kink radius; keep |x| > 2h
    raw = rng.standard_normal(40)
    x = Tensor(raw + np.sign(raw) * 3e-3, requires_grad=True)
    return ad.finite_difference_check(lambda: ad.mse(ad.elu(x), np.zeros(40)), [x])


def _check_linear(rng):
    x = _t(rng, (3, 5))
    w = _t(rng, (4, 5))
    b = _t(rng, (4,))
    t = rng.standard_normal((3, 4))
    return ad.finite_difference_check(lambda: ad.mse(ad.linear(x, w, b), t), [x, w, b])


def _check_add(rng):
    x, y = _t(rng, (3, 4)), _t(rng, (3, 4))
    return ad.finite_difference_check(lambda: ad.mse(ad.add(x, y), np.ones((3, 4))), [x, y])


def _check_l1(rng):
    # keep |x - t| away from the kink so central differences stay valid
    x = _t(rng, (30,))
    t = x.data - rng.uniform(0.05, 1.0, 30) * rng.choice([-1.0, 1.0], 30)
    return ad.finite_difference_check(lambda: ad.l1(x, t), [x])


def _check_mse(rng):
    x = _t(rng, (30,))
    t = rng.standard_normal(30)
    return ad.finite_difference_check(lambda: ad.mse(x, t), [x])


def _check_softmax_xent(rng):
    x = _t(rng, (5, 3))
    labels = rng.integers(0, 3, 5)
    return ad.finite_difference_check(lambda: ad.softmax_xent(x, labels), [x])


def _check_gradient_reversal(rng):
    # reversal negates: compare against the explicitly negated twin graph
    x0 = rng.standard_normal((3, 4))
    w = rng.standard_normal((2, 4))

    def grad(with_grl):
        x = Tensor(x0.copy(), requires_grad=True)
        h = ad.gradient_reversal(x, 0.8) if with_grl else x
        ad.mse(ad.linear(h, Tensor(w), Tensor(np.zeros(2))), np.zeros((3, 2))).backward()
        return x.grad

    a, b = grad(True), grad(False)
    denom = max(np.abs(b).max(), 1e-12)
    return float(np.abs(a + 0.8 * b).max() / denom)


def _check_matmul_const(rng):
    x = _t(rng, (3, 5))
    m = rng.standard_normal((5, 6))
    return ad.finite_difference_check(lambda: ad.mse(ad.matmul_const(x, m), np.zeros((3, 6))), [x])


def _check_top_half(rng):
    x = _t(rng, (2, 3, 6, 12))
    return ad.finite_difference_check(
        lambda: ad.mse(ad.top_half(x), np.zeros((2, 3, 3, 12))), [x]
    )


def _check_batch_slice(rng):
    x = _t(rng, (6, 4))
    return ad.finite_difference_check(lambda: ad.mse(ad.batch_slice(x, 1, 4), np.zeros((3, 4))), [x])


def _check_reshape(rng):
    x = _t(rng, (2, 3, 4))
    return ad.finite_difference_check(lambda: ad.mse(ad.reshape(x, (6, 4)), np.zeros((6, 4))), [x])


def _check_concat0(rng):
    x, y = _t(rng, (2, 4)), _t(rng, (3, 4))
    return ad.finite_difference_check(lambda: ad.mse(ad.concat0(x, y), np.zeros((5, 4))), [x, y])


def _check_power_scale(rng):
    x = Tensor(rng.uniform(0.05, 1.0, (20,)), requires_grad=True)
    return ad.finite_difference_check(
        lambda: ad.mse(ad.power_scale(x, 1 / 30.0, 2.2), np.zeros(20)), [x], h=1e-6
    )


def _check_scalar_ops(rng):
    x = _t(rng, (10,))
    return ad.finite_difference_check(
        lambda: ad.mse(ad.add_scalar(ad.mul_scalar(x, 1.7), 0.3), np.zeros(10)), [x]
    )


CHECKS = [
    ("conv2d", _check_conv2d),
    ("conv_transpose2d", _check_conv_transpose2d),
    ("batchnorm", _check_batchnorm),
    ("elu", _check_elu),
    ("linear", _check_linear),
    ("add", _check_add),
    ("l1", _check_l1),
    ("mse", _check_mse),
    ("softmax_xent", _check_softmax_xent),
    ("gradient_reversal", _check_gradient_reversal),
    ("matmul_const", _check_matmul_const),
    ("top_half", _check_top_half),
    ("batch_slice", _check_batch_slice),
    ("reshape", _check_reshape),
    ("concat0", _check_concat0),
    ("power_scale", _check_power_scale),
    ("scalar_ops", _check_scalar_ops),
]


def run_gradcheck(instances=20, seed=0, tolerance=TOLERANCE):
    """Per-op table of worst finite-difference errors over random instances."""
    rows = []
    for name, fn in CHECKS:
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        worst = 0.0
        for _ in range(instances):
            worst = max(worst, float(fn(rng)))
        rows.append((name, instances, worst, worst < tolerance))
    return rows


def format_table(rows):
    lines = [f"{'op':<20} {'instances':>9} {'max rel err':>12}  result"]
    for name, n, err, ok in rows:
        lines.append(f"{name:<20} {n:>9} {err:>12.3e}  {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines)
