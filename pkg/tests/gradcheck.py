"""Independent central-difference oracle and the primitive catalogue it checks."""

import numpy as np
import scipy.sparse as sp

from dbgan import autodiff as ad
from dbgan.autodiff import Tensor


def numeric_grad(f, x, step=1e-5):
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        hi = float(f(x))
        x[idx] = orig - step
        lo = float(f(x))
        x[idx] = orig
        out[idx] = (hi - lo) / (2 * step)
    return out


def rel_err(a, b):
    scale = max(np.abs(a).max(initial=0), np.abs(b).max(initial=0))
    return float(np.abs(a - b).max(initial=0) / scale) if scale > 0 else float(np.abs(a - b).max(initial=0))


def check(fn, x, step=1e-5):
    """Relative error of backward() vs central differences for scalar ``fn(Tensor)``."""
    xt = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    analytic = ad.backward(fn(xt), [xt])[xt]
    # grad mode stays on: penalties need a live graph to take input gradients
    numeric = numeric_grad(lambda v: fn(Tensor(v)).item(), x, step)
    return rel_err(analytic, numeric)


def _away_from_zero(x, eps=1e-3):
    return np.where(np.abs(x) < eps, np.sign(x + 1e-300) * (eps + np.abs(x)) + eps, x)


def primitive_cases(seed=0):
    """``(name, fn, x)`` triples; each fn maps a Tensor to a scalar."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    pos = rng.uniform(0.2, 2.0, size=(4, 3))
    w = rng.normal(size=(4, 3))
    W = Tensor(w)
    m = Tensor(rng.normal(size=(3, 5)))
    left = Tensor(rng.normal(size=(2, 4)))
    sparse = sp.random(4, 4, density=0.5, random_state=seed, format="csr")
    r5 = Tensor(rng.normal(size=(4, 5)))
    other = Tensor(rng.normal(size=(4, 3)))
    rows = Tensor(rng.normal(size=(6, 3)))
    idx = np.array([3, 0, 3, 1])

    def weighted(t):
        return ad.sum(t * W)

    return [
        ("add", lambda t: weighted(t + other), x),
        ("add_scalar", lambda t: weighted(t + 2.5), x),
        ("sub", lambda t: weighted(other - t), x),
        ("neg", lambda t: weighted(-t), x),
        ("mul", lambda t: ad.sum(t * t * W), x),
        ("mul_scalar", lambda t: weighted(3.0 * t), x),
        ("div", lambda t: weighted(other / t), pos),
        ("matmul_left", lambda t: ad.sum((t @ m) * r5), x),
        ("matmul_right", lambda t: ad.sum(left @ t @ m), x),
        ("spmm", lambda t: weighted(ad.spmm(sparse, t)), x),
        ("transpose", lambda t: ad.sum(ad.transpose(t) @ W), x),
        ("relu", lambda t: weighted(ad.relu(t)), _away_from_zero(x)),
        ("sigmoid", lambda t: weighted(ad.sigmoid(t)), x),
        ("log", lambda t: weighted(ad.log(t)), pos),
        ("square", lambda t: weighted(ad.square(t)), x),
        ("sqrt", lambda t: weighted(ad.sqrt(t)), pos),
        ("reciprocal", lambda t: weighted(ad.reciprocal(t)), pos),
        ("clip", lambda t: weighted(ad.clip(t, -0.5, 0.5)), np.where(np.abs(np.abs(x) - 0.5) < 1e-3, 0.1, x)),
        ("sum_all", lambda t: ad.sum(ad.square(t)), x),
        ("sum_axis0", lambda t: ad.sum(ad.square(ad.sum(t, axis=0))), x),
        ("sum_axis1", lambda t: ad.sum(ad.square(ad.sum(t, axis=1))), x),
        ("mean", lambda t: ad.mean(ad.square(t)), x),
        ("mean_axis0", lambda t: ad.sum(ad.square(ad.mean(t, axis=0))), x),
        ("row_norm", lambda t: ad.sum(ad.row_norm(t) * Tensor(np.arange(1.0, 5.0).reshape(4, 1))), x),
        ("concat_rows", lambda t: ad.sum(ad.concat_rows([t, rows, t]) @ m), x),
        ("row_slice", lambda t: ad.sum(ad.square(ad.row_slice(t, 1, 3))), x),
        ("take_rows", lambda t: ad.sum(ad.take_rows(t, idx) * W), x),
        ("scatter_rows", lambda t: ad.sum(ad.square(ad.scatter_rows(t, np.array([5, 0, 2, 4]), 6))), x),
    ]


def linear_critic(w):
    return lambda z: z @ w


def gp_param_check(seed=0, step=1e-5):
    """Double-backprop check: gradient of a gradient penalty w.r.t. critic weights."""
    from dbgan.nn import Mlp, discriminator_forward
    from dbgan.training import gradient_penalty

    rng = np.random.default_rng(seed)
    w1 = rng.normal(size=(3, 4)) * 0.7
    b1 = rng.normal(size=(1, 4)) * 0.3
    w2 = rng.normal(size=(4, 1))
    real = rng.normal(size=(6, 3))
    fake = rng.normal(size=(6, 3))

    def penalty(w1_t):
        mlp = Mlp([w1_t, Tensor(w2)], [Tensor(b1), Tensor(np.zeros((1, 1)))])
        return gradient_penalty(lambda z: discriminator_forward(z, mlp), real, fake, seed=123)

    # relu kinks would spoil the central differences; check pre-activations stay away from 0
    return check(penalty, w1, step)
