import math

import numpy as np
import pytest

from dyhatr.errors import NumericError, ShapeError
from dyhatr.optim import SGD, Adam, make_optimizer
from dyhatr.tensor import Tensor


def adam_scalar_oracle(p0, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-python transcription of Adam for one scalar."""
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
    return p


def test_adam_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    p0 = rng.normal(size=(3, 2))
    grads = rng.normal(size=(25, 3, 2))
    w = Tensor(p0.copy(), requires_grad=True)
    opt = Adam([w], lr=0.05)
    for g in grads:
        opt.step([g])
    expected = np.array(
        [[adam_scalar_oracle(p0[i, j], grads[:, i, j], 0.05) for j in range(2)] for i in range(3)]
    )
    np.testing.assert_allclose(w.data, expected, rtol=0, atol=1e-12)


def test_adam_first_step_moves_by_lr():
    w = Tensor([1.0, -1.0], requires_grad=True)
    Adam([w], lr=0.1).step([np.array([3.0, -0.5])])
    np.testing.assert_allclose(w.data, [0.9, -0.9], atol=1e-8)


def test_sgd_step():
    w = Tensor([1.0, 2.0], requires_grad=True)
    SGD([w], lr=0.5).step([np.array([2.0, -2.0])])
    np.testing.assert_array_equal(w.data, [0.0, 3.0])


def test_rejects_bad_gradients():
    w = Tensor([1.0, 2.0], requires_grad=True)
    opt = make_optimizer("adam", [w], 0.1)
    with pytest.raises(ShapeError):
        opt.step([np.zeros(3)])
    with pytest.raises(NumericError):
        opt.step([np.array([np.inf, 0.0])])
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", [w], 0.1)
