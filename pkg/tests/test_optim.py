"""Adam update rule against its closed forms and a scripted descent oracle."""

import numpy as np
import pytest

from moesumm.optim import Adam, AdamState, adam_step
from moesumm.tensor import Tape, Tensor, add, backward, pow_int, sum_


def test_first_step_closed_form():
    # with g = 1 everywhere: m_hat = 1, v_hat = 1, step = lr / (1 + eps)
    lr, eps = 0.1, 1e-8
    p = Tensor(np.zeros(4), requires_grad=True)
    p.grad = np.ones(4)
    adam_step([("p", p)], {"p": AdamState(4)}, lr=lr, eps=eps, t=1)
    assert np.allclose(p.data, -lr * 1.0 / (1.0 + eps), atol=1e-15)


def test_zero_grad_is_noop():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    before = p.data.copy()
    adam_step([("p", p)], {"p": AdamState(2)}, lr=0.1, t=1)
    assert np.array_equal(p.data, before)


def test_invalid_hyperparameters_rejected():
    p = Tensor([0.0], requires_grad=True)
    with pytest.raises(ValueError):
        Adam([("p", p)], lr=0.0)
    with pytest.raises(ValueError):
        Adam([("p", p)], lr=0.1, eps=0.0)
    with pytest.raises(ValueError):
        adam_step([("p", p)], {"p": AdamState(1)}, lr=-1.0)


def _adam_oracle_scalar(grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-python replay of the bias-corrected recurrence."""
    x, m, v = 0.0, 0.0, 0.0
    xs = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
        xs.append(x)
    return xs


def test_matches_scalar_oracle_on_fixed_grads():
    grads = [1.0, -0.5, 0.25, 2.0, -1.0]
    p = Tensor([0.0], requires_grad=True)
    opt = Adam([("p", p)], lr=0.05)
    for g in grads:
        p.grad = np.array([g])
        opt.step()
    assert abs(p.data[0] - _adam_oracle_scalar(grads, 0.05)[-1]) < 1e-14


def _adam_oracle_quadratic(lr=0.1, steps=50, b1=0.9, b2=0.999, eps=1e-8):
    """Scripted replay of Adam on f(x) = (x - 2)^2 from x = 0."""
    x, m, v = 0.0, 0.0, 0.0
    fs = []
    for t in range(1, steps + 1):
        fs.append((x - 2.0) ** 2)
        g = 2.0 * (x - 2.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return x, fs


def test_descent_on_quadratic_matches_oracle():
    # 50 steps on f(x) = (x - 2)^2 from 0: monotone descent phase, small
    # oscillation once the optimum is overshot (step 25 in the oracle),
    # final |x - 2| < 0.5
    p = Tensor([0.0], requires_grad=True)
    opt = Adam([("p", p)], lr=0.1)
    fs = []
    for _ in range(50):
        opt.zero_grad()
        with Tape() as tape:
            loss = sum_(pow_int(add(p, -2.0), 2))
            backward(loss, tape)
        fs.append(loss.item())
        opt.step()
    x_oracle, fs_oracle = _adam_oracle_quadratic()
    assert np.allclose(fs, fs_oracle, atol=1e-12)
    assert abs(p.data[0] - x_oracle) < 1e-12
    assert abs(p.data[0] - 2.0) < 0.5
    descent = fs[:24]
    assert all(b < a for a, b in zip(descent, descent[1:]))
