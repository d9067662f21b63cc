import numpy as np
import pytest

from longspine.net import Param
from longspine.optim import OptimState, sgd_step, sgd_step_scalar


def _param(value, name="p"):
    return Param(name, np.array(value, dtype=np.float64))


def test_zero_gradient_no_decay_is_identity():
    p = _param([1.0, -2.0, 3.0])
    state = OptimState(lr=0.1, momentum=0.9, weight_decay=0.0)
    for _ in range(5):
        p.zero_grad()
        sgd_step([p], state)
    assert np.array_equal(p.data, [1.0, -2.0, 3.0])


def test_plain_gradient_step():
    p = _param([1.0])
    p.grad[...] = 1.0
    sgd_step([p], OptimState(lr=0.1, momentum=0.0, weight_decay=0.0))
    assert p.data[0] == pytest.approx(0.9, abs=1e-15)


def test_two_momentum_steps_match_hand_unrolled_recurrence():
    lr, mu, wd = 0.05, 0.9, 0.01
    w, v = 2.0, 0.0
    grads = [0.7, -0.3]
    expected = []
    for g in grads:
        w, v = sgd_step_scalar(w, g, v, lr, mu, wd)
        expected.append(w)

    p = _param([2.0])
    state = OptimState(lr=lr, momentum=mu, weight_decay=wd)
    got = []
    for g in grads:
        p.zero_grad()
        p.grad[...] = g
        sgd_step([p], state)
        got.append(float(p.data[0]))
    assert got == pytest.approx(expected, rel=1e-15)

    # explicit unroll of v <- mu v - lr (g + wd w); w <- w + v
    v1 = -lr * (grads[0] + wd * 2.0)
    w1 = 2.0 + v1
    v2 = mu * v1 - lr * (grads[1] + wd * w1)
    w2 = w1 + v2
    assert got[1] == pytest.approx(w2, rel=1e-15)


def test_frozen_params_skipped():
    p = _param([1.0])
    p.frozen = True
    p.grad[...] = 10.0
    sgd_step([p], OptimState(lr=0.5, momentum=0.0, weight_decay=0.0))
    assert p.data[0] == 1.0


def test_state_validation():
    with pytest.raises(ValueError):
        OptimState(lr=-0.1)
    with pytest.raises(ValueError):
        OptimState(lr=0.1, momentum=1.0)
    with pytest.raises(ValueError):
        OptimState(lr=0.1, weight_decay=-1e-9)


def test_velocity_shape_mismatch_rejected():
    p = _param([1.0, 2.0])
    state = OptimState(lr=0.1)
    state.velocities["p"] = np.zeros(3)
    p.grad[...] = 1.0
    with pytest.raises(Exception, match="velocity"):
        sgd_step([p], state)
