import math

import numpy as np
import pytest

from ntg.optim import Adam


def scalar_adam(p, grads, lr=2e-4, b1=0.5, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p


class TestAdam:
    def test_matches_scalar_reference(self):
        grads = [0.3, -1.2, 0.05, 2.0, -0.7]
        param = np.array([1.5])
        opt = Adam()
        for g in grads:
            opt.step({"p": param}, {"p": np.array([g])})
        assert param[0] == pytest.approx(scalar_adam(1.5, grads), abs=1e-12)
        assert opt.t == len(grads)

    def test_first_step_moves_by_lr(self):
        param = np.array([0.0, 0.0])
        Adam(lr=0.1).step({"p": param}, {"p": np.array([3.0, -0.001])})
        np.testing.assert_allclose(param, [-0.1, 0.1], rtol=1e-4)

    def test_zero_lr_leaves_params_bitwise(self, rng):
        value = rng.standard_normal((3, 3))
        param = value.copy()
        opt = Adam()
        for _ in range(3):
            opt.step({"p": param}, {"p": rng.standard_normal((3, 3))}, lr=0.0)
        assert np.array_equal(param, value)

    def test_missing_gradient_skips_param(self):
        param = np.ones(2)
        Adam(lr=0.5).step({"p": param}, {})
        np.testing.assert_array_equal(param, np.ones(2))

    def test_negative_lr_rejected(self):
        with pytest.raises(ValueError):
            Adam(lr=-1.0)
