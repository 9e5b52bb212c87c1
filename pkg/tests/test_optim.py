import numpy as np
import pytest

from fedsupnet import engine, optim
from fedsupnet.engine import SpatialField

from reference import ADAM_SCALAR_SEQUENCE, scalar_adam_sequence


def _param(value) -> dict[str, SpatialField]:
    f = engine.parameter(np.asarray(value, dtype=np.float64))
    return {"p": f}


class TestSGD:
    def test_basic_step(self):
        params = _param([1.0])
        params["p"].grad = np.array([0.5])
        optim.SGD(lr=0.1).step(params)
        assert abs(params["p"].data[0] - 0.95) < 1e-15

    def test_missing_gradient_names_parameter(self):
        params = _param([1.0])
        with pytest.raises(ValueError, match="'p'"):
            optim.SGD(lr=0.1).step(params)


class TestAdam:
    def test_matches_frozen_scalar_sequence(self):
        assert scalar_adam_sequence() == ADAM_SCALAR_SEQUENCE
        params = _param([1.0])
        opt = optim.Adam(lr=0.1, betas=(0.9, 0.999), eps=1e-8)
        for expected in ADAM_SCALAR_SEQUENCE:
            params["p"].grad = np.array([0.3])
            opt.step(params)
            assert abs(params["p"].data[0] - expected) < 1e-12

    def test_first_step_magnitude_is_lr_like(self):
        params = _param([1.0])
        opt = optim.Adam(lr=0.1)
        params["p"].grad = np.array([0.3])
        opt.step(params)
        # bias-corrected first step moves by ~lr regardless of |g|
        assert abs((1.0 - params["p"].data[0]) - 0.1) < 1e-7


class TestNovoGrad:
    def test_zero_gradient_no_change(self):
        params = _param([1.0, -2.0])
        opt = optim.NovoGrad(lr=0.01, weight_decay=0.0)
        for _ in range(3):
            params["p"].grad = np.zeros(2)
            opt.step(params)
        assert np.array_equal(params["p"].data, [1.0, -2.0])

    def test_first_step_normalizes_by_gradient_norm(self):
        params = _param([0.0, 0.0])
        opt = optim.NovoGrad(lr=0.1, betas=(0.95, 0.98), eps=1e-8)
        g = np.array([3.0, 4.0])  # norm 5
        params["p"].grad = g.copy()
        opt.step(params)
        assert np.allclose(params["p"].data, -0.1 * g / 5.0, atol=1e-8)

    def test_weight_decay_pulls_towards_zero(self):
        params = _param([1.0])
        opt = optim.NovoGrad(lr=0.1, weight_decay=0.5)
        params["p"].grad = np.array([0.0])
        opt.step(params)
        assert params["p"].data[0] < 1.0


class TestInvariants:
    @pytest.mark.parametrize("kind,lr", [("sgd", 0.1), ("adam", 0.1),
                                         ("novograd", 0.1)])
    def test_zero_grad_zero_decay_no_change(self, kind, lr):
        rng = np.random.default_rng(0)
        params = _param(rng.normal(size=5))
        before = params["p"].data.copy()
        opt = optim.make_optimizer(kind, lr)
        for _ in range(5):
            params["p"].grad = np.zeros(5)
            opt.step(params)
        assert np.array_equal(params["p"].data, before)

    @pytest.mark.parametrize("kind,lr", [("sgd", 0.4), ("adam", 0.15),
                                         ("novograd", 0.01)])
    def test_quadratic_convergence(self, kind, lr):
        # f(p) = 0.5 * sum(a_i p_i^2) in 10 dims, 200 steps, final < 1% initial
        rng = np.random.default_rng(17)
        a = rng.uniform(0.5, 2.0, size=10)
        p0 = rng.normal(size=10)
        params = _param(p0)
        opt = optim.make_optimizer(kind, lr)
        initial = 0.5 * float((a * p0 ** 2).sum())
        for _ in range(200):
            params["p"].grad = a * params["p"].data
            opt.step(params)
        final = 0.5 * float((a * params["p"].data ** 2).sum())
        assert final < 0.01 * initial

    @pytest.mark.parametrize("kind", ["sgd", "adam", "novograd"])
    def test_deterministic_trajectories(self, kind):
        def run():
            rng = np.random.default_rng(3)
            params = _param(rng.normal(size=6))
            opt = optim.make_optimizer(kind, 0.05)
            for _ in range(20):
                params["p"].grad = 0.3 * params["p"].data + 0.1
                opt.step(params)
            return params["p"].data.copy()

        assert np.array_equal(run(), run())
