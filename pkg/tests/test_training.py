"""NLL values, Adam update arithmetic, and training-loop behavior."""

import numpy as np
import pytest

import differflow.autodiff as ad
from differflow.autodiff import Tensor
from differflow.flow import FlowModel, flow_forward
from differflow.training import (Adam, DivergenceError, TrainConfig, mean_nll,
                                 model_nll, nll, train)


class TestNll:
    def test_zero_everything(self):
        assert nll(np.zeros(4, dtype=np.float32), 0.0).data == 0.0

    def test_unit_vector(self):
        assert nll(np.array([1.0, 1.0], dtype=np.float32), 0.0).data == pytest.approx(1.0)

    def test_logdet_sign(self):
        assert nll(np.zeros(4, dtype=np.float32), 2.0).data == pytest.approx(-2.0)

    def test_batched(self):
        z = np.array([[1.0, 1.0], [0.0, 0.0]], dtype=np.float32)
        out = nll(z, np.array([0.0, 2.0], dtype=np.float32))
        assert np.allclose(out.data, [1.0, -2.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ad.NonFiniteError):
            nll(np.array([np.nan, 0.0], dtype=np.float32), 0.0)


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        p = Tensor(np.array([1.5, -2.0], dtype=np.float32))
        opt = Adam([p], learning_rate=1e-3)
        p.grad = np.zeros(2, dtype=np.float32)
        for _ in range(5):
            opt.step()
        assert np.array_equal(p.data, np.array([1.5, -2.0], dtype=np.float32))

    def test_first_step_magnitude(self):
        # m_hat = v_hat = 1 after one unit-gradient step: delta = lr / (1 + eps)
        p = Tensor(np.array([0.0], dtype=np.float64))
        opt = Adam([p], learning_rate=1e-3, eps=1e-8)
        p.grad = np.ones(1)
        opt.step()
        assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-9)

    def test_two_identical_steps(self):
        p = Tensor(np.array([0.0], dtype=np.float64))
        opt = Adam([p], learning_rate=1e-3)
        for _ in range(2):
            p.grad = np.ones(1)
            opt.step()
        assert p.data[0] == pytest.approx(-2e-3, abs=1e-6)

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(3, dtype=np.float32))
        opt = Adam([p])
        p.grad = np.zeros(2, dtype=np.float32)
        with pytest.raises(ValueError):
            opt.step()


def small_config(**kw):
    defaults = dict(epochs=10, batch_size=64, blocks=2, hidden_width=32, seed=1)
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestTrain:
    def test_zero_epochs_returns_identity_model(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((500, 8)).astype(np.float32)
        result = train(x, small_config(epochs=0))
        assert result.epoch_nll == []
        # identity-initialized blocks: NLL on N(0,I) data stays near D/2
        assert mean_nll(result.model, x) == pytest.approx(4.0, abs=0.5)

    def test_loss_decreases_on_offset_data(self):
        rng = np.random.default_rng(1)
        x = (rng.standard_normal((600, 8)) * 0.5 + 2.0).astype(np.float32)
        # defeat the automatic standardization so there is something to learn:
        # feed a bimodal scale mixture
        x[:300] *= 2.0
        result = train(x, small_config(epochs=11))
        assert result.epoch_nll[10] < result.epoch_nll[0]

    def test_deterministic_histories(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((300, 8)).astype(np.float32)
        a = train(x, small_config(epochs=4))
        b = train(x, small_config(epochs=4))
        assert a.epoch_nll == b.epoch_nll
        assert a.holdout_nll == b.holdout_nll
        for pa, pb in zip(a.model.parameters().values(), b.model.parameters().values()):
            assert np.array_equal(pa.data, pb.data)

    def test_gaussian_reaches_near_optimal_holdout(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1000, 8)).astype(np.float32)
        result = train(x, small_config(epochs=15, blocks=2, hidden_width=32))
        assert 3.0 < result.holdout_nll[-1] < 5.0  # optimum D/2 = 4

    def test_mixture_beats_identity_baseline(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((4400, 8)).astype(np.float32)
        x[:, 0] += 3.0 * (rng.integers(0, 2, 4400) * 2 - 1).astype(np.float32)
        holdout = x[-400:]
        # gentler noise than default: 0.5 would wash out the bimodal gap after
        # standardization squeezes the modes to +-0.95
        cfg = small_config(epochs=60, blocks=8, hidden_width=64, batch_size=96,
                           holdout_fraction=0.0, noise_std=0.2)
        result = train(x[:-400], cfg)
        baseline = FlowModel.from_seed(8, cfg.blocks, cfg.hidden_width, seed=cfg.seed)
        baseline.set_standardization(x[:-400].mean(axis=0), x[:-400].std(axis=0))
        assert mean_nll(result.model, holdout) < mean_nll(baseline, holdout)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train(np.zeros((0, 8), dtype=np.float32), small_config())

    def test_non_finite_features_rejected(self):
        x = np.zeros((10, 4), dtype=np.float32)
        x[0, 0] = np.inf
        with pytest.raises(ValueError):
            train(x, small_config())

    def test_divergence_guard_trips(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((64, 4)).astype(np.float32)
        with pytest.raises(DivergenceError):
            train(x, small_config(epochs=2, divergence_limit=1e-6, noise_std=0.0))

    def test_provider_resampling_is_supported(self):
        rng = np.random.default_rng(6)
        base = rng.standard_normal((200, 4)).astype(np.float32)

        calls = []

        def provider(epoch):
            calls.append(epoch)
            shift = np.float32(epoch * 0.01)
            return base + shift

        result = train(provider, small_config(epochs=3))
        assert calls[:4] == [0, 0, 1, 2]  # probe call, then one per epoch
        assert len(result.epoch_nll) == 3


def test_nll_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    model = FlowModel.from_seed(8, 2, 16, seed=9, dtype=np.float64)
    for p in model.parameters().values():
        p.data += rng.normal(0, 0.1, p.data.shape)
    x = rng.standard_normal((4, 8))

    def loss_value():
        z, logdet = flow_forward(x, model)
        return float(nll(z, logdet).data.sum())

    z, logdet = flow_forward(x, model)
    ad.backward(ad.reduce_sum(nll(z, logdet)))

    step = 1e-5
    checked = 0
    for name, p in model.parameters().items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = grad.ravel()
        idx = rng.choice(flat.size, size=min(4, flat.size), replace=False)
        for i in idx:
            original = flat[i]
            flat[i] = original + step
            hi = loss_value()
            flat[i] = original - step
            lo = loss_value()
            flat[i] = original
            numeric = (hi - lo) / (2 * step)
            assert gflat[i] == pytest.approx(numeric, rel=1e-3, abs=1e-6), name
            checked += 1
    assert checked > 100


def test_model_nll_handles_single_vector():
    model = FlowModel.from_seed(4, 1, 8, seed=0)
    model.set_standardization(np.zeros(4), np.ones(4))
    out = model_nll(model, np.ones((1, 4), dtype=np.float32))
    assert out.shape == (1,)
