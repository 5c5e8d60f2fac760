import numpy as np
import pytest

from truncdiff.exceptions import NumericError, ParameterError
from truncdiff.mixture import GaussianMixture
from truncdiff.network import (AdapterDenoiser, forward, grad_check, init_params, is_adapter_output,
                               is_base, load_checkpoint, mlp_predict_eps, save_checkpoint,
                               squared_error_loss, train_denoiser)
from truncdiff.schedule import make_linear_schedule

SCHED = make_linear_schedule(200, 5e-4, 0.1)


def random_net(seed=0, cond_dim=3, hidden=(16, 16, 16), adapter_scale=0.3):
    rng = np.random.default_rng(seed)
    p = init_params(2, cond_dim, hidden, rng, zero_output=False, adapter_init="random")
    for k in p:
        if is_adapter_output(k) and adapter_scale:
            p[k] = adapter_scale * rng.standard_normal(p[k].shape)
    return p


def batch(seed, n=12, cond_dim=3):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((n, 2)), rng.integers(1, SCHED.T + 1, size=n),
            rng.standard_normal((n, cond_dim)))


class TestForward:
    def test_fresh_adapter_equals_base(self):
        p = random_net(adapter_scale=0)
        x, t, c = batch(1, n=200)
        np.testing.assert_array_equal(forward(p, SCHED, x, t, c), forward(p, SCHED, x, t, use_adapter=False))

    def test_zero_base_outputs_zero(self):
        p = {k: np.zeros_like(v) for k, v in random_net().items()}
        x, t, c = batch(2)
        np.testing.assert_array_equal(mlp_predict_eps(p, SCHED, x, t, c), 0.0)

    def test_reproducible(self):
        p = random_net()
        x, t, c = batch(3)
        np.testing.assert_array_equal(forward(p, SCHED, x, t, c), forward(p, SCHED, x, t, c))

    def test_adapter_changes_output_once_nonzero(self):
        p = random_net(adapter_scale=0.3)
        x, t, c = batch(4)
        assert not np.allclose(forward(p, SCHED, x, t, c), forward(p, SCHED, x, t, use_adapter=False))

    def test_width_mismatch(self):
        p = random_net()
        x, t, c = batch(5)
        with pytest.raises(ParameterError):
            forward(p, SCHED, np.zeros((3, 4)), 5, None)
        with pytest.raises(ParameterError):
            forward(p, SCHED, x, t, c[:, :2])

    def test_copy_init_mirrors_base(self):
        rng = np.random.default_rng(0)
        p = init_params(2, 3, (8, 8), rng, adapter_init="copy")
        np.testing.assert_array_equal(p["adapter.A1"][:4], p["base.W1"])
        np.testing.assert_array_equal(p["adapter.A1"][4:], 0.0)
        np.testing.assert_array_equal(p["adapter.A2"], p["base.W2"])
        assert all(not np.any(p[k]) for k in p if is_adapter_output(k))


class TestGradients:
    def test_output_layer_is_exact(self):
        # the loss is quadratic in the output layer: only rounding (~1e-16 / h) remains
        p = random_net(seed=5)
        x, t, c = batch(6)
        err = grad_check(p, SCHED, x, t, c, probe_count=30, rng=0, only=("base.W_out", "base.b_out"))
        assert err < 1e-6

    def test_full_adapter_network(self):
        p = random_net(seed=7)
        x, t, c = batch(8)
        assert grad_check(p, SCHED, x, t, c, probe_count=100, rng=1) < 1e-4

    def test_locked_base_gradient_is_exactly_zero(self):
        p = random_net(seed=9)
        x, t, c = batch(10)
        eps = np.random.default_rng(0).standard_normal(x.shape)
        locked = tuple(k for k in p if is_base(k))
        _, grads = squared_error_loss(p, SCHED, x, t, c, eps, with_grads=True, locked=locked)
        assert all(not np.any(grads[k]) for k in locked)
        assert any(np.any(grads[k]) for k in p if not is_base(k))

    def test_locked_gradcheck_probes_only_adapter(self):
        p = random_net(seed=11)
        x, t, c = batch(12)
        assert grad_check(p, SCHED, x, t, c, probe_count=50, rng=2, lock_base=True) < 1e-4


class TestTraining:
    gm = GaussianMixture.symmetric_pair(3.0)

    def test_zero_output_loss_is_noise_energy(self):
        rng = np.random.default_rng(0)
        p = init_params(2, 0, (8,), rng, zero_output=True)
        hist = train_denoiser(p, self.gm, SCHED, steps=200, batch_size=256, learning_rate=0,
                              rng=rng, lock_base=False)
        # E||eps||^2 = d = 2; the mean of 200 batch means has SE ~ sqrt(4 / 51200)
        assert abs(hist.mean() - 2.0) < 3 * np.sqrt(4 / (200 * 256))

    def test_zero_learning_rate_leaves_params_untouched(self):
        rng = np.random.default_rng(1)
        p = init_params(2, 0, (8, 8), rng, zero_output=False)
        before = {k: v.copy() for k, v in p.items()}
        train_denoiser(p, self.gm, SCHED, steps=20, batch_size=32, learning_rate=0, rng=rng,
                       lock_base=False)
        assert all(np.array_equal(before[k], p[k]) for k in p)

    def test_locked_base_bit_identical(self):
        rng = np.random.default_rng(2)
        p = init_params(2, 2, (16, 16), rng, zero_output=False)
        before = {k: v.copy() for k, v in p.items()}
        train_denoiser(p, self.gm, SCHED, steps=200, batch_size=64, learning_rate=0.05, rng=rng,
                       cond_fn=lambda x0, r: x0 + 0.1 * r.standard_normal(x0.shape), lock_base=True)
        assert all(np.array_equal(before[k], p[k]) for k in p if is_base(k))
        assert any(not np.array_equal(before[k], p[k]) for k in p if not is_base(k))

    def test_truncated_time_range(self, monkeypatch):
        import truncdiff.network as network

        seen = []
        real = network.squared_error_loss

        def spy(params, sched, x, t, *args, **kwargs):
            seen.append(np.asarray(t))
            return real(params, sched, x, t, *args, **kwargs)

        monkeypatch.setattr(network, "squared_error_loss", spy)
        p = init_params(2, 0, (8,), np.random.default_rng(3))
        train_denoiser(p, self.gm, SCHED, steps=50, batch_size=64, learning_rate=0,
                       rng=np.random.default_rng(7), t_max=10)
        steps = np.concatenate(seen)
        assert steps.min() == 1 and steps.max() == 10

    def test_cosine_decay_final_step_is_tiny(self, monkeypatch):
        import truncdiff.network as network

        p = init_params(2, 0, (8,), np.random.default_rng(5), zero_output=False)
        grads_seen = []
        real = network.squared_error_loss

        def spy(*args, **kwargs):
            loss, grads = real(*args, **kwargs)
            grads_seen.append({k: v.copy() for k, v in grads.items()})
            return loss, grads

        monkeypatch.setattr(network, "squared_error_loss", spy)
        before = p["base.W_out"].copy()
        train_denoiser(p, self.gm, SCHED, steps=3, batch_size=8, learning_rate=0.2,
                       rng=np.random.default_rng(0), lock_base=False, lr_decay="cosine")
        rates = [0.2, 0.2 * 0.5 * (1 + np.cos(np.pi / 3)), 0.2 * 0.5 * (1 + np.cos(2 * np.pi / 3))]
        expected = before - sum(r * g["base.W_out"] for r, g in zip(rates, grads_seen))
        np.testing.assert_allclose(p["base.W_out"], expected, rtol=1e-12, atol=1e-14)
        with pytest.raises(ParameterError):
            train_denoiser(p, self.gm, SCHED, steps=1, batch_size=8, learning_rate=0.1,
                           rng=np.random.default_rng(0), lr_decay="step")

    def test_nonfinite_loss_raises_with_step(self):
        rng = np.random.default_rng(4)
        p = init_params(2, 0, (8,), rng, zero_output=False)
        p["base.b_out"][:] = np.inf
        with pytest.raises(NumericError) as info:
            train_denoiser(p, self.gm, SCHED, steps=5, batch_size=8, learning_rate=0.1, rng=rng)
        assert info.value.step == 0

    def test_loss_decreases_on_sample_array(self):
        X = self.gm.sample(4000, 0)
        net = AdapterDenoiser(schedule=SCHED, hidden_sizes=(32, 32), n_iter=1500, batch_size=128,
                              learning_rate=0.05, random_state=0).fit(X)
        h = net.loss_history_
        assert h[-300:].mean() < 0.75 * h[:10].mean()


class TestEstimator:
    def test_get_params_roundtrip(self):
        est = AdapterDenoiser(schedule=SCHED, hidden_sizes=(8,), cond_dim=2, lock_base=True)
        params = est.get_params()
        assert params["cond_dim"] == 2 and params["lock_base"] is True
        from sklearn.base import clone
        assert clone(est).get_params()["hidden_sizes"] == (8,)

    def test_unfitted_predict_raises(self):
        with pytest.raises(ParameterError):
            AdapterDenoiser().predict_eps(np.zeros((1, 2)), 1)

    def test_copy_and_lock_two_phase(self):
        gm = GaussianMixture.symmetric_pair(3.0)
        est = AdapterDenoiser(schedule=SCHED, hidden_sizes=(16, 16), cond_dim=2, n_iter=300,
                              batch_size=64, random_state=0).fit(gm)
        est.reset_adapter()
        x, t, c = batch(0, cond_dim=2)
        np.testing.assert_array_equal(est.predict_eps(x, t, c), est.predict_eps_base(x, t))
        base = {k: v.copy() for k, v in est.params_.items() if is_base(k)}
        est.set_params(lock_base=True, warm_start=True).fit(
            gm, cond_fn=lambda x0, r: x0 + 0.2 * r.standard_normal(x0.shape))
        assert all(np.array_equal(base[k], est.params_[k]) for k in base)
        assert not np.array_equal(est.predict_eps(x, t, c), est.predict_eps_base(x, t))

    def test_checkpoint_roundtrip(self, tmp_path):
        est = AdapterDenoiser(schedule=SCHED, hidden_sizes=(8, 8), cond_dim=1, n_iter=20,
                              batch_size=16, random_state=1).fit(GaussianMixture.symmetric_pair())
        path = tmp_path / "net.npz"
        est.save(path)
        loaded = AdapterDenoiser.load(path)
        x, t, c = batch(2, cond_dim=1)
        np.testing.assert_array_equal(loaded.predict_eps(x, t, c), est.predict_eps(x, t, c))
        np.testing.assert_array_equal(loaded.schedule_.betas, SCHED.betas)
        with np.load(path) as data:
            assert data["base.W1"].dtype.str == "<f8"

    def test_checkpoint_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "x.npz"
        np.savez(path, a=np.zeros(2))
        with pytest.raises(ParameterError):
            load_checkpoint(path)

    def test_checkpoint_version_check(self, tmp_path):
        p = random_net()
        path = tmp_path / "v.npz"
        save_checkpoint(path, p, SCHED, {"version": 99})
        with pytest.raises(ParameterError, match="version"):
            load_checkpoint(path)
