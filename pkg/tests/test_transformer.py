import numpy as np
import pytest
import torch

from drtsad.dataset_io import SyntheticSpec, generate_synthetic, standardize
from drtsad.detectors._torch import flat_gradient, flat_parameters, set_flat_parameters
from drtsad.detectors.transformer import (
    MinimaxConfig,
    TransformerModel,
    association_discrepancy,
    criterion,
    inference_windows,
    init_net,
    phase_losses,
    prior_association,
    score_series,
    train_minimax,
)
from drtsad.errors import DimensionMismatch, InfiniteDivergence, PreconditionError
from drtsad.numerics import RandomSource, gradient_check

SMALL = dict(window=20, layers=1, heads=2, d_model=8, d_ff=16, lr=1e-2, train_stride=10, lam=1.0, smoothing=1e-4)


def small_dataset(d=4, seed=0, test_length=1000):
    spec = SyntheticSpec(n_dims=d, train_length=600, test_length=test_length, seed=seed, spike_count=4,
                         corr_break_count=1, level_shift_count=1, channels_per_anomaly=min(3, d), min_gap=10)
    return standardize(generate_synthetic(spec))[0]


def random_stochastic(rng, shape):
    a = rng.random(shape) + 0.05
    return a / a.sum(axis=-1, keepdims=True)


class TestPrior:
    def test_flat_limit(self):
        p = prior_association(8, np.full(8, 1e6))
        assert np.abs(p - 1 / 8).max() < 1e-6

    def test_delta_limit(self):
        np.testing.assert_allclose(prior_association(6, np.full(6, 1e-3)), np.eye(6), atol=1e-12)

    def test_direct_formula(self):
        p = prior_association(4, np.ones(4))
        for i in range(4):
            row = np.exp(-((i - np.arange(4)) ** 2) / 2.0)
            np.testing.assert_allclose(p[i], row / row.sum(), atol=1e-15)

    def test_rows_stochastic(self):
        rng = np.random.default_rng(0)
        p = prior_association(15, rng.uniform(0.01, 20, size=(3, 15)))
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-10)
        assert np.all(p >= 0)

    def test_sigma_positive(self):
        with pytest.raises(PreconditionError):
            prior_association(3, [1.0, 0.0, 1.0])


class TestDiscrepancy:
    def test_identical_is_zero(self):
        p = random_stochastic(np.random.default_rng(1), (2, 3, 6, 6))
        np.testing.assert_allclose(association_discrepancy(p, p), 0.0, atol=1e-14)

    def test_two_position_closed_form(self):
        eps = 1e-8
        p = np.eye(2)[None, None]
        s = np.full((1, 1, 2, 2), 0.5)
        hi, lo = (1 + eps) / (1 + 2 * eps), eps / (1 + 2 * eps)
        # symmetric KL: sum (p - s)(log p - log s) over the two entries
        expected = (hi - 0.5) * np.log(hi / 0.5) + (lo - 0.5) * np.log(lo / 0.5)
        np.testing.assert_allclose(association_discrepancy(p, s, 1e-8), [expected, expected], rtol=1e-10)

    def test_doubled_layers_same_mean(self):
        rng = np.random.default_rng(2)
        p, s = random_stochastic(rng, (1, 2, 5, 5)), random_stochastic(rng, (1, 2, 5, 5))
        np.testing.assert_allclose(association_discrepancy(np.concatenate([p, p]), np.concatenate([s, s])),
                                   association_discrepancy(p, s), atol=1e-15)

    def test_heads_averaged_before_divergence(self):
        rng = np.random.default_rng(3)
        p, s = random_stochastic(rng, (1, 3, 4, 4)), random_stochastic(rng, (1, 3, 4, 4))
        pm, sm = p.mean(axis=1, keepdims=True), s.mean(axis=1, keepdims=True)
        np.testing.assert_allclose(association_discrepancy(p, s, 0.0), association_discrepancy(pm, sm, 0.0), atol=1e-15)

    def test_non_negative(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            p, s = random_stochastic(rng, (2, 2, 7, 7)), random_stochastic(rng, (2, 2, 7, 7))
            assert association_discrepancy(p, s).min() >= -1e-12

    def test_unsmoothed_support_mismatch(self):
        with pytest.raises(InfiniteDivergence):
            association_discrepancy(np.eye(2)[None, None], np.full((1, 1, 2, 2), 0.5), smoothing=0.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            association_discrepancy(np.ones((1, 1, 2, 2)) / 2, np.ones((1, 1, 3, 3)) / 3)


class TestCriterion:
    def test_constant_assdis(self):
        rng = np.random.default_rng(5)
        x, xh = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        np.testing.assert_allclose(criterion(np.full(6, 2.5), x, xh), ((x - xh) ** 2).mean(axis=1) / 6, atol=1e-15)

    def test_perfect_reconstruction(self):
        x = np.random.default_rng(6).normal(size=(5, 2))
        np.testing.assert_array_equal(criterion(np.arange(5.0), x, x), 0.0)

    def test_three_point_hand_oracle(self):
        x = np.zeros((3, 2))
        xh = np.array([[1.0, 1.0], [2.0, 0.0], [0.0, 3.0]])
        z = 1 + np.exp(-1) + np.exp(-2)
        cad = np.array([1 / z, np.exp(-1) / z, np.exp(-2) / z])
        recon = np.array([1.0, 2.0, 4.5])
        np.testing.assert_allclose(criterion([0.0, 1.0, 2.0], x, xh), cad * recon, atol=1e-15)

    def test_monotone_in_residual(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            dis, x, xh = rng.random(8) * 5, rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
            i = rng.integers(0, 8)
            base = criterion(dis, x, xh)
            bumped = xh.copy()
            bumped[i] += np.sign(bumped[i] - x[i]) * rng.random(3)
            assert criterion(dis, x, bumped)[i] >= base[i]
            assert np.all(base >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            criterion(np.zeros(3), np.zeros((4, 2)), np.zeros((4, 2)))


class TestNetwork:
    def test_shapes_and_stochastic_maps(self):
        cfg = MinimaxConfig(**SMALL)
        net = init_net(3, cfg, RandomSource(0))
        x = torch.from_numpy(np.random.default_rng(0).normal(size=(2, 20, 3)))
        recon, priors, series = net(x)
        assert recon.shape == x.shape
        for p, s in zip(priors, series):
            assert p.shape == s.shape == (2, 2, 20, 20)
            np.testing.assert_allclose(p.detach().sum(dim=-1).numpy(), 1.0, atol=1e-10)
            np.testing.assert_allclose(s.detach().sum(dim=-1).numpy(), 1.0, atol=1e-10)

    def test_lambda_zero_is_plain_reconstruction(self):
        cfg = MinimaxConfig(**{**SMALL, "lam": 0.0})
        net = init_net(3, cfg, RandomSource(1))
        x = torch.from_numpy(np.random.default_rng(1).normal(size=(2, 20, 3)))
        min_loss, max_loss, rec, _ = phase_losses(net, x, 0.0, cfg.smoothing)
        grads = []
        for loss in (min_loss + max_loss, 2 * rec):
            net.zero_grad()
            loss.backward(retain_graph=True)
            grads.append(flat_gradient(net))
        np.testing.assert_array_equal(grads[0], grads[1])

    def test_minimize_phase_gradient(self):
        cfg = MinimaxConfig(window=8, layers=1, heads=1, d_model=8, d_ff=8, lam=1.0, smoothing=1e-8)
        net = init_net(2, cfg, RandomSource(2))
        x = torch.from_numpy(np.random.default_rng(2).normal(size=(2, 8, 2)))
        with torch.no_grad():
            frozen = [p.clone() for p in net(x)[1]]

        def f(v):
            set_flat_parameters(net, v)
            with torch.no_grad():
                return float(phase_losses(net, x, cfg.lam, cfg.smoothing, frozen_priors=frozen)[0])

        def g(v):
            set_flat_parameters(net, v)
            net.zero_grad()
            phase_losses(net, x, cfg.lam, cfg.smoothing, frozen_priors=frozen)[0].backward()
            return flat_gradient(net)

        assert gradient_check(f, g, flat_parameters(net)) < 1e-4


class TestScoring:
    @pytest.mark.parametrize("t,n,pad", [(40, 20, 0), (45, 20, 15), (7, 20, 13)])
    def test_inference_windows(self, t, n, pad):
        series = np.arange(t * 2.0).reshape(t, 2)
        windows, got = inference_windows(series, n)
        assert got == pad and windows.shape == (-(-t // n), n, 2)
        flat = windows.reshape(-1, 2)
        if pad:
            np.testing.assert_array_equal(windows[-1, :pad], np.repeat(series[(t // n) * n][None], pad, axis=0))
            flat = np.concatenate([flat[:-n], flat[-n + pad :]])
        np.testing.assert_array_equal(flat, series)

    def test_zero_data_identity_fixture(self):
        cfg = MinimaxConfig(**SMALL)
        net = init_net(3, cfg, RandomSource(0))
        with torch.no_grad():
            net.head.weight.zero_()
            net.head.bias.zero_()
        model = TransformerModel(cfg, 3, net)
        ds = small_dataset(d=3, test_length=1000)
        ds = type(ds)(ds.manifest, ds.train, np.zeros_like(ds.test), ds.labels)
        scores = score_series(model, ds).scores
        assert scores.shape == (1000,)
        np.testing.assert_array_equal(scores, 0.0)

    def test_padded_length(self):
        ds = small_dataset(d=3, test_length=990)
        model = TransformerModel(MinimaxConfig(**SMALL), 3, init_net(3, MinimaxConfig(**SMALL), RandomSource(0)))
        assert score_series(model, ds).scores.shape == (990,)

    def test_dimension_mismatch(self):
        model = TransformerModel(MinimaxConfig(**SMALL), 3, init_net(3, MinimaxConfig(**SMALL), RandomSource(0)))
        with pytest.raises(DimensionMismatch):
            score_series(model, small_dataset(d=4))


class TestTraining:
    def test_recon_decreases_and_anomalies_score_higher(self):
        ds = small_dataset(d=6)
        model = train_minimax(ds, MinimaxConfig(epochs=10, **SMALL))
        assert len(model.loss_trace) == 10
        assert model.loss_trace[-1]["recon"] < model.loss_trace[0]["recon"]
        scores = score_series(model, ds).scores
        anomalous = ds.labels.astype(bool)
        assert scores[anomalous].mean() > scores[~anomalous].mean()

    @pytest.mark.parametrize("m", [2, 3])
    def test_tiny_dimensions(self, m):
        ds = small_dataset(d=m)
        cfg = MinimaxConfig(epochs=2, **{**SMALL, "heads": 1})
        model = train_minimax(ds, cfg)
        scores = score_series(model, ds).scores
        assert scores.shape == (ds.test.shape[0],) and np.all(np.isfinite(scores)) and np.all(scores >= 0)

    def test_deterministic_and_save_load(self, tmp_path):
        ds = small_dataset(d=3)
        cfg = MinimaxConfig(epochs=2, **SMALL)
        a, b = train_minimax(ds, cfg), train_minimax(ds, cfg)
        assert a.loss_trace == b.loss_trace
        sa = score_series(a, ds).scores
        np.testing.assert_array_equal(sa, score_series(b, ds).scores)
        a.save(tmp_path)
        back = TransformerModel.load(tmp_path)
        assert back.config == cfg and back.loss_trace == a.loss_trace
        np.testing.assert_array_equal(score_series(back, ds).scores, sa)

    def test_config_validation(self):
        with pytest.raises(PreconditionError):
            MinimaxConfig(lam=-1.0)
        with pytest.raises(PreconditionError):
            MinimaxConfig(ratio=0.5)
        with pytest.raises(PreconditionError):
            MinimaxConfig(d_model=10, heads=4)
