import math

import numpy as np
import pytest
import torch
from hypothesis import example, given, settings
from hypothesis import strategies as st

from introvae.config import HyperParams
from introvae.errors import InvalidInputError, ShapeError
from introvae.losses import (
    LatentStats,
    frechet_distance,
    hinge,
    kl_divergence,
    loss_encoder,
    loss_generator,
    mse_recon,
    reparameterize,
)

from _oracles import central_fd, frechet_1d, kl_quadrature, rel_error

finite = st.floats(-50, 50, allow_nan=False)


def t(x):
    return torch.tensor(x, dtype=torch.float64)


class TestKL:
    def test_zero_at_prior(self):
        for m in (1, 7, 512):
            assert kl_divergence(torch.zeros(m), torch.zeros(m)).item() == 0.0

    def test_frozen_quadrature_values(self):
        # expected values computed by kl_quadrature and frozen
        assert kl_quadrature(1.0, 0.0) == pytest.approx(0.5, abs=1e-10)
        assert kl_quadrature(0.0, 1.0) == pytest.approx((math.e - 2) / 2, abs=1e-10)
        assert kl_divergence(t([1.0]), t([0.0])).item() == pytest.approx(0.5, abs=1e-12)
        assert kl_divergence(t([0.0]), t([1.0])).item() == pytest.approx(0.359140914229523, abs=1e-12)

    def test_matches_quadrature_random(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            mu, lv = rng.uniform(-3, 3), rng.uniform(-2, 2)
            assert kl_divergence(t([mu]), t([lv])).item() == pytest.approx(kl_quadrature(mu, lv), abs=1e-6)

    def test_sums_dims_and_means_batch(self):
        mu = t([[1.0, 0.0], [0.0, 0.0]])
        lv = t([[0.0, 1.0], [0.0, 0.0]])
        per = kl_divergence(LatentStats(mu, lv))
        assert per.tolist() == pytest.approx([0.5 + (math.e - 2) / 2, 0.0])
        assert kl_divergence(mu, lv, reduce=True).item() == pytest.approx(per.mean().item())

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=8))
    @example([(0.0, 7.300749443005654e-64)])
    def test_nonnegative_and_zero_only_at_prior(self, pairs):
        mu = t([p[0] for p in pairs])
        lv = t([p[1] for p in pairs])
        val = kl_divergence(mu, lv).item()
        assert val >= 0.0
        if val <= 1e-12:
            assert torch.all(mu.abs() < 1e-5) and torch.all(lv.abs() < 1e-5)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            kl_divergence(t([float("nan")]), t([0.0]))
        with pytest.raises(InvalidInputError):
            kl_divergence(t([0.0]), t([float("inf")]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            kl_divergence(torch.zeros(3), torch.zeros(4))


class TestReparameterize:
    def test_zero_noise_gives_mean(self):
        mu = t([0.3, -1.2, 4.0])
        assert torch.equal(reparameterize(mu, t([0.5, 1.0, -2.0]), torch.zeros(3, dtype=torch.float64)), mu)

    def test_unit_sigma_passthrough(self):
        e = t([0.1, -0.7, 2.5])
        assert torch.equal(reparameterize(torch.zeros(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64), e), e)

    def test_monte_carlo_mean(self):
        n = 100_000
        mu = t([0.5, -2.0])
        lv = t([0.0, 1.0])
        g = torch.Generator().manual_seed(0)
        eps = torch.randn(n, 2, generator=g, dtype=torch.float64)
        z = reparameterize(mu.expand(n, 2), lv.expand(n, 2), eps)
        sigma = torch.exp(0.5 * lv)
        assert torch.all((z.mean(0) - mu).abs() <= 4 * sigma / math.sqrt(n))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            reparameterize(torch.zeros(3), torch.zeros(3), torch.zeros(4))


class TestMSE:
    def test_identity(self):
        x = torch.rand(2, 3, 4, 4)
        assert mse_recon(x, x).item() == 0.0

    def test_single_pixel(self):
        x = torch.zeros(1, 3, 4, 4, dtype=torch.float64)
        y = x.clone()
        y[0, 1, 2, 3] = 0.5
        assert mse_recon(x, y).item() == pytest.approx(0.125)

    def test_quadratic_scaling(self):
        g = torch.Generator().manual_seed(1)
        x = torch.rand(3, 3, 5, 5, generator=g, dtype=torch.float64)
        y = torch.rand(3, 3, 5, 5, generator=g, dtype=torch.float64)
        base = mse_recon(x, y).item()
        for c in (0.5, 2.0, 3.0):
            assert mse_recon(x, x + c * (y - x)).item() == pytest.approx(c * c * base, rel=1e-12)

    def test_batch_mean(self):
        x = torch.zeros(2, 1, 2, 2, dtype=torch.float64)
        y = x.clone()
        y[0] = 1.0  # sample 0 has 4 unit errors -> 2.0; sample 1 -> 0
        assert mse_recon(x, y).item() == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_recon(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))


class TestHinge:
    def test_examples(self):
        assert hinge(90, 100) == 0
        assert hinge(90, 30) == 60
        assert hinge(7.5, 7.5) == 0

    @given(finite, finite, finite)
    def test_lipschitz_and_monotone(self, m, v1, v2):
        h1, h2 = hinge(m, v1), hinge(m, v2)
        assert abs(h1 - h2) <= abs(v1 - v2) + 1e-12
        if v1 <= v2:
            assert h1 >= h2

    def test_tensor(self):
        assert hinge(5.0, t([1.0, 6.0])).tolist() == [4.0, 0.0]


class TestTotalLosses:
    hp = HyperParams(margin=5.0, alpha=0.25, beta=0.5)

    def test_encoder_hand_value(self):
        assert loss_encoder(2.0, 1.0, 3.0, 4.0, self.hp) == pytest.approx(5.5)

    def test_generator_hand_value(self):
        assert loss_generator(1.0, 3.0, 4.0, self.hp) == pytest.approx(3.0)

    def test_alpha_zero_is_elbo(self):
        hp = self.hp.replace(alpha=0.0)
        assert loss_encoder(2.0, 1.0, 3.0, 4.0, hp) == pytest.approx(2.0 + 0.5 * 4.0)
        assert loss_generator(1.0, 3.0, 4.0, hp) == pytest.approx(0.5 * 4.0)

    def test_saturated_hinges(self):
        assert loss_encoder(2.0, 6.0, 9.0, 4.0, self.hp) == pytest.approx(2.0 + 2.0)

    def test_generator_zero(self):
        assert loss_generator(0.0, 0.0, 0.0, self.hp) == 0.0


class TestGradients:
    """Autograd against central differences, double precision, step 1e-5."""

    def _check(self, fn, inputs, tol=1e-4):
        for x in inputs:
            x.requires_grad_(True)
        analytic = torch.autograd.grad(fn(), inputs)
        numeric = central_fd(fn, inputs)
        for a, n in zip(analytic, numeric):
            assert rel_error(a, n) <= tol

    def test_kl(self):
        g = torch.Generator().manual_seed(2)
        mu = torch.randn(3, 5, generator=g, dtype=torch.float64)
        lv = torch.randn(3, 5, generator=g, dtype=torch.float64)
        self._check(lambda: kl_divergence(mu, lv, reduce=True), [mu, lv])

    def test_mse(self):
        g = torch.Generator().manual_seed(3)
        x = torch.rand(2, 3, 4, 4, generator=g, dtype=torch.float64)
        y = torch.rand(2, 3, 4, 4, generator=g, dtype=torch.float64)
        self._check(lambda: mse_recon(x, y), [x, y])

    @pytest.mark.parametrize("margin", [0.5, 100.0])
    def test_total_losses(self, margin):
        hp = HyperParams(margin=margin, alpha=0.3, beta=0.7)
        vals = [t(2.0), t(1.5), t(3.5), t(4.0)]
        self._check(lambda: loss_encoder(*vals, hp), vals)
        self._check(lambda: loss_generator(*vals[1:], hp), vals[1:])


class TestFrechet:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(6, 6))
        cov = a @ a.T
        mu = rng.normal(size=6)
        assert frechet_distance(mu, cov, mu, cov) <= 1e-8

    def test_1d(self):
        assert frechet_distance([0.0], [[1.0]], [1.0], [[1.0]]) == pytest.approx(1.0, abs=1e-12)
        assert frechet_distance([0.5], [[4.0]], [-1.0], [[0.25]]) == pytest.approx(frechet_1d(0.5, 2, -1, 0.5))

    def test_diagonal_matches_per_dim_sum(self):
        rng = np.random.default_rng(1)
        m1, m2 = rng.normal(size=5), rng.normal(size=5)
        s1, s2 = rng.uniform(0.1, 3, 5), rng.uniform(0.1, 3, 5)
        expected = sum(frechet_1d(a, b, c, d) for a, b, c, d in zip(m1, s1, m2, s2))
        got = frechet_distance(m1, np.diag(s1**2), m2, np.diag(s2**2))
        assert got == pytest.approx(expected, rel=1e-10)

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        ca, cb = a @ a.T, b @ b.T
        ma, mb = rng.normal(size=4), rng.normal(size=4)
        assert frechet_distance(ma, ca, mb, cb) == pytest.approx(frechet_distance(mb, cb, ma, ca), abs=1e-8)

    def test_errors(self):
        with pytest.raises(ShapeError):
            frechet_distance(np.zeros(2), np.eye(2), np.zeros(3), np.eye(3))
        with pytest.raises(InvalidInputError):
            frechet_distance(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2), np.eye(2))
