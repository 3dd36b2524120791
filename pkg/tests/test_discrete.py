"""Masked forward chain, score factorization, CE loss, and tau-leaping."""

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import chisquare

from polydiff import discrete as dp
from polydiff.autograd import Tensor, backward
from polydiff.errors import ContractError
from polydiff.schedules import DiscreteSchedule, preset

MASK = preset("loglinear-mask")
ZERO = DiscreteSchedule(delta=0.0)
VOCAB = (3,)  # two true categories + mask


class TestMaskForward:
    def test_identity_at_zero(self):
        rng = np.random.default_rng(0)
        y0 = np.array([[0, 1, 0]])
        out = dp.mask_forward(y0, 0.0, MASK, rng, (3, 3, 3))
        np.testing.assert_array_equal(out, y0)

    def test_fully_masked_at_one(self):
        rng = np.random.default_rng(1)
        y0 = np.zeros((100, 4), dtype=int)
        out = dp.mask_forward(y0, 1.0, ZERO, rng, (3, 3, 3, 3))
        assert np.all(out == 2)

    def test_rejects_masked_input(self):
        with pytest.raises(ContractError):
            dp.mask_forward(np.array([[2]]), 0.5, MASK, np.random.default_rng(0), VOCAB)

    def test_mask_frequency_binomial(self):
        # Binomial oracle: single-token mask rate = 1 - survival(0.5).
        rng = np.random.default_rng(2)
        n = 100_000
        y0 = np.zeros((n, 1), dtype=int)
        out = dp.mask_forward(y0, 0.5, MASK, rng, VOCAB)
        p = 1.0 - MASK.survival(0.5)
        freq = (out == 2).mean()
        assert abs(freq - p) < 4.0 * np.sqrt(p * (1 - p) / n)

    def test_matches_exact_marginal(self):
        # Empirical forward marginal vs matrix-exponential marginal, |X|=3.
        rng = np.random.default_rng(3)
        n = 100_000
        s = 0.7
        y0 = np.ones((n, 1), dtype=int)  # category B of {A, B, M}
        out = dp.mask_forward(y0, s, MASK, rng, VOCAB)
        counts = np.bincount(out[:, 0], minlength=3)
        p0 = np.array([0.0, 1.0, 0.0])
        expected = dp.exact_marginal(p0, s, MASK) * n
        keep = expected > 0
        stat = chisquare(counts[keep], expected[keep])
        assert stat.pvalue > 1e-3


class TestExactMarginal:
    def test_frozen_half_mass(self):
        # sigma_bar = ln 2 -> survival 0.5: delta_A goes to [0.5, 0, 0.5].
        s = 0.5 / (1.0 - 0.0)  # survival(s) = 1 - s = 0.5 for delta=0
        out = dp.exact_marginal(np.array([1.0, 0.0, 0.0]), s, ZERO)
        np.testing.assert_allclose(out, [0.5, 0.0, 0.5], atol=1e-12)

    def test_identity_at_zero(self):
        p0 = np.array([0.3, 0.7, 0.0])
        np.testing.assert_allclose(dp.exact_marginal(p0, 0.0, MASK), p0, atol=1e-12)

    def test_stochastic(self):
        rng = np.random.default_rng(4)
        for s in rng.uniform(0, 1, 20):
            p0 = rng.dirichlet(np.ones(5))
            out = dp.exact_marginal(p0, s, MASK)
            assert out.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(out >= -1e-15)

    def test_dimension_cap(self):
        with pytest.raises(ContractError):
            dp.exact_marginal(np.ones(65) / 65, 0.5, MASK)


class TestRateMatrices:
    def test_mask_generator_columns(self):
        q = dp.mask_rate_matrix(6)
        np.testing.assert_allclose(q.sum(axis=0), 0.0, atol=1e-12)
        off = q - np.diag(np.diag(q))
        assert np.all(off >= 0)

    def test_reverse_matrix_columns(self):
        q = dp.reverse_rate_matrix(np.array([0.2, 0.5]), 0.5, MASK)
        np.testing.assert_allclose(q.sum(axis=0), 0.0, atol=1e-12)
        off = q - np.diag(np.diag(q))
        assert np.all(off >= 0)
        # no remasking: rates out of true categories vanish
        np.testing.assert_array_equal(q[:, :-1], 0.0)

    def test_exact_marginal_matches_expm_of_generator(self):
        # Cross-check the closed-form masking law against expm directly.
        p0 = np.array([0.25, 0.45, 0.3, 0.0])
        s = 0.63
        surv = MASK.survival(s)
        closed = np.concatenate([surv * p0[:-1], [p0[-1] + (1 - surv) * p0[:-1].sum()]])
        via_expm = expm(MASK.sigma_bar(s) * dp.mask_rate_matrix(4)) @ p0
        np.testing.assert_allclose(closed, via_expm, atol=1e-12)
        np.testing.assert_allclose(dp.exact_marginal(p0, s, MASK), closed, atol=1e-12)


class TestConcreteScore:
    def test_uniform_probs_at_half_survival(self):
        s = 0.5  # delta=0: survival = 0.5, prefactor exactly 1
        ratios = dp.concrete_score(np.array([0.5, 0.5]), s, ZERO)
        np.testing.assert_allclose(ratios, [0.5, 0.5], atol=1e-15)

    def test_concentrated(self):
        ratios = dp.concrete_score(np.array([0.0, 1.0]), 0.3, MASK)
        assert ratios[0] == 0.0 and ratios[1] > 0.0

    def test_frozen_prefactor(self):
        ratios = dp.concrete_score(np.array([1.0]), 0.5, MASK)
        surv = MASK.survival(0.5)
        assert ratios[0] == pytest.approx(surv / (1 - surv), rel=1e-12)
        assert ratios[0] == pytest.approx(1.00002, abs=1e-6)

    def test_requires_positive_s(self):
        with pytest.raises(ContractError):
            dp.concrete_score(np.array([1.0]), 0.0, MASK)


class TestMaskedCeLoss:
    def test_zero_when_nothing_masked(self):
        logits = [np.array([[3.0, -1.0]])]
        y0 = np.array([[0]])
        loss = dp.masked_ce_loss(logits, y0, y0, 0.5, MASK, VOCAB)
        assert loss == 0.0

    def test_weight_identity(self):
        # w(s) * s = 1 to 1e-12 for 100 random s at delta = 0.
        rng = np.random.default_rng(5)
        s = rng.uniform(1e-4, 1.0, 100)
        w = ZERO.reverse_rate(s)
        np.testing.assert_allclose(w * s, 1.0, atol=1e-12)

    def test_monotone_in_margin(self):
        y0 = np.array([[0]])
        y_s = np.array([[2]])
        losses = []
        for margin in (0.5, 1.0, 2.0, 4.0):
            logits = [np.array([[margin, 0.0]])]
            losses.append(dp.masked_ce_loss(logits, y0, y_s, 0.5, ZERO, VOCAB))
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_matches_manual_value(self):
        y0 = np.array([[1], [0]])
        y_s = np.array([[2], [0]])  # first row masked, second clean
        logits = [np.array([[0.3, -0.2], [5.0, 5.0]])]
        s = np.array([0.25, 0.9])
        loss = dp.masked_ce_loss(logits, y0, y_s, s, ZERO, VOCAB)
        z = np.array([0.3, -0.2])
        ce = -(z[1] - np.log(np.exp(z).sum()))
        assert loss == pytest.approx(0.5 * (1.0 / 0.25) * ce, rel=1e-12)

    def test_tensor_gradient_flows_only_to_masked(self):
        y0 = np.array([[1, 0]])
        y_s = np.array([[3, 0]])  # first position masked, second clean
        t1 = Tensor(np.zeros((1, 3)), requires_grad=True)
        t2 = Tensor(np.zeros((1, 2)), requires_grad=True)
        loss = dp.masked_ce_loss([t1, t2], y0, y_s, 0.5, MASK, (4, 3))
        backward(loss)
        assert np.any(t1.grad != 0)
        assert t2.grad is None or np.all(t2.grad == 0)


class TestTauLeap:
    def test_clamped_probability_unmasks(self):
        rng = np.random.default_rng(6)
        y = np.full((200, 1), 2)
        out = dp.tau_leap_step(y, [np.array([0.0, 1.0])], 0.01, 0.01, ZERO, rng, VOCAB)
        assert np.all(out == 1)  # r*ds = 1 -> fires surely, category 1

    def test_unmasked_rows_unchanged(self):
        rng = np.random.default_rng(7)
        y = np.array([[0], [1]])
        out = dp.tau_leap_step(y, [np.array([0.5, 0.5])], 0.5, 0.1, MASK, rng, VOCAB)
        np.testing.assert_array_equal(out, y)

    def test_mask_fraction_binomial_consistency(self):
        # delta=0: unmask prob over a uniform grid step is exactly ds/s, so
        # the masked fraction at grid time s should be Binomial(n, s).
        rng = np.random.default_rng(8)
        n, steps = 10_000, 100
        y = np.full((n, 1), 2)
        probs = [np.array([0.5, 0.5])]
        grid = np.linspace(1.0, 0.0, steps + 1)
        for i in range(steps):
            s, s_next = grid[i], grid[i + 1]
            y = dp.tau_leap_step(y, probs, s, s - s_next, ZERO, rng, VOCAB)
            frac = (y == 2).mean()
            p = s_next
            counts = np.array([n - (y == 2).sum(), (y == 2).sum()])
            expected = np.array([(1 - p) * n, p * n])
            if expected.min() > 5:
                assert chisquare(counts, expected).pvalue > 1e-4
            del frac
        assert np.all(y != 2)  # final step unmasks surely

    def test_category_distribution(self):
        rng = np.random.default_rng(9)
        n = 50_000
        y = np.full((n, 1), 2)
        probs = [np.array([0.3, 0.7])]
        out = dp.tau_leap_step(y, probs, 0.5, 0.5, ZERO, rng, VOCAB)
        fired = out[:, 0] != 2
        frac1 = (out[fired, 0] == 1).mean()
        assert abs(frac1 - 0.7) < 4 * np.sqrt(0.21 / fired.sum())


class TestReverseRecoversLabels:
    def test_label_distribution_total_variation(self):
        # Reverse tau-leaping with exact clean-token probabilities must
        # reproduce the data label distribution from all-masked starts.
        rng = np.random.default_rng(10)
        n, steps = 10_000, 100
        target = np.array([0.15, 0.55, 0.3])
        y = np.full((n, 1), 3)
        grid = np.linspace(1.0, 0.0, steps + 1)
        for i in range(steps):
            y = dp.tau_leap_step(y, [target], grid[i], grid[i] - grid[i + 1],
                                 ZERO, rng, (4,))
        freqs = np.bincount(y[:, 0], minlength=4)[:3] / n
        tv = 0.5 * np.abs(freqs - target).sum()
        assert tv < 0.02
