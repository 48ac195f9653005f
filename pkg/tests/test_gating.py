"""Gating network contract: clipped hard-sigmoid of a learned shift, optional
training noise, and mean-activation reporting."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tandem.autodiff import Tensor, grad_check
from tandem.gating import GateBank, GateError, apply_gate, gate, mean_activation


def make_bank(in_dim, groups=1, hidden=None, seed=0):
    return GateBank(in_dim, groups=groups, hidden=hidden,
                    rng=np.random.default_rng(seed))


class TestGateValues:
    def test_fresh_bank_outputs_exactly_half(self):
        # output layer is zero-initialized, so mu == 0 and the deterministic
        # gate is exactly clip01(0.5) = 0.5
        bank = make_bank(6)
        x = np.random.default_rng(1).normal(0, 2, (5, 6))
        g = gate(x, bank, mode="deterministic")
        assert np.all(g.data == 0.5)

    def test_large_positive_shift_saturates_at_one(self):
        bank = make_bank(3)
        bank.b2.data[:] = 0.7  # mu = 0.7 everywhere
        g = gate(np.zeros((2, 3)), bank, mode="deterministic")
        np.testing.assert_array_equal(g.data, 1.0)

    def test_large_negative_shift_saturates_at_zero(self):
        bank = make_bank(3)
        bank.b2.data[:] = -0.8
        g = gate(np.zeros((2, 3)), bank, mode="deterministic")
        np.testing.assert_array_equal(g.data, 0.0)

    def test_deterministic_equals_mu_shift_clipped(self):
        # independent recomputation of the exact formula on raw numpy
        rng = np.random.default_rng(5)
        bank = make_bank(4, seed=7)
        bank.W2.data[:] = rng.normal(0, 0.5, bank.W2.data.shape)
        bank.b2.data[:] = rng.normal(0, 0.5, bank.b2.data.shape)
        X = rng.normal(0, 1, (8, 4))
        got = gate(X, bank, mode="deterministic").data
        hidden = np.tanh(X @ bank.W1.data + bank.b1.data)
        mu = hidden @ bank.W2.data + bank.b2.data
        want = np.clip(0.5 + mu, 0.0, 1.0)
        np.testing.assert_allclose(got, want, rtol=1e-15)

    def test_stochastic_adds_noise_before_clip(self):
        bank = make_bank(3)
        noise = np.array([[0.2, -0.7, 0.6]])
        g = gate(np.zeros((1, 3)), bank, mode="stochastic", noise=noise)
        np.testing.assert_allclose(g.data, [[0.7, 0.0, 1.0]])

    def test_stochastic_draws_with_default_sigma(self):
        bank = make_bank(4)
        rng = np.random.default_rng(3)
        g = gate(np.zeros((2000, 4)), bank, mode="stochastic", rng=rng).data
        # g = clip01(0.5 + eps), eps ~ N(0, 0.5^2): P(saturate low) =
        # P(eps < -0.5) = P(Z < -1) ~ 0.1587 on each side
        assert abs((g == 0.0).mean() - 0.1587) < 0.02
        assert abs((g == 1.0).mean() - 0.1587) < 0.02

    def test_stochastic_requires_rng_or_noise(self):
        bank = make_bank(3)
        with pytest.raises(GateError):
            gate(np.zeros((2, 3)), bank, mode="stochastic")

    def test_unknown_mode_rejected(self):
        bank = make_bank(3)
        with pytest.raises(GateError):
            gate(np.zeros((2, 3)), bank, mode="sometimes")

    def test_input_width_mismatch_rejected(self):
        bank = make_bank(3)
        with pytest.raises(GateError):
            gate(np.zeros((2, 5)), bank, mode="deterministic")

    def test_hidden_default_is_at_least_32(self):
        assert make_bank(6).hidden == 32
        assert make_bank(50).hidden == 50

    def test_grouped_bank_output_width(self):
        bank = make_bank(4, groups=6)
        g = gate(np.zeros((3, 4)), bank, mode="deterministic")
        assert g.data.shape == (3, 24)

    def test_noise_shape_mismatch_rejected(self):
        bank = make_bank(3, groups=2)
        with pytest.raises(GateError):
            gate(np.zeros((2, 3)), bank, mode="stochastic",
                 noise=np.zeros((2, 3)))


class TestGateGradients:
    def test_gradient_flows_through_mu_only(self):
        # the noise term is a constant: gradient with and without noise at
        # the same effective operating point must match
        rng = np.random.default_rng(11)
        bank = make_bank(4, seed=2)
        bank.W2.data[:] = rng.normal(0, 0.2, bank.W2.data.shape)
        X = rng.normal(0, 1, (5, 4))
        noise = np.zeros((5, 4))
        g = gate(X, bank, mode="stochastic", noise=noise)
        g.sum().backward()
        grad_stochastic = bank.W2.grad.copy()

        for _, p in bank.parameters():
            p.zero_grad()
        g2 = gate(X, bank, mode="deterministic")
        g2.sum().backward()
        np.testing.assert_allclose(grad_stochastic, bank.W2.grad, rtol=1e-14)

    def test_gate_gradient_matches_fd_off_kink(self):
        rng = np.random.default_rng(19)
        bank = make_bank(5, seed=4)
        # small random output layer keeps pre-clip values near 0.5
        bank.W2.data[:] = rng.normal(0, 0.05, bank.W2.data.shape)
        X = rng.normal(0, 1, (4, 5))
        target = rng.normal(0.5, 0.1, (4, 5))

        def build():
            g = gate(X, bank, mode="deterministic")
            return (g - Tensor(target)).square().mean()

        report = grad_check(build, list(bank.parameters()),
                            rng=np.random.default_rng(8),
                            max_probes_per_param=6)
        assert report["passed"], report


class TestApplyGate:
    def test_identity_mask_preserves_input(self):
        x = np.random.default_rng(0).normal(0, 1, (3, 4))
        out = apply_gate(Tensor(x), Tensor(np.ones((3, 4))))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_mask_zeroes_input(self):
        x = np.random.default_rng(0).normal(0, 1, (3, 4))
        out = apply_gate(Tensor(x), Tensor(np.zeros((3, 4))))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_grouped_mask_tiles_input(self):
        x = np.array([[1.0, 2.0]])
        mask = np.array([[0.5, 1.0, 0.0, 0.25]])  # two groups over two cols
        out = apply_gate(Tensor(x), Tensor(mask))
        np.testing.assert_allclose(out.data, [[0.5, 2.0, 0.0, 0.5]])

    def test_incompatible_mask_rejected(self):
        with pytest.raises(GateError):
            apply_gate(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 5))))

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(GateError):
            apply_gate(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))))


class TestMeanActivation:
    def test_uniform_half_bank(self):
        bank = make_bank(5)
        x = np.random.default_rng(2).normal(0, 1, (10, 5))
        assert mean_activation(bank, x, [0, 1, 2, 3, 4]) == 0.5

    def test_subset_brute_force_oracle(self):
        # oracle: enumerate gate values per sample per net with plain numpy
        rng = np.random.default_rng(21)
        bank = make_bank(4, groups=3, seed=9)
        bank.W2.data[:] = rng.normal(0, 0.4, bank.W2.data.shape)
        bank.b2.data[:] = rng.normal(0, 0.4, bank.b2.data.shape)
        X = rng.normal(0, 1, (7, 4))
        subset = [1, 3]

        hidden = np.tanh(X @ bank.W1.data + bank.b1.data)
        mu = np.zeros((7, 12))
        for g in range(3):
            hg = hidden[:, g * bank.hidden:(g + 1) * bank.hidden]
            Wg = bank.W2.data[g * bank.hidden:(g + 1) * bank.hidden]
            mu[:, g * 4:(g + 1) * 4] = hg @ Wg + bank.b2.data[g * 4:(g + 1) * 4]
        gates = np.clip(0.5 + mu, 0, 1)
        cols = [g * 4 + d for g in range(3) for d in subset]
        want = gates[:, cols].mean()

        got = mean_activation(bank, X, subset)
        np.testing.assert_allclose(got, want, rtol=1e-14)

    def test_empty_subset_rejected(self):
        bank = make_bank(4)
        with pytest.raises(GateError):
            mean_activation(bank, np.zeros((2, 4)), [])

    def test_out_of_range_feature_rejected(self):
        bank = make_bank(4)
        with pytest.raises(GateError):
            mean_activation(bank, np.zeros((2, 4)), [4])


@given(st.integers(1, 8), st.integers(1, 4), st.integers(2, 16),
       st.integers(0, 2 ** 31 - 1), st.booleans())
@settings(max_examples=50, deadline=None)
def test_gate_range_property(in_dim, groups, rows, seed, stochastic):
    rng = np.random.default_rng(seed)
    bank = GateBank(in_dim, groups=groups, hidden=8, rng=rng)
    bank.W2.data[:] = rng.normal(0, 2, bank.W2.data.shape)
    bank.b2.data[:] = rng.normal(0, 2, bank.b2.data.shape)
    X = rng.normal(0, 3, (rows, in_dim))
    if stochastic:
        g = gate(X, bank, mode="stochastic", rng=rng).data
    else:
        g = gate(X, bank, mode="deterministic").data
    assert np.all(g >= 0.0) and np.all(g <= 1.0)


def test_sigma_zero_stochastic_matches_deterministic():
    rng = np.random.default_rng(6)
    bank = GateBank(4, noise_sigma=0.0, rng=rng)
    bank.W2.data[:] = rng.normal(0, 0.3, bank.W2.data.shape)
    X = rng.normal(0, 1, (6, 4))
    s = gate(X, bank, mode="stochastic", rng=np.random.default_rng(0)).data
    d = gate(X, bank, mode="deterministic").data
    np.testing.assert_array_equal(s, d)


def test_default_noise_sigma_is_half():
    assert GateBank(3, rng=np.random.default_rng(0)).noise_sigma == 0.5
