import numpy as np
import pytest
from hypothesis import given, strategies as st

from intersubject.core import DimensionError, GroupPartition
from intersubject.covariance import (blocked_covariance, covariance_pair, kendall_covariance,
                                     kendall_tau, sample_covariance)

from oracles import loop_kendall_tau, loop_sample_cov, random_spd


class TestSampleCovariance:
    def test_hand_example(self):
        x = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert np.array_equal(sample_covariance(x), [[1.0, 0.0], [0.0, 0.0]])

    def test_loop_oracle(self, rng):
        x = rng.standard_normal((3, 2))
        assert np.abs(sample_covariance(x) - loop_sample_cov(x)).max() < 1e-12

    def test_centering_kills_constant_column(self, rng):
        x = rng.standard_normal((10, 3))
        x[:, 1] = 4.2
        s = sample_covariance(x, center=True)
        assert np.abs(s[1]).max() < 1e-12 and np.abs(s[:, 1]).max() < 1e-12

    @given(st.integers(2, 12), st.integers(2, 8), st.integers(0, 2**32 - 1))
    def test_psd(self, n, d, seed):
        x = np.random.default_rng(seed).standard_normal((n, d)) * 3
        e = np.linalg.eigvalsh(sample_covariance(x))
        assert e[0] >= -1e-10 * max(e[-1], 1.0)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            sample_covariance(np.ones((1, 3)))
        with pytest.raises(ValueError):
            sample_covariance(np.array([[np.inf, 0.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            sample_covariance(np.ones(4))


class TestBlocked:
    def test_no_perturbation_when_well_conditioned(self, rng):
        p = GroupPartition.from_sizes([3, 3])
        pair = blocked_covariance(random_spd(rng, 6), p, 1000)
        assert not pair.perturbation_applied and pair.epsilon == 0.0
        assert np.all(pair.blocked[:3, 3:] == 0)

    def test_rank_deficient_gets_ridge(self, rng):
        p = GroupPartition.from_sizes([5, 5])
        x = rng.standard_normal((3, 10))
        pair = covariance_pair(x, p)
        eps = np.sqrt(np.log(10) / 3)
        assert pair.perturbation_applied and pair.epsilon == pytest.approx(eps)
        assert np.linalg.eigvalsh(pair.blocked)[0] >= eps - 1e-10

    def test_eigenvalue_shift_identity(self):
        p = GroupPartition.from_sizes([2, 2])
        v = np.array([1.0, 2.0])
        block = np.outer(v, v)
        full = np.zeros((4, 4))
        full[:2, :2] = block
        full[2:, 2:] = np.eye(2)
        pair = blocked_covariance(full, p, n=2)
        eps = np.sqrt(np.log(4) / 2)
        expect = np.sort(np.concatenate([np.linalg.eigvalsh(block), [1.0, 1.0]]) + eps)
        assert np.allclose(np.linalg.eigvalsh(pair.blocked), expect, atol=1e-12)

    @given(st.integers(2, 20), st.integers(0, 2**32 - 1))
    def test_never_singular(self, n, seed):
        x = np.random.default_rng(seed).standard_normal((n, 8))
        pair = covariance_pair(x, GroupPartition.equal(8))
        assert np.linalg.eigvalsh(pair.blocked)[0] >= 1e-12
        assert np.all(pair.blocked[:4, 4:] == 0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            blocked_covariance(np.eye(3), GroupPartition.from_sizes([2, 2]), 10)

    def test_unknown_method(self, rng):
        with pytest.raises(ValueError):
            covariance_pair(rng.standard_normal((5, 4)), GroupPartition.equal(4), method="x")


class TestKendall:
    def test_concordant_and_discordant(self):
        t = np.arange(10.0)
        x = np.column_stack([t, 2 * t + 1, -t])
        k = kendall_covariance(x)
        assert k[0, 1] == 1.0
        assert k[0, 2] == -1.0

    def test_loop_oracle_exact(self, rng):
        x = rng.standard_normal((6, 4))
        assert np.array_equal(kendall_tau(x), loop_kendall_tau(x))

    def test_ties_count_zero(self):
        x = np.array([[0.0, 1.0], [0.0, 2.0], [1.0, 3.0]])
        assert np.array_equal(kendall_tau(x), loop_kendall_tau(x))
        assert kendall_tau(x)[0, 1] == pytest.approx(2 / 3)

    @given(st.integers(2, 40), st.integers(1, 17), st.integers(0, 2**32 - 1))
    def test_blocking_does_not_change_result(self, n, block, seed):
        x = np.random.default_rng(seed).integers(0, 4, size=(n, 3)).astype(float)
        assert np.array_equal(kendall_tau(x, block=block), kendall_tau(x, block=1000))

    @given(st.integers(0, 2**32 - 1))
    def test_monotone_invariance(self, seed):
        x = np.random.default_rng(seed).standard_normal((30, 4))
        y = x.copy()
        y[:, 0] = y[:, 0] ** 3
        y[:, 2] = np.exp(y[:, 2])
        assert np.abs(kendall_covariance(x) - kendall_covariance(y)).max() <= 1e-12

    def test_sine_identity_at_correlation_half(self):
        rng = np.random.default_rng(5)
        n = 4000
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        x = rng.multivariate_normal(np.zeros(2), cov, size=n)
        est = kendall_covariance(x)[0, 1]
        # delta-method standard error of sin(pi tau / 2) is below 0.02 here
        assert abs(est - 0.5) < 3 * 0.02

    def test_unit_diagonal_and_bounds(self, rng):
        k = kendall_covariance(rng.standard_normal((20, 5)))
        assert np.array_equal(np.diag(k), np.ones(5))
        assert np.abs(k).max() <= 1.0


@pytest.mark.slow
def test_kendall_concentration():
    from intersubject.simulation import GeneratorSpec, generate_model, sample_gaussian
    model = generate_model(GeneratorSpec(10, 3, seed=0))
    n, d = 4096, 10
    bound = 8 * np.sqrt(np.log(d) / n)
    # the rank estimator targets the correlation matrix of the latent Gaussian
    scale = 1.0 / np.sqrt(np.diag(model.sigma))
    corr = model.sigma * np.outer(scale, scale)
    hits = 0
    for seed in range(100):
        x = sample_gaussian(model, n, seed)
        hits += np.abs(kendall_covariance(x) - corr).max() <= bound
    assert hits >= 95
