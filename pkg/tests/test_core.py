import numpy as np
import pytest
from hypothesis import given, strategies as st

from intersubject.core import (DimensionError, GroupPartition, InterBlockIndex, as_symmetric,
                               block_diagonal, block_inverse, count_nonzero, make_model,
                               theta_from_omega)
from intersubject.simulation import GeneratorSpec, generate_model

from oracles import loop_block_diagonal, random_spd, random_sym


def test_as_symmetric_averages_small_asymmetry():
    a = np.array([[1.0, 2.0], [2.0 + 1e-9, 3.0]])
    out = as_symmetric(a)
    assert np.array_equal(out, out.T)


def test_as_symmetric_rejects_large_asymmetry():
    with pytest.raises(ValueError):
        as_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_as_symmetric_rejects_nonfinite_and_nonsquare():
    with pytest.raises(ValueError):
        as_symmetric(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(DimensionError):
        as_symmetric(np.ones((2, 3)))


class TestPartition:
    def test_equal_split(self):
        p = GroupPartition.equal(5)
        assert p.sizes == (3, 2)
        assert p.groups == ((0, 1, 2), (3, 4))

    def test_invalid(self):
        with pytest.raises(ValueError):
            GroupPartition(((0, 1, 2, 3),), 4)  # one group
        with pytest.raises(ValueError):
            GroupPartition(((0, 1), (1, 2)), 3)  # overlap
        with pytest.raises(ValueError):
            GroupPartition(((0,), ()), 1)

    def test_inter_pairs_row_major_and_cross_group(self):
        p = GroupPartition.from_sizes([2, 2])
        assert p.inter_pairs() == [InterBlockIndex(0, 2), InterBlockIndex(0, 3),
                                   InterBlockIndex(1, 2), InterBlockIndex(1, 3)]

    def test_three_groups_pairs(self):
        p = GroupPartition.from_sizes([1, 1, 1])
        assert p.inter_pairs() == [(0, 1), (0, 2), (1, 2)]

    def test_json_round_trip_is_one_based(self):
        p = GroupPartition.from_sizes([2, 3])
        obj = p.to_json()
        assert obj == {"groups": [[1, 2], [3, 4, 5]]}
        assert GroupPartition.from_json(obj) == p


class TestBlockDiagonal:
    def test_identity(self):
        p = GroupPartition.from_sizes([2, 2])
        assert np.array_equal(block_diagonal(np.eye(4), p), np.eye(4))

    def test_all_ones(self):
        p = GroupPartition.from_sizes([2, 2])
        expect = np.zeros((4, 4))
        expect[:2, :2] = 1
        expect[2:, 2:] = 1
        assert np.array_equal(block_diagonal(np.ones((4, 4)), p), expect)

    def test_matches_loop_oracle_three_groups(self, rng):
        p = GroupPartition.from_sizes([2, 2, 2])
        m = random_sym(rng, 6)
        assert np.array_equal(block_diagonal(m, p), loop_block_diagonal(m, p.groups))

    @given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_idempotent(self, a, b, seed):
        p = GroupPartition.from_sizes([a, b])
        m = random_sym(np.random.default_rng(seed), a + b)
        once = block_diagonal(m, p)
        assert np.array_equal(block_diagonal(once, p), once)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            block_diagonal(np.eye(3), GroupPartition.from_sizes([2, 2]))


class TestThetaFromOmega:
    def test_independent_groups_give_zero(self, rng):
        p = GroupPartition.from_sizes([3, 3])
        sigma = block_diagonal(random_spd(rng, 6), p)
        omega = np.linalg.inv(sigma)
        theta = theta_from_omega(omega, sigma, p)
        assert np.abs(theta).max() < 1e-10

    @given(st.integers(0, 2**32 - 1))
    def test_cross_block_equals_omega_and_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        p = GroupPartition.from_sizes([3, 4])
        omega = random_spd(rng, 7)
        sigma = np.linalg.inv(omega)
        theta = theta_from_omega(omega, sigma, p)
        g1, g2 = p.groups
        assert np.array_equal(theta[np.ix_(g1, g2)], omega[np.ix_(g1, g2)])
        back = theta + block_inverse(sigma, p)
        assert np.abs(back - omega).max() < 1e-9

    def test_single_edge_d4_pattern(self):
        # exact inversion oracle at d=4: one cross edge leaves at most 4 nonzeros
        p = GroupPartition.from_sizes([2, 2])
        omega = np.array([[2.0, 0.7, 0.0, 0.0],
                          [0.7, 2.0, 0.4, 0.0],
                          [0.0, 0.4, 2.0, 0.3],
                          [0.0, 0.0, 0.3, 2.0]])
        sigma = np.linalg.inv(omega)
        theta = theta_from_omega(omega, sigma, p)
        nz = np.abs(theta) > 1e-10
        assert nz.sum() <= 2 * 1 + 2 * 1
        # Theta's diagonal blocks are rank-one outer products through the edge
        assert nz[1, 2] and nz[2, 1] and nz[1, 1] and nz[2, 2]
        assert not nz[0].any() and not nz[3].any()


@given(st.integers(4, 24), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_sparsity_bound_random_models(d, s, seed):
    d1 = d - d // 2
    s = min(s, d1 * (d - d1))
    model = generate_model(GeneratorSpec(d, s, seed=seed))
    assert count_nonzero(model.theta, 1e-10) <= 2 * s * s + 2 * s


@given(st.sampled_from([3, 4]), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_multi_group_sparsity(L, s, seed):
    model = generate_model(GeneratorSpec(4 * L, s, n_groups=L, seed=seed))
    assert count_nonzero(model.theta, 1e-10) <= 2 * L * L * (s * s + s)


def test_model_invariants():
    model = generate_model(GeneratorSpec(12, 4, seed=1))
    assert np.abs(model.sigma @ model.omega - np.eye(12)).max() < 1e-8
    assert np.array_equal(np.diag(model.omega), np.ones(12))
    assert len(model.support) == 4
    assert not model.sigma.flags.writeable


def test_make_model_infers_support():
    p = GroupPartition.from_sizes([2, 2])
    omega = np.eye(4)
    omega[0, 3] = omega[3, 0] = 0.2
    model = make_model(omega, p)
    assert model.support == frozenset({InterBlockIndex(0, 3)})
    assert model.s == 1
