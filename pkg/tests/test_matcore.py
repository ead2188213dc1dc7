"""Linear-algebra substrate tests against brute-force SVD oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupmuon.errors import InvalidInputError, NumericalFailureError
from groupmuon.matcore import (
    CONVERGENT_NS_CONFIG,
    FIXED_RELATIVE_RANK_POLICY,
    MACHINE_RANK_POLICY,
    NewtonSchulzConfig,
    RankPolicy,
    as_matrix,
    compact_svd,
    exact_polar,
    frobenius_inner,
    newton_schulz,
    nuclear_norm,
    numerical_rank,
)

SHAPES = [(2, 2), (3, 5), (8, 4), (8, 16), (16, 16), (12, 96), (64, 256)]


def _draw(seed, shape, rank=None):
    rng = np.random.default_rng(seed)
    if rank is None:
        return rng.normal(size=shape)
    return rng.normal(size=(shape[0], rank)) @ rng.normal(size=(rank, shape[1]))


class TestAsMatrix:
    def test_coerces_lists(self):
        m = as_matrix([[1, 2], [3, 4]])
        assert m.dtype == np.float64 and m.shape == (2, 2)

    def test_rejects_vector(self):
        with pytest.raises(InvalidInputError, match="2-D"):
            as_matrix(np.ones(3), "v")

    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError, match="non-empty"):
            as_matrix(np.ones((0, 4)))

    def test_rejects_nan(self):
        with pytest.raises(InvalidInputError, match="non-finite"):
            as_matrix(np.array([[1.0, np.nan]]))


class TestCompactSvd:
    @pytest.mark.parametrize("shape", SHAPES)
    def test_reconstructs(self, shape):
        a = _draw(0, shape)
        res = compact_svd(a)
        k = min(shape)
        assert res.u.shape == (shape[0], k)
        assert res.v.shape == (shape[1], k)
        assert np.all(np.diff(res.sigma) <= 0) and np.all(res.sigma >= 0)
        np.testing.assert_allclose(res.u @ np.diag(res.sigma) @ res.v.T, a, atol=1e-10)

    def test_orthonormal_factors(self):
        res = compact_svd(_draw(1, (8, 5)))
        np.testing.assert_allclose(res.u.T @ res.u, np.eye(5), atol=1e-12)
        np.testing.assert_allclose(res.v.T @ res.v, np.eye(5), atol=1e-12)


class TestNuclearNormAndRank:
    @pytest.mark.parametrize("shape", SHAPES)
    def test_nuclear_matches_svd_oracle(self, shape):
        a = _draw(2, shape)
        assert nuclear_norm(a) == pytest.approx(
            np.linalg.svd(a, compute_uv=False).sum(), rel=1e-12
        )

    @pytest.mark.parametrize("rank", [1, 2, 5])
    def test_rank_of_constructed_matrix(self, rank):
        assert numerical_rank(_draw(3, (12, 9), rank=rank)) == rank

    def test_rank_zero_matrix(self):
        assert numerical_rank(np.zeros((4, 7))) == 0

    def test_rank_monotone_in_tolerance(self):
        # loosening the cutoff never increases the rank
        a = _draw(4, (10, 10), rank=6) + 1e-12 * _draw(5, (10, 10))
        tight = numerical_rank(a, RankPolicy("relative", 1e-14))
        loose = numerical_rank(a, RankPolicy("relative", 1e-6))
        assert loose <= tight

    def test_policy_thresholds(self):
        assert MACHINE_RANK_POLICY.threshold(8, 32, 2.0) == pytest.approx(
            32 * np.finfo(np.float64).eps * 2.0
        )
        assert FIXED_RELATIVE_RANK_POLICY.threshold(8, 32, 2.0) == pytest.approx(2e-10)

    def test_policy_validation(self):
        with pytest.raises(InvalidInputError):
            RankPolicy("loose")
        with pytest.raises(InvalidInputError):
            RankPolicy("relative", 0.0)


class TestExactPolar:
    @settings(deadline=None, max_examples=40)
    @given(seed=st.integers(0, 2**31), idx=st.integers(0, len(SHAPES) - 1),
           deficient=st.booleans())
    def test_polar_identities(self, seed, idx, deficient):
        shape = SHAPES[idx]
        rank = max(1, min(shape) // 2) if deficient else None
        g = _draw(seed, shape, rank=rank)
        p = exact_polar(g)
        nuc = nuclear_norm(g)
        assert abs(frobenius_inner(g, p) - nuc) <= 1e-8 * (1 + nuc)
        assert abs(float(np.sum(p * p)) - numerical_rank(g)) <= 1e-6

    def test_orthonormal_rows_fixed_point(self):
        q = compact_svd(_draw(6, (5, 9))).u.T[:5]  # 5 orthonormal rows in R^9
        np.testing.assert_allclose(exact_polar(q), q, atol=1e-8)

    def test_zero_maps_to_zero(self):
        assert np.array_equal(exact_polar(np.zeros((3, 4))), np.zeros((3, 4)))

    def test_scale_invariance(self):
        g = _draw(7, (6, 8))
        np.testing.assert_allclose(exact_polar(3.7 * g), exact_polar(g), atol=1e-12)

    def test_truncates_below_tolerance(self):
        # one genuine direction plus float-level noise: polar keeps rank 1
        g = np.outer(np.ones(6), np.ones(9)) + 1e-16 * _draw(8, (6, 9))
        p = exact_polar(g, MACHINE_RANK_POLICY)
        assert float(np.sum(p * p)) == pytest.approx(1.0, abs=1e-6)


class TestFrobeniusInner:
    def test_identity_pairs(self):
        assert frobenius_inner(np.eye(2), np.eye(2)) == 2.0
        assert frobenius_inner(_draw(9, (3, 3)), np.zeros((3, 3))) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError, match="shape"):
            frobenius_inner(np.ones((2, 3)), np.ones((3, 2)))


class TestNewtonSchulz:
    def test_zero_short_circuit(self):
        assert np.array_equal(newton_schulz(np.zeros((4, 4))), np.zeros((4, 4)))

    @pytest.mark.parametrize("shape", [(3, 8), (8, 3), (5, 5)])
    def test_shape_preserved(self, shape):
        assert newton_schulz(_draw(10, shape)).shape == shape

    def test_scalar_lands_in_band(self):
        out = newton_schulz(np.array([[5.0]]))
        assert out[0, 0] > 0
        assert abs(out[0, 0] - 1.0) <= 0.35

    def test_descent_alignment(self):
        for seed in range(10):
            g = _draw(seed, (12, 20))
            assert frobenius_inner(g, newton_schulz(g)) > 0

    def test_transpose_consistency(self):
        a = _draw(11, (4, 10))  # wide; a.T takes the transposed path
        assert np.array_equal(newton_schulz(a.T), newton_schulz(a).T)

    def test_nonfinite_iteration_reported(self):
        bad = NewtonSchulzConfig(coeff_a=1e300)
        with pytest.raises(NumericalFailureError, match="iteration"):
            newton_schulz(np.eye(3), bad)

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            NewtonSchulzConfig(iterations=0)
        with pytest.raises(InvalidInputError):
            NewtonSchulzConfig(normalization_epsilon=0.0)

    def test_fast_default_singular_band(self):
        # the default coefficients push singular values into a band around 1
        out = newton_schulz(_draw(12, (8, 32)))
        s = np.linalg.svd(out, compute_uv=False)
        assert np.all(s > 0.5) and np.all(s < 1.3)

    def test_convergent_config_tracks_exact_polar(self):
        # condition < 10 draws; the convergent schedule must be nearly exact
        rng = np.random.default_rng(13)
        for _ in range(10):
            res = compact_svd(rng.normal(size=(8, 32)))
            g = res.u @ np.diag(rng.uniform(1.0, 9.5, size=8)) @ res.v.T
            approx = newton_schulz(g, CONVERGENT_NS_CONFIG)
            exact = exact_polar(g)
            cos = frobenius_inner(approx, exact) / (
                np.linalg.norm(approx) * np.linalg.norm(exact)
            )
            assert cos >= 0.99
