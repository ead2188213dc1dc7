"""One-step descent bounds and the grouping criterion, checked against SVD oracles."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupmuon.criterion import (
    AlignedInstance,
    CriterionParams,
    aligned_closed_form,
    aligned_instance,
    criterion_holds,
    descent_bounds,
    practical_norm_cost,
)
from groupmuon.errors import InvalidConfigurationError, InvalidInputError
from groupmuon.grouping import RowPartition, full_partition, split_rows
from groupmuon.matcore import exact_polar

REPORT_FIELDS = [
    "full_nuclear", "group_nuclears", "full_rank", "group_ranks",
    "gain", "ideal_cost", "practical_cost", "d_all", "d_grp", "grouping_favored",
]


def _oracle(g, partition, beta, eta):
    """Recompute every bound field with nothing but np.linalg.svd."""
    def nuc_rank(m):
        s = np.linalg.svd(m, compute_uv=False)
        cut = max(m.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
        return float(s.sum()), int(np.sum(s > cut))

    full_nuc, full_rank = nuc_rank(g)
    blocks = [g[list(grp), :] for grp in partition.groups]
    parts = [nuc_rank(b) for b in blocks]
    sum_nuc = sum(p[0] for p in parts)
    sum_rank = sum(p[1] for p in parts)
    d_all = eta * full_nuc - 0.5 * beta * eta**2 * full_rank
    d_grp = eta * sum_nuc - 0.5 * beta * eta**2 * sum_rank
    return {
        "full_nuclear": full_nuc,
        "sum_group_nuclear": sum_nuc,
        "full_rank": full_rank,
        "sum_group_rank": sum_rank,
        "gain": sum_nuc - full_nuc,
        "ideal_cost": 0.5 * beta * eta * (sum_rank - full_rank),
        "d_all": d_all,
        "d_grp": d_grp,
    }


def _random_partition(rng, rows):
    perm = rng.permutation(rows)
    n_cuts = int(rng.integers(0, min(3, rows - 1) + 1))
    cuts = sorted(rng.choice(np.arange(1, rows), size=n_cuts, replace=False))
    return RowPartition(rows, tuple(
        tuple(int(h) for h in chunk) for chunk in np.split(perm, cuts) if len(chunk)
    ))


class TestDescentBounds:
    @settings(deadline=None, max_examples=40)
    @given(seed=st.integers(0, 2**31), deficient=st.booleans(),
           beta=st.sampled_from([0.5, 1.0, 4.0]), eta=st.sampled_from([0.01, 0.1, 1.0]))
    def test_matches_svd_oracle(self, seed, deficient, beta, eta):
        rng = np.random.default_rng(seed)
        rows, cols = int(rng.integers(2, 16)), int(rng.integers(2, 24))
        if deficient:
            r = max(1, min(rows, cols) // 2)
            g = rng.normal(size=(rows, r)) @ rng.normal(size=(r, cols))
        else:
            g = rng.normal(size=(rows, cols))
        part = _random_partition(rng, rows)
        rep = descent_bounds(g, part, CriterionParams(beta=beta, eta=eta))
        want = _oracle(g, part, beta, eta)
        assert rep.full_rank == want["full_rank"]
        assert sum(rep.group_ranks) == want["sum_group_rank"]
        for key in ("full_nuclear", "gain", "ideal_cost", "d_all", "d_grp"):
            assert getattr(rep, key) == pytest.approx(want[key], rel=1e-10, abs=1e-10)

    def test_gain_nonnegative_and_rank_superadditive(self):
        # row-splitting never shrinks total nuclear norm nor total rank
        rng = np.random.default_rng(0)
        for _ in range(25):
            g = rng.normal(size=(10, 14))
            rep = descent_bounds(g, _random_partition(rng, 10),
                                 CriterionParams(beta=1.0, eta=0.1))
            assert rep.gain >= -1e-10 * (1 + rep.full_nuclear)
            assert sum(rep.group_ranks) >= rep.full_rank

    def test_single_group_is_neutral(self):
        g = np.random.default_rng(1).normal(size=(8, 5))
        rep = descent_bounds(g, full_partition(8), CriterionParams(beta=2.0, eta=0.3))
        assert rep.gain == 0.0
        assert rep.ideal_cost == 0.0
        assert rep.d_all == rep.d_grp
        assert not rep.grouping_favored

    @settings(deadline=None, max_examples=40)
    @given(seed=st.integers(0, 2**31))
    def test_criterion_equivalence(self, seed):
        # gain > ideal cost exactly when the grouped bound beats the full bound
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(9, 6))
        rep = descent_bounds(g, _random_partition(rng, 9),
                             CriterionParams(beta=float(rng.uniform(0.1, 5)),
                                             eta=float(rng.uniform(0.01, 1))))
        assert criterion_holds(rep) == (rep.d_grp > rep.d_all)
        assert rep.grouping_favored == criterion_holds(rep)
        # gain > cost and d_grp > d_all are the same inequality; floats can
        # break exact ties either way, so only compare above rounding noise
        margin = rep.gain - rep.ideal_cost
        if abs(margin) > 1e-9 * (1 + rep.full_nuclear):
            assert (margin > 0) == criterion_holds(rep)

    def test_report_serialization(self):
        rng = np.random.default_rng(2)
        rep = descent_bounds(rng.normal(size=(6, 6)),
                             RowPartition(6, ((0, 1, 2), (3, 4, 5))),
                             CriterionParams(beta=1.0, eta=0.1))
        d = rep.as_dict()
        assert list(d) == REPORT_FIELDS
        parsed = json.loads(rep.to_json())
        assert parsed["full_rank"] == rep.full_rank
        assert parsed["practical_cost"] is None

    def test_params_validation(self):
        with pytest.raises(InvalidInputError):
            CriterionParams(beta=0.0, eta=0.1)
        with pytest.raises(InvalidInputError):
            CriterionParams(beta=1.0, eta=-0.1)


class TestPracticalNormCost:
    def test_zero_when_updates_identical(self):
        rng = np.random.default_rng(3)
        o = rng.normal(size=(8, 5))
        params = CriterionParams(beta=1.0, eta=0.2)
        blocks = [o[:4], o[4:]]
        assert practical_norm_cost(o, blocks, params) == 0.0

    def test_formula_against_hand_computation(self):
        params = CriterionParams(beta=2.0, eta=0.5)
        o_full = np.array([[1.0, 0.0], [0.0, 1.0]])
        o_groups = [np.array([[2.0, 0.0]]), np.array([[0.0, 1.0]])]
        # (beta*eta/2) * (sum ||O_i||_F^2 - ||O_full||_F^2) = 0.5 * (5 - 2)
        assert practical_norm_cost(o_full, o_groups, params) == pytest.approx(1.5)

    def test_whitened_blocks_cost_equals_rank_surplus_scale(self):
        # exact polar blocks have squared norm = rank, so the practical cost
        # collapses to the ideal one on full-rank blocks
        rng = np.random.default_rng(4)
        g = rng.normal(size=(8, 12))
        part = RowPartition(8, ((0, 1, 2, 3), (4, 5, 6, 7)))
        params = CriterionParams(beta=1.0, eta=0.1)
        o_full = exact_polar(g)
        o_groups = [exact_polar(b) for b in split_rows(g, part)]
        rep = descent_bounds(g, part, params)
        assert practical_norm_cost(o_full, o_groups, params) == pytest.approx(
            rep.ideal_cost, abs=1e-9
        )


class TestAlignedInstance:
    def test_unit_cell_closed_form(self):
        gain, rank_gap = aligned_closed_form(4, [1.0, 1.0, 1.0, 1.0])
        assert gain == pytest.approx(2.0)
        assert rank_gap == 3

    @settings(deadline=None, max_examples=30)
    @given(k=st.sampled_from([1, 2, 4, 8]), seed=st.integers(0, 2**31))
    def test_constructed_matrix_matches_closed_form(self, k, seed):
        rng = np.random.default_rng(seed)
        strengths = rng.uniform(0.5, 3.0, size=k).tolist()
        inst, g = aligned_instance(k, strengths, [6] * k, cols=10, seed=seed)
        want_gain, want_gap = aligned_closed_form(k, strengths)
        rep = descent_bounds(g, inst.row_partition(),
                             CriterionParams(beta=1.0, eta=0.1))
        assert rep.gain == pytest.approx(want_gain, rel=1e-8, abs=1e-8)
        assert sum(rep.group_ranks) - rep.full_rank == want_gap
        assert rep.full_rank == 1  # all blocks share one right direction

    def test_equal_strength_formula(self):
        # equal strengths a give gain a*(k - sqrt(k))
        for k, a in [(4, 1.0), (9, 2.5)]:
            gain, gap = aligned_closed_form(k, [a] * k)
            assert gain == pytest.approx(a * (k - np.sqrt(k)))
            assert gap == k - 1

    def test_unequal_block_rows(self):
        inst, g = aligned_instance(3, [1.0, 2.0, 0.5], [2, 5, 3], cols=7, seed=1)
        assert g.shape == (10, 7)
        rep = descent_bounds(g, inst.row_partition(),
                             CriterionParams(beta=1.0, eta=0.1))
        want_gain, _ = aligned_closed_form(3, [1.0, 2.0, 0.5])
        assert rep.gain == pytest.approx(want_gain, rel=1e-8)

    def test_negative_strengths_use_magnitudes(self):
        gain, gap = aligned_closed_form(2, [1.0, -1.0])
        assert gain == pytest.approx(2.0 - np.sqrt(2.0))
        assert gap == 1

    def test_validation(self):
        with pytest.raises(InvalidConfigurationError):
            aligned_instance(0, [], [], cols=4)
        with pytest.raises(InvalidConfigurationError):
            aligned_instance(2, [1.0], [3, 3], cols=4)  # strength count mismatch
        with pytest.raises(InvalidConfigurationError):
            aligned_closed_form(2, [1.0, 0.0])  # zero strength kills a block
