import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ivbma.models import (
    EnumerationCapError,
    InclusionMask,
    code_to_string,
    codes_to_matrix,
    enumerate_all,
    is_rank_deficient,
    propose_flip,
    uniform_log_prior,
)


def test_uniform_log_prior_values():
    assert uniform_log_prior(0) == 0.0
    assert uniform_log_prior(1) == pytest.approx(-0.6931, abs=1e-4)
    # 42 ln 2 = 29.11218...; the prior mass is 1 / 2^42 by definition
    assert uniform_log_prior(42) == pytest.approx(-29.1122, abs=1e-4)
    assert math.exp(uniform_log_prior(42)) * 4398046511104 == pytest.approx(1.0)


@given(st.integers(0, 60))
def test_prior_cancels_in_ratios(K):
    # every mask of a K-column space carries the same prior mass
    assert uniform_log_prior(K) - uniform_log_prior(K) == 0.0
    assert uniform_log_prior(K) == pytest.approx(-math.log(2**K))


def test_flip_single_neighbor(rng):
    assert propose_flip(InclusionMask((False,)), rng) == InclusionMask((True,))


@given(st.lists(st.booleans(), min_size=1, max_size=20), st.integers(0, 2**32 - 1))
def test_flip_changes_popcount_by_one(bits, seed):
    m = InclusionMask(tuple(bits))
    new = propose_flip(m, np.random.default_rng(seed))
    assert abs(new.size - m.size) == 1
    assert sum(a != b for a, b in zip(m.bits, new.bits)) == 1


def test_flip_index_uniform_chi_square():
    rng = np.random.default_rng(7)
    K = 8
    m = InclusionMask.empty(K)
    counts = Counter(propose_flip(m, rng).indices[0] for _ in range(100_000))
    expected = 100_000 / K
    chi2 = sum((counts[i] - expected) ** 2 / expected for i in range(K))
    # 99.9% quantile of chi-square with 7 dof
    assert chi2 < 24.32


def test_enumerate_small():
    assert [m.to_string() for m in enumerate_all(2)] == ["00", "01", "10", "11"]
    assert [m.to_string() for m in enumerate_all(0)] == [""]


def test_enumeration_cap():
    with pytest.raises(EnumerationCapError, match="bma-mc3"):
        list(enumerate_all(26))


@pytest.mark.parametrize("K", range(0, 13))
def test_enumerate_complete_and_unique(K):
    masks = list(enumerate_all(K))
    assert len(masks) == 2**K
    assert len(set(masks)) == 2**K


@given(st.lists(st.booleans(), min_size=1, max_size=30))
def test_code_string_roundtrip(bits):
    m = InclusionMask(tuple(bits))
    assert InclusionMask.from_code(m.code, m.K) == m
    assert InclusionMask.from_string(m.to_string()) == m
    assert code_to_string(m.code, m.K) == m.to_string()
    assert codes_to_matrix(np.array([m.code]), m.K)[0].tolist() == list(bits)


def test_leftmost_bit_is_first_column():
    m = InclusionMask.from_string("100")
    assert m.indices == (0,)
    assert m.code == 4


def test_flip_proposal_symmetric():
    # P(m -> m') = P(m' -> m) = 1/K for Hamming-1 pairs
    K = 4
    rng = np.random.default_rng(1)
    a = InclusionMask.from_string("0101")
    b = a.flip(2)
    n = 40_000
    fa = sum(propose_flip(a, rng) == b for _ in range(n)) / n
    fb = sum(propose_flip(b, rng) == a for _ in range(n)) / n
    se = math.sqrt(0.25 * 0.75 / n)
    assert abs(fa - 1 / K) < 4 * se
    assert abs(fb - 1 / K) < 4 * se


def test_rank_rule():
    x = np.arange(6.0)
    assert is_rank_deficient(np.column_stack([x, x]))
    assert is_rank_deficient(np.ones((6, 1)))  # constant column collinear with intercept
    assert not is_rank_deficient(np.column_stack([x, x**2]))
