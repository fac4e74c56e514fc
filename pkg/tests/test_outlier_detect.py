import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerquant.outlier_detect import DetectParams, detect_outliers, diff_series, trimmed_stats, zscores
from oracles import brute_force_outliers


def test_diff_series_examples():
    np.testing.assert_array_equal(diff_series([1, 2, 4], "subtract"), [1, 2])
    np.testing.assert_array_equal(diff_series([1, 2, 4], "divide"), [2, 2])
    with pytest.raises(ValueError):
        diff_series([1.0])
    with pytest.raises(ValueError):
        diff_series([1.0, 0.0, 2.0], "divide")
    with pytest.raises(ValueError):
        diff_series([1.0, 2.0], "multiply")


def test_trimmed_stats_examples():
    assert trimmed_stats([1, 1, 1, 1]) == (1.0, 0.0)
    mu, sd = trimmed_stats([0.0] * 18 + [-100.0, 100.0], 0.05)
    assert (mu, sd) == (0.0, 0.0)
    x = np.random.default_rng(5).normal(5, 2, 1000)
    mu, sd = trimmed_stats(x, 0.0)
    assert 4.8 <= mu <= 5.2 and 1.8 <= sd <= 2.2
    # dropping 5% per tail leaves a truncated normal with sd about 0.789 * 2
    mu, sd = trimmed_stats(x)
    assert 4.8 <= mu <= 5.2 and 1.45 <= sd <= 1.7
    with pytest.raises(ValueError):
        trimmed_stats([1.0])


def test_trimmed_stats_sigma_conventions():
    D = [1.0, 2.0, 4.0, 7.0]
    ss = sum((d - 3.5) ** 2 for d in D)
    assert trimmed_stats(D, 0.0, "sample")[1] == pytest.approx(math.sqrt(ss / 3))
    assert trimmed_stats(D, 0.0, "sqrt_ss")[1] == pytest.approx(math.sqrt(ss) / 3)


def test_zscores_zero_sigma():
    np.testing.assert_array_equal(zscores([0.0, 1.0, -2.0], 0.0, 0.0), [0.0, math.inf, math.inf])


def test_constant_series_has_no_outliers():
    assert detect_outliers([2.5] * 10).layer_indices == ()


def test_single_spike_subtract():
    S = [1.0] * 21
    S[3] = 100.0
    res = detect_outliers(S, DetectParams("subtract", m=1))
    assert res.sigma == 0.0
    assert res.layer_indices == (3,)


def test_single_spike_on_threshold_is_not_flagged():
    # 19 jumps: nothing is trimmed and both +-99 sit at exactly z = 3
    S = [1.0] * 20
    S[3] = 100.0
    res = detect_outliers(S, DetectParams("subtract", m=1))
    assert res.zscores.max() == 3.0
    assert res.layer_indices == ()


def _ascending_with_jump(n=32, jump_at=20, seed=0, growth=1.2):
    # geometric growth with a little seeded noise, one x10 jump that persists
    rng = np.random.default_rng(seed)
    S = growth ** np.arange(n) * (1 + 1e-3 * rng.standard_normal(n))
    S[jump_at:] *= 10
    return S


def test_divide_flags_only_the_jump():
    S = _ascending_with_jump()
    assert detect_outliers(S, DetectParams("divide")).layer_indices == (20,)


def test_subtract_also_flags_late_drift():
    S = _ascending_with_jump()
    flagged = detect_outliers(S, DetectParams("subtract")).layer_indices
    assert flagged == (31,)


def test_top_m_ranking_and_ties():
    S = [0.0] * 41
    S[3], S[7], S[10] = 5.0, 9.0, 5.0
    # jumps into 3 and 10 are tied at +5, the jump into 7 is +9
    assert detect_outliers(S, DetectParams(m=1)).layer_indices == (7,)
    assert detect_outliers(S, DetectParams(m=2)).layer_indices == (3, 7)
    assert detect_outliers(S, DetectParams(m=0)).layer_indices == (3, 4, 7, 8, 10, 11)


def test_rank_by_z_prefers_largest_deviation():
    S = [0.0] * 41
    S[3], S[8], S[20] = 5.0, -9.0, 1.0
    # the drop into 8 and the recovery into 9 tie on z; d favours the recovery
    assert detect_outliers(S, DetectParams(m=1, rank_by="d")).layer_indices == (9,)
    assert detect_outliers(S, DetectParams(m=1, rank_by="z")).layer_indices == (8,)


def test_detect_argument_errors():
    with pytest.raises(ValueError):
        detect_outliers([1.0, 2.0])
    with pytest.raises(ValueError):
        DetectParams(mode="ratio")
    with pytest.raises(ValueError):
        DetectParams(m=-1)
    with pytest.raises(ValueError):
        DetectParams(trim_fraction=0.5)


series = st.integers(3, 64).flatmap(
    lambda n: st.lists(st.floats(0.01, 100.0, allow_nan=False), min_size=n, max_size=n))


@settings(max_examples=300, deadline=None)
@given(series, st.sampled_from(["subtract", "divide"]), st.integers(0, 3))
def test_matches_brute_force(S, mode, m):
    got = detect_outliers(S, DetectParams(mode, m=m)).layer_indices
    assert list(got) == brute_force_outliers(S, mode, m)


@settings(max_examples=200, deadline=None)
@given(series, st.sampled_from(["subtract", "divide"]), st.integers(1, 3))
def test_invariants(S, mode, m):
    all_hits = set(detect_outliers(S, DetectParams(mode, m=0)).layer_indices)
    top = set(detect_outliers(S, DetectParams(mode, m=m)).layer_indices)
    assert top <= all_hits
    assert len(top) == min(m, len(all_hits))
    assert all(1 <= i < len(S) for i in all_hits)
    # lowering the threshold never loses outliers
    loose = set(detect_outliers(S, DetectParams(mode, m=0, z_threshold=2.0)).layer_indices)
    assert all_hits <= loose
