import shutil
from dataclasses import replace
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsomdp.profiles import (CaseParams, EpochProfile, Flex, HistoryRecord, Prices,
                             ProfileError, TransitionMatrix, apply_case, bin_index,
                             error_bins, estimate_transition_matrix, load_day_profiles,
                             load_history, relative_error)

BINS = error_bins(11)
BUNDLED = Path(str(resources.files("dsomdp") / "data" / "profiles"))


@pytest.fixture(scope="module")
def base():
    return load_day_profiles(BUNDLED, n_der=2)


@pytest.fixture
def profile_dir(tmp_path):
    d = tmp_path / "profiles"
    shutil.copytree(BUNDLED, d)
    return d


@pytest.mark.parametrize(("actual", "pred", "expected"), [
    (0.5, 1.0, -0.5), (1.0, 0.5, 0.5), (0.0, 0.0, 0.0), (0.0, 1.0, -1.0), (1.0, 0.0, 1.0),
])
def test_relative_error(actual, pred, expected):
    assert relative_error(actual, pred) == expected


def test_relative_error_range_on_many_pairs():
    rng = np.random.default_rng(7)
    a = rng.exponential(1.0, 100_000) * (rng.random(100_000) > 0.1)
    p = rng.exponential(1.0, 100_000) * (rng.random(100_000) > 0.1)
    e = relative_error(a, p)
    assert np.all((e >= -1) & (e <= 1))
    np.testing.assert_array_equal(e > 0, a > p)


@given(a=st.floats(0, 1e6), p=st.floats(0, 1e6))
def test_relative_error_sign(a, p):
    e = relative_error(a, p)
    assert -1 <= e <= 1
    assert (e > 0) == (a > p)


@pytest.mark.parametrize(("value", "index"), [
    (0.0, 5), (0.09, 5), (0.1, 5), (-0.1, 5), (0.11, 6), (-0.3, 4), (1.0, 10), (-1.0, 0),
])
def test_bin_index(value, index):
    assert bin_index(value, BINS) == index


def test_error_bins():
    assert error_bins(11) == (-1.0, -0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    assert error_bins(5) == (-1.0, -0.5, 0.0, 0.5, 1.0)


def _history(errors, pred=0.5, start=0):
    """Records whose relative errors are ``errors``, one epoch apart."""
    out = []
    for k, e in enumerate(errors):
        actual = pred * (1 + e) if e <= 0 else pred / (1 - e) if e < 1 else 1.0
        out.append(HistoryRecord(start + k, actual, pred))
    return out


def test_count_ratio():
    # bin 5 visited ten times with a successor, moving to bin 6 three times
    seq = [0.0, 0.2] * 3 + [0.0] * 8
    m = estimate_transition_matrix(_history(seq), BINS).array
    assert m[5, 6] == pytest.approx(0.3)
    assert m[5, 5] == pytest.approx(0.7)


def test_constant_history_gives_identity():
    m = estimate_transition_matrix(_history([0.4] * 20), BINS).array
    np.testing.assert_array_equal(m, np.eye(11))


def test_alternating_history_gives_permutation():
    m = estimate_transition_matrix(_history([-0.2, 0.2] * 10), BINS).array
    assert m[4, 6] == 1.0 and m[6, 4] == 1.0
    assert np.all(m.sum(axis=0)[[4, 6]] == 1.0)


def test_gaps_and_nights_break_chains():
    recs = _history([0.0, 0.2]) + [HistoryRecord(2, 0.0, 0.0)] + _history([0.4, 0.4], start=3) \
        + _history([-0.4], start=10)
    m = estimate_transition_matrix(recs, BINS).array
    assert m[5, 6] == 1.0
    assert m[6, 6] == 1.0  # bin 6 never has a successor: identity row
    assert m[7, 7] == 1.0  # 0.4 -> 0.4 once; the jump to t=10 is a gap


def test_timestamps_and_empty_history():
    t0 = datetime(2024, 1, 1, 10)
    recs = [HistoryRecord(t0 + k * timedelta(minutes=15), 0.5, 0.5) for k in range(3)]
    assert estimate_transition_matrix(recs, BINS).array[5, 5] == 1.0
    with pytest.raises(ProfileError):
        estimate_transition_matrix([], BINS)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=80),
       st.sampled_from([3, 5, 11]))
def test_estimated_matrix_is_stochastic(pairs, n_bins):
    recs = [HistoryRecord(k, a, p) for k, (a, p) in enumerate(pairs)]
    m = estimate_transition_matrix(recs, error_bins(n_bins)).array
    assert np.all(m >= 0)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-9, rtol=0)


def test_matrix_csv_round_trip():
    rng = np.random.default_rng(3)
    m = rng.random((5, 5))
    tm = TransitionMatrix.from_array(error_bins(5), m / m.sum(axis=1, keepdims=True))
    back = TransitionMatrix.from_csv(tm.to_csv())
    np.testing.assert_allclose(back.array, tm.array, atol=1e-12)
    assert back.bins == tm.bins


@pytest.mark.parametrize("m", [np.full((3, 3), 0.5), -np.eye(3), np.eye(2)])
def test_matrix_validation(m):
    with pytest.raises(ValueError):
        TransitionMatrix.from_array(error_bins(3), m)


def test_bundled_history_loads():
    hist = load_history(BUNDLED / "history.csv")
    assert len(hist) == 120 * 96
    assert all(0 <= h.actual_pu <= 1 and 0 <= h.pred_pu <= 1 for h in hist)


def test_bundled_profiles(base):
    assert base.horizon == 96
    assert base.n_der == 2
    p = base.predicted[0].prices
    assert (p.c_pv, p.c_load, p.c_grid, p.c_der) == (200, 600, 200, 200)
    flex = [e.t for e in base.predicted if e.flex is not None]
    assert flex == list(range(64, 72))


def test_flex_columns(profile_dir):
    lines = (profile_dir / "tso.csv").read_text().splitlines()
    out = [lines[0]]
    for row in lines[1:]:
        c = row.split(",")
        t = int(c[0])
        c[5:] = ["1", "1.0", "100.0"] if 64 <= t < 72 else ["0", "0.0", "0.0"]
        out.append(",".join(c))
    (profile_dir / "tso.csv").write_text("\n".join(out) + "\n")
    day = load_day_profiles(profile_dir)
    assert day.actual[64].flex == Flex(1.0, 100.0)
    assert day.actual[63].flex is None and day.actual[72].flex is None


def test_missing_flex_columns(profile_dir):
    lines = (profile_dir / "tso.csv").read_text().splitlines()
    (profile_dir / "tso.csv").write_text("\n".join(",".join(r.split(",")[:5]) for r in lines))
    day = load_day_profiles(profile_dir)
    assert all(p.flex is None for p in day.actual)


def test_wrong_row_count(profile_dir):
    lines = (profile_dir / "loads.csv").read_text().splitlines()
    (profile_dir / "loads.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ProfileError, match="found 95"):
        load_day_profiles(profile_dir)


def test_negative_value(profile_dir):
    text = (profile_dir / "pv_1.csv").read_text().replace("\n40,", "\n40,-", 1)
    (profile_dir / "pv_1.csv").write_text(text)
    with pytest.raises(ProfileError, match="pv_1.csv:42"):
        load_day_profiles(profile_dir)


def test_malformed_header(profile_dir):
    text = (profile_dir / "loads.csv").read_text().replace("load_factor_pred", "lf", 1)
    (profile_dir / "loads.csv").write_text(text)
    with pytest.raises(ProfileError, match="header"):
        load_day_profiles(profile_dir)


def test_missing_file(profile_dir):
    (profile_dir / "tso.csv").unlink()
    with pytest.raises(FileNotFoundError, match="tso.csv"):
        load_day_profiles(profile_dir)


def test_price_file(profile_dir):
    rows = ["t,c_pv,c_load,c_grid,c_der"] + [f"{t},10,20,30,40" for t in range(96)]
    (profile_dir / "prices.csv").write_text("\n".join(rows) + "\n")
    day = load_day_profiles(profile_dir)
    assert day.actual[5].prices == Prices(10, 20, 30, 40)


def test_epoch_profile_checks():
    with pytest.raises(ProfileError):
        EpochProfile(0, -0.1, (0.0,))
    with pytest.raises(ProfileError):
        EpochProfile(0, 0.5, (0.0,), tso_p_limits=(1.0, 0.0))
    p = EpochProfile(0, 0.5, (0.0,), tso_p_limits=(-1.0, 3.0), flex=Flex(2.0, 100.0))
    assert p.p_bounds() == (-1.0, 2.0)


def test_case_one_is_identity(base):
    assert apply_case(1, base) == base


def test_case_two_shuts_down_der2(base):
    day = apply_case(2, base)
    for t in range(96):
        if 48 <= t < 56:
            assert day.pv_actual[t][1] == 0.0
            assert day.pv_actual[t][0] == base.pv_actual[t][0]
        else:
            assert day.pv_actual[t] == base.pv_actual[t]
    assert day.predicted == base.predicted


def test_case_three_swaps_trace(base):
    day = apply_case(3, base)
    assert day.pv_actual == base.pv_actual_large
    assert day.predicted == base.predicted and day.actual == base.actual


def test_case_four_bumps_actual_load(base):
    day = apply_case(4, base, CaseParams(load_bump=0.2))
    for p, q in zip(base.actual, day.actual):
        assert q.load_factor == pytest.approx(p.load_factor + (0.2 if 40 <= p.t < 56 else 0.0))
    assert day.predicted == base.predicted


def test_case_five_hides_flex_offline(base):
    day = apply_case(5, base)
    three = apply_case(3, base)
    assert all(p.flex is None for p in day.predicted)
    assert day.actual == three.actual
    assert day.pv_actual == three.pv_actual


def test_apply_case_is_pure(base):
    snapshot = replace(base)
    for c in range(1, 6):
        apply_case(c, base)
    assert base == snapshot
    with pytest.raises(ValueError):
        apply_case(6, base)
