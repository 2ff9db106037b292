import logging
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udistill import calibrator as cal
from udistill.calibrator import (
    CalibrationError,
    CalibrationMap,
    ece,
    fit_isotonic,
    fit_temperature,
    should_calibrate,
)

from oracles import isotonic_bruteforce, isotonic_grid, nll_grid_temperature


# ---------------------------------------------------------------------------
# fit_isotonic


def test_isotonic_already_monotone():
    m = fit_isotonic([(0.1, 0), (0.9, 1)])
    assert m.knots == ((0.1, 0.0), (0.9, 1.0))


def test_isotonic_worked_example():
    # one violator pool: fitted values [0, 0.5, 0.5, 1]
    pairs = [(0.1, 0), (0.4, 1), (0.5, 0), (0.9, 1)]
    m = fit_isotonic(pairs)
    fitted = [cal.apply(m, x) for x in (0.1, 0.4, 0.5, 0.9)]
    assert fitted == pytest.approx([0.0, 0.5, 0.5, 1.0], abs=1e-12)
    # grid oracle: brute-force over monotone vectors on a 0.001 grid
    xs, grid_fit = isotonic_grid(pairs, step=0.001)
    assert grid_fit == pytest.approx(fitted, abs=1e-9)
    # exhaustive partition enumeration agrees too
    xs, bf = isotonic_bruteforce(pairs)
    assert bf == pytest.approx(fitted, abs=1e-12)


def test_isotonic_all_positive_labels():
    m = fit_isotonic([(0.2, 1), (0.5, 1), (0.8, 1)])
    for x in (0.0, 0.3, 1.0):
        assert cal.apply(m, x) == 1.0


def test_isotonic_single_f_degenerate(caplog):
    with caplog.at_level(logging.WARNING):
        m = fit_isotonic([(0.5, 0), (0.5, 1), (0.5, 1)])
    assert "constant" in caplog.text
    for x in (0.0, 0.5, 1.0):
        assert cal.apply(m, x) == pytest.approx(2 / 3)


def test_isotonic_needs_two_pairs():
    with pytest.raises(CalibrationError):
        fit_isotonic([(0.5, 1)])


def test_isotonic_rejects_bad_f():
    with pytest.raises(CalibrationError):
        fit_isotonic([(1.5, 1), (0.2, 0)])


def test_isotonic_ties_pooled_by_mean():
    m = fit_isotonic([(0.3, 0), (0.3, 1), (0.7, 1)])
    assert cal.apply(m, 0.3) == pytest.approx(0.5)
    assert cal.apply(m, 0.7) == pytest.approx(1.0)


def test_isotonic_matches_bruteforce_random():
    rng = random.Random(20240817)
    for _ in range(300):
        n = rng.randint(2, 8)
        fs = [round(rng.random(), 3) for _ in range(n)]
        if rng.random() < 0.3 and n >= 3:
            fs[1] = fs[0]  # force ties sometimes
        ys = [rng.choice([0, 1]) if rng.random() < 0.8 else rng.random() for _ in range(n)]
        pairs = list(zip(fs, ys))
        try:
            m = fit_isotonic(pairs)
        except CalibrationError:
            continue
        xs, expected = isotonic_bruteforce(pairs)
        got = [cal.apply(m, x) for x in xs]
        assert got == pytest.approx(expected, abs=1e-6)


def test_isotonic_fit_preserves_monotone_consistent_data():
    pairs = [(0.1, 0.05), (0.3, 0.3), (0.6, 0.6), (0.9, 0.95)]
    m = fit_isotonic(pairs)
    for f, y in pairs:
        assert cal.apply(m, f) == pytest.approx(y, abs=1e-12)


# ---------------------------------------------------------------------------
# apply


def test_apply_identity():
    assert cal.apply(CalibrationMap.identity(), 0.37) == 0.37


def test_apply_linear_interpolation():
    m = CalibrationMap(kind="isotonic", knots=((0.1, 0.0), (0.9, 1.0)))
    assert cal.apply(m, 0.5) == pytest.approx(0.5)
    assert cal.apply(m, 0.3) == pytest.approx(0.25)


def test_apply_clamps_outside_knots():
    m = CalibrationMap(kind="isotonic", knots=((0.2, 0.1), (0.8, 0.7)))
    assert cal.apply(m, 0.0) == 0.1
    assert cal.apply(m, 1.0) == 0.7


def test_apply_temperature_one_is_identity():
    m = CalibrationMap(kind="temperature", temperature=1.0)
    for f in (0.01, 0.3, 0.5, 0.77, 0.99):
        assert cal.apply(m, f) == pytest.approx(f, abs=1e-9)


def test_apply_temperature_flattens():
    m = CalibrationMap(kind="temperature", temperature=2.0)
    assert cal.apply(m, 0.9) < 0.9
    assert cal.apply(m, 0.1) > 0.1
    assert cal.apply(m, 0.5) == pytest.approx(0.5)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=2, max_size=40
    ),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_apply_monotone_property(pairs, f1, f2):
    try:
        m = fit_isotonic(pairs)
    except CalibrationError:
        return
    lo, hi = min(f1, f2), max(f1, f2)
    assert cal.apply(m, lo) <= cal.apply(m, hi) + 1e-12
    assert 0.0 <= cal.apply(m, lo) <= 1.0


# ---------------------------------------------------------------------------
# fit_temperature


def synth_temp_pairs(t_star, n, seed):
    rng = random.Random(seed)
    pairs = []
    for _ in range(n):
        f = rng.uniform(0.02, 0.98)
        z = math.log(f / (1 - f)) / t_star
        p = 1 / (1 + math.exp(-z))
        pairs.append((f, 1 if rng.random() < p else 0))
    return pairs


def test_temperature_recovers_unit():
    pairs = synth_temp_pairs(1.0, 5000, seed=1)
    m = fit_temperature(pairs)
    assert 0.9 <= m.temperature <= 1.1
    assert abs(m.temperature - nll_grid_temperature(pairs)) < 0.02


def test_temperature_recovers_overconfident():
    pairs = synth_temp_pairs(2.0, 5000, seed=2)
    m = fit_temperature(pairs)
    assert 1.8 <= m.temperature <= 2.2
    assert abs(m.temperature - nll_grid_temperature(pairs)) < 0.03


def test_temperature_single_label_errors():
    with pytest.raises(CalibrationError):
        fit_temperature([(0.2, 1), (0.8, 1)])


# ---------------------------------------------------------------------------
# ece / should_calibrate


def test_ece_perfect():
    assert ece([(1.0, 1)] * 20) == 0.0


def test_ece_hand_computed():
    # 10 pairs at p=0.8, 6 correct: one occupied bin, |0.8 - 0.6| = 0.2
    pairs = [(0.8, 1)] * 6 + [(0.8, 0)] * 4
    assert ece(pairs) == pytest.approx(0.2)


def test_ece_empty_errors():
    with pytest.raises(CalibrationError):
        ece([])


def test_ece_permutation_invariant():
    rng = random.Random(3)
    pairs = [(rng.random(), rng.choice([0, 1])) for _ in range(500)]
    shuffled = pairs[:]
    rng.shuffle(shuffled)
    assert ece(pairs) == pytest.approx(ece(shuffled))


def test_ece_right_edge_in_last_bin():
    assert ece([(1.0, 0)], n_bins=30) == 1.0


def test_should_calibrate_verdicts():
    skip_pairs = [(0.8, 1)] * 826 + [(0.8, 0)] * 174  # measured ECE 0.026
    assert ece(skip_pairs) == pytest.approx(0.026)
    assert should_calibrate(skip_pairs) == "skip"

    cal_pairs = [(0.8, 1)] * 700 + [(0.8, 0)] * 300  # measured ECE 0.100
    assert ece(cal_pairs) == pytest.approx(0.100)
    assert should_calibrate(cal_pairs) == "calibrate"

    boundary = [(0.8, 1)] * 750 + [(0.8, 0)] * 250  # exactly at the threshold
    assert ece(boundary) == pytest.approx(0.05)
    assert should_calibrate(boundary) == "calibrate"


# ---------------------------------------------------------------------------
# serialization


def test_map_json_roundtrip(tmp_path):
    m = fit_isotonic([(0.1, 0), (0.4, 1), (0.5, 0), (0.9, 1)])
    path = tmp_path / "map.json"
    m.save(path)
    loaded = CalibrationMap.load(path)
    assert loaded == m
    t = CalibrationMap(kind="temperature", temperature=1.7)
    t.save(path)
    assert CalibrationMap.load(path) == t


def test_map_validation():
    with pytest.raises(ValueError):
        CalibrationMap(kind="isotonic", knots=((0.5, 0.8), (0.5, 0.9)))
    with pytest.raises(ValueError):
        CalibrationMap(kind="isotonic", knots=((0.1, 0.9), (0.5, 0.2)))
    with pytest.raises(ValueError):
        CalibrationMap(kind="temperature", temperature=0.0)
    with pytest.raises(ValueError):
        CalibrationMap(kind="banana")
