import itertools

import numpy as np
import pytest

from oracles import auprc_bruteforce
from polyssl.errors import DegenerateVariance, ShapeMismatch
from polyssl.metrics import auprc, macro_auprc, r2, rmse


def test_perfect_prediction():
    y = np.array([1.0, 2.0, 3.0])
    assert r2(y, y) == 1.0
    assert rmse(y, y) == 0.0


def test_mean_prediction_r2_zero():
    y = np.array([1.0, 2.0, 3.0, 6.0])
    pred = np.full(4, y.mean())
    assert r2(y, pred) == pytest.approx(0.0, abs=1e-12)


def test_r2_degenerate_variance():
    with pytest.raises(DegenerateVariance):
        r2([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


def test_length_validation():
    with pytest.raises(ShapeMismatch):
        r2([1.0], [1.0])
    with pytest.raises(ShapeMismatch):
        rmse([1.0, 2.0], [1.0])


def test_r2_affine_invariance(rng):
    y = rng.normal(size=50)
    pred = y + rng.normal(scale=0.3, size=50)
    base = r2(y, pred)
    for a, b in [(2.0, 1.0), (-0.5, 3.0), (10.0, -7.0)]:
        assert r2(a * y + b, a * pred + b) == pytest.approx(base, rel=1e-9)


def test_rmse_scales_linearly(rng):
    y = rng.normal(size=40)
    pred = y + rng.normal(scale=0.5, size=40)
    base = rmse(y, pred)
    assert rmse(3.0 * y, 3.0 * pred) == pytest.approx(3.0 * base, rel=1e-12)


def test_auprc_perfect_ranking():
    assert auprc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0


def test_auprc_monotone_transform_invariance(rng):
    y = (rng.random(30) < 0.4).astype(int)
    y[0] = 1
    s = rng.random(30)
    base = auprc(y, s)
    assert auprc(y, np.exp(4.0 * s)) == pytest.approx(base, abs=1e-12)
    assert auprc(y, 7.0 + 2.0 * s) == pytest.approx(base, abs=1e-12)


def test_auprc_requires_positives():
    with pytest.raises(DegenerateVariance):
        auprc([0, 0, 0], [0.1, 0.2, 0.3])


def test_auprc_matches_bruteforce_all_small_label_sets(rng):
    """Every label pattern up to n=8 with random and tie-heavy scores."""
    for n in range(2, 9):
        for bits in range(1, 2**n):
            y = np.array([(bits >> k) & 1 for k in range(n)])
            s = rng.random(n)
            assert auprc(y, s) == auprc_bruteforce(y, s)
    # tie-heavy score grids at small n
    for n in (3, 4):
        for bits in range(1, 2**n):
            y = np.array([(bits >> k) & 1 for k in range(n)])
            for s in itertools.product([0.0, 0.5, 1.0], repeat=n):
                assert auprc(y, np.array(s)) == auprc_bruteforce(y, np.array(s))


def test_auprc_random_scores_approach_prevalence(rng):
    n = 10_000
    for p in (0.2, 0.5):
        y = (rng.random(n) < p).astype(int)
        s = rng.random(n)
        assert auprc(y, s) == pytest.approx(y.mean(), abs=0.05)


def test_macro_auprc_per_class(rng):
    y = np.array([0, 1, 2, 0, 1, 2, 3, 3])
    scores = rng.random((8, 4))
    macro, per_class = macro_auprc(y, scores)
    values = [v for v in per_class.values() if v is not None]
    assert macro == pytest.approx(np.mean(values))
    assert set(per_class) == {0, 1, 2, 3}


def test_macro_auprc_skips_absent_class(rng):
    y = np.array([0, 1, 0, 1])
    scores = rng.random((4, 3))
    macro, per_class = macro_auprc(y, scores)
    assert per_class[2] is None
    assert macro == pytest.approx(np.mean([per_class[0], per_class[1]]))
