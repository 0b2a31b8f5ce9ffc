import math

import numpy as np
import pytest

import conformal_kit as ck


def test_quantile_examples():
    assert ck.weighted_quantile([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], 1.0, 0.5) == 2.0
    assert math.isinf(ck.weighted_quantile([1.0, 2.0], [1.0, 1.0], 1.0, 0.1))


def test_p_value_conventions():
    scores = [1.0, 2.0, 3.0, 4.0]
    w = [1.0] * 4
    assert ck.weighted_p_value(scores, w, 10.0, convention="strict") == 0.0
    assert ck.weighted_p_value(scores, w, 10.0) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        ck.weighted_p_value(scores, w, 1.0, convention="nope")


def test_bad_level_raises():
    with pytest.raises(ValueError):
        ck.weighted_quantile([1.0], [1.0], 1.0, 1.5)


def test_bandwidth_round_trip():
    x = np.random.default_rng(0).normal(size=(200, 2))
    h = ck.bandwidth_for_target_neff(40.0, x)
    assert abs(ck.effective_sample_size(x, h) - 40.0) <= 0.5


def test_regions_and_p_values_agree():
    d = ck.generate_dgp(dgp=3, d=1, n=100, n_tr=200, n_te=3, seed=4)
    assert d["train_x"].shape == (200, 1)
    args = (d["train_x"], d["train_y"], d["calib_x"], d["calib_y"], d["test_x"])
    regions = ck.prediction_regions("cqr", *args, alpha=0.1)
    assert len(regions) == 3
    for r, x in zip(regions, d["test_x"]):
        lo, hi = r[0]
        mid = 0.5 * (lo + hi)
        p = ck.p_values("cqr", *args[:4], x.reshape(1, -1), [mid])[0]
        assert p > 0.1
        far = ck.p_values("cqr", *args[:4], x.reshape(1, -1), [hi + 100.0])[0]
        assert far <= 0.1
    assert "rlcp" in ck.method_names()


def test_run_coverage_small():
    out = ck.run_coverage(
        {
            "reps": 2,
            "methods": ["scp"],
            "dgp": {"dgp": 3, "d": 1, "n": 50, "n_tr": 100, "n_te": 10, "seed": 1},
        }
    )
    assert out["methods"][0]["method"] == "scp"
    with pytest.raises(ValueError):
        ck.run_coverage({"mystery": 1})


def test_run_hier_small():
    out = ck.run_hier({"reps": 2, "resolution": 256, "hier": {"branches": 5, "per_branch": 6}})
    assert 0.0 <= out["marginal"] <= 1.0
