import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dvit.metrics import (
    auc_ced,
    ced_export,
    ced_load,
    evaluate_errors,
    failure_rate,
    nme,
    normalization_distance,
    per_sample_nme,
)


def test_nme_example():
    gt = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 5.0]])
    pred = gt + np.array([[1.0, 0.0], [0.0, 0.0], [0.0, -2.0]])
    assert nme(pred, gt, 10.0) == pytest.approx(10.0)


def test_nme_rejects_degenerate_normalizer():
    with pytest.raises(ValueError):
        nme(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)


def test_failure_rate_is_strict():
    assert failure_rate([5.0, 15.0, 25.0], 10.0) == pytest.approx(200 / 3)
    assert failure_rate([10.0, 10.0], 10.0) == 0.0


def test_auc_endpoints():
    assert auc_ced([0.0, 0.0], 10.0) == 1.0
    assert auc_ced([10.0, 20.0], 10.0) == 0.0


def _riemann_auc(e, t, n=1_000_000):
    xs = (np.arange(n) + 0.5) * (t / n)
    cdf = np.searchsorted(np.sort(e), xs, side="right") / len(e)
    return float(cdf.mean())


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 20.0), min_size=1, max_size=40), st.sampled_from([8.0, 10.0]))
def test_auc_matches_riemann(errors, t):
    assert abs(auc_ced(errors, t) - _riemann_auc(np.array(errors), t)) <= 1e-6


def test_per_sample_matches_brute_force(rng):
    preds = rng.normal(size=(6, 5, 2)) * 3
    gts = rng.normal(size=(6, 5, 2)) * 3
    ours = per_sample_nme(preds, gts, (0, 1))
    for i in range(6):
        d = np.hypot(*(gts[i, 0] - gts[i, 1]))
        ref = np.mean([np.hypot(*(preds[i, k] - gts[i, k])) for k in range(5)]) / d * 100
        assert abs(ours[i] - ref) <= 1e-9
    assert normalization_distance(gts).shape == (6,)


def test_ced_round_trip(tmp_path, rng):
    e = rng.uniform(0, 20, size=50)
    p = ced_export(e, tmp_path / "c.csv")
    rows = ced_load(p)
    assert [r[0] for r in rows] == [float(f"{v:.9g}") for v in np.sort(e)]
    assert rows[-1][1] == 1.0
    raw = p.read_bytes()
    ced_export(e, tmp_path / "c.csv")
    assert p.read_bytes() == raw


def test_ced_load_rejects_missing_header(tmp_path):
    (tmp_path / "bad.csv").write_text("1,2\n")
    with pytest.raises(ValueError):
        ced_load(tmp_path / "bad.csv")


def test_evaluate_errors_fields():
    rep = evaluate_errors([5.0, 15.0, 25.0], 10.0)
    assert rep.nme == pytest.approx(15.0)
    assert rep.fr == pytest.approx(200 / 3)
    assert rep.auc == pytest.approx((5.0 / 10.0) / 3)
    assert rep.ced == [5.0, 15.0, 25.0]
