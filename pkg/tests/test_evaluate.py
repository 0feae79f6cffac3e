import numpy as np
import pytest

from occlandmarks.evaluate import (
    MetricConfig,
    MetricReport,
    Predictions,
    evaluate,
    interpolated_pr,
    normalization_factors,
    oracle_predictions,
    score_predictions,
)
from occlandmarks.layout import LEFT_EYE_OUTER, RIGHT_EYE_OUTER


def test_oracle_predictor_is_perfect(samples):
    s = samples(20)
    assert sum((x.visibility == 0).sum() for x in s) > 0
    m = score_predictions(s, oracle_predictions(s)).metrics
    assert m["nme"] == 0 and m["nme_vis"] == 0 and m["nme_occ"] == 0
    assert m["occ_ap"] == 1 and m["f1"] == 1 and m["roc_auc"] == 1
    assert m["fr"] == 0 and m["ced_auc"] == 1


def test_always_visible_predictor(samples):
    s = samples(10)
    preds = oracle_predictions(s)
    preds.visibility[:] = 1.0
    report = score_predictions(s, preds)
    assert report.metrics["f1"] == 0.0
    assert report.flags["score_ties"]


def test_nulls_propagate_without_occlusion(samples):
    s = samples(3)
    for x in s:
        x.visibility[:] = 1
    m = score_predictions(s, oracle_predictions(s)).metrics
    assert m["nme_occ"] is None and m["occ_ap"] is None and m["roc_auc"] is None


def test_counts_and_decomposition(samples):
    s = samples(12)
    rng = np.random.default_rng(0)
    preds = oracle_predictions(s)
    preds.points = preds.points + rng.normal(0, 2, preds.points.shape)
    preds.visibility = rng.random(preds.visibility.shape)
    r = score_predictions(s, preds)
    assert r.counts["vis"] + r.counts["occ"] == 100 * len(s)
    m = r.metrics
    combined = (r.counts["vis"] * m["nme_vis"] + r.counts["occ"] * m["nme_occ"]) / (100 * len(s))
    assert m["nme"] == pytest.approx(combined, abs=1e-12)
    assert len(r.per_landmark_nme) == 100 and len(r.pr_curve) == 101


def test_normalization_choices(samples):
    s = samples(4)
    d = normalization_factors(s, MetricConfig())
    for x, di in zip(s, d):
        diag = np.hypot(x.box[2], x.box[3])
        if x.visibility[RIGHT_EYE_OUTER] and x.visibility[LEFT_EYE_OUTER]:
            assert di == pytest.approx(np.linalg.norm(x.points[RIGHT_EYE_OUTER] - x.points[LEFT_EYE_OUTER]))
        else:
            assert di == pytest.approx(diag)
    assert np.all(normalization_factors(s, MetricConfig(normalization="fixed", fixed_d=7.0)) == 7.0)


def test_report_round_trip(samples, tmp_path):
    s = samples(5)
    r = score_predictions(s, oracle_predictions(s))
    path = r.write(tmp_path / "r.json")
    back = MetricReport.read(path)
    assert back == r
    assert back.to_json() == path.read_text()


def test_errors(samples):
    with pytest.raises(ValueError):
        score_predictions([], Predictions(np.zeros((0, 100, 2)), np.zeros((0, 100))))
    s = samples(2)
    with pytest.raises(ValueError):
        score_predictions(s, Predictions(np.zeros((2, 99, 2)), np.zeros((2, 99))))
    for bad in (MetricConfig(tau=1.0), MetricConfig(normalization="fixed"), MetricConfig(cutoff=0)):
        with pytest.raises(ValueError):
            bad.validate()


def test_macro_averaging(samples):
    s = samples(6)
    r = score_predictions(s, oracle_predictions(s), MetricConfig(averaging="macro"))
    assert r.metrics["occ_ap"] == 1.0


def test_interpolated_pr_envelope():
    curve = interpolated_pr([0.9, 0.8, 0.7], [0, 1, 1])
    assert curve[0] == [0.0, pytest.approx(2 / 3)]
    assert curve[-1] == [1.0, pytest.approx(2 / 3)]
    assert interpolated_pr([0.1], [0]) == []


def test_evaluate_model_deterministic(samples, make_model):
    s = samples(4)
    model = make_model(crop=64)
    a = evaluate(model, s).to_json()
    assert a == evaluate(model, s).to_json()
