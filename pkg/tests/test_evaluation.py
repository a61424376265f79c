import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afsl.data import DatasetConfig, generate_dataset
from afsl.evaluation import (
    REPORT_SCHEMA,
    DistortionGrid,
    EvalError,
    EvalReport,
    distortion_sweep,
    parse_condition,
    robust_eval,
    roc_auc,
    validate_report,
    video_level_scores,
)
from afsl.models import get_architecture, init_params


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def test_auc_known_values():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert roc_auc([1, 2, 3, 4], [1, 1, 0, 0]) == 0.0
    assert roc_auc([0.5] * 6, [0, 1] * 3) == 0.5


def test_auc_needs_both_classes():
    with pytest.raises(EvalError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(EvalError):
        roc_auc([0.1, 0.2], [1, 0, 1])


labelled = st.integers(2, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 6), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < len(y)),
    )
)


@settings(max_examples=100, deadline=None)
@given(labelled)
def test_auc_matches_pairwise_count(data):
    scores, labels = data
    assert roc_auc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(labelled)
def test_auc_antisymmetric_and_monotone_invariant(data):
    scores, labels = np.array(data[0], float), np.array(data[1])
    auc = roc_auc(scores, labels)
    assert roc_auc(-scores, labels) == pytest.approx(1 - auc, abs=1e-12)
    assert roc_auc(np.exp(scores) * 3 + 1, labels) == pytest.approx(auc, abs=1e-12)
    assert roc_auc(scores, 1 - labels) == pytest.approx(1 - auc, abs=1e-12)


def test_video_level_scores():
    out = video_level_scores([("b", 0.2), ("a", 1.0), ("b", 0.4), ("a", 0.0)])
    assert out == [("a", 0.5), ("b", pytest.approx(0.3))]


@pytest.mark.parametrize(
    "text, kind", [("clean", "clean"), ("pgd10", "pgd"), ("pgd3:epsilon=4/255", "pgd"), ("fgsm", "fgsm"), ("cw2", "cw2"), ("transfer", "transfer"), ("gaussian_blur@2", "distortion")]
)
def test_parse_condition(text, kind):
    cond = parse_condition(text)
    assert cond.kind == kind and cond.name == text


def test_parse_condition_options():
    assert parse_condition("pgd3:epsilon=4/255").attack.epsilon == pytest.approx(4 / 255)
    assert parse_condition("pgd3").attack.steps == 3
    for bad in ("pgdx", "cw3", "fgsm5", "sobel", "pgd10:epsilon"):
        with pytest.raises(Exception):
            parse_condition(bad)


@pytest.fixture(scope="module")
def setup():
    ds = generate_dataset(DatasetConfig(num_videos=30, clips_per_video=2, T=2, H=8, W=8, seed=2))
    params = init_params(get_architecture("tiny-cnn", (2, 8, 8)), 0)
    return params, ds


def test_untrained_model_is_near_chance():
    ds = generate_dataset(DatasetConfig(num_videos=200, clips_per_video=1, T=2, H=8, W=8, seed=5))
    aucs = [robust_eval(init_params(get_architecture("tiny-cnn", (2, 8, 8)), s), ds, ["clean"]).results[0]["auc_video"] for s in range(3)]
    assert abs(np.mean(aucs) - 0.5) <= 0.15


def test_zero_budget_attack_equals_clean(setup):
    params, ds = setup
    rep = robust_eval(params, ds, ["clean", "pgd10:epsilon=0", "fgsm:epsilon=0"])
    clean = rep.results[0]
    for r in rep.results[1:]:
        assert r["auc_video"] == clean["auc_video"] and r["auc_clip"] == clean["auc_clip"]


def test_report_deterministic_and_valid(setup):
    params, ds = setup
    a = robust_eval(params, ds, ["clean", "pgd2", "gaussian_blur@3"], seed=1, timestamp=True).to_dict()
    b = robust_eval(params, ds, ["clean", "pgd2", "gaussian_blur@3"], seed=1, timestamp=True).to_dict()
    a["meta"]["created"] = b["meta"]["created"] = ""
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    validate_report(a)
    assert EvalReport.from_dict(a).to_dict() == a
    assert {r["condition"] for r in a["results"]} == {"clean", "pgd2", "gaussian_blur@3"}
    assert a["results"][1]["attack_cfg"]["attack"] == "pgd"


def test_schema_rejects_bad_report():
    import jsonschema

    with pytest.raises(jsonschema.ValidationError):
        validate_report({"meta": {"checkpoint": "x", "dataset": "y", "seed": 0, "created": ""}, "results": [{"condition": "clean", "auc_video": 1.5, "auc_clip": 0.5, "accuracy": 0.5}]})
    with pytest.raises(jsonschema.ValidationError):
        validate_report({"results": []})
    assert "meta" in REPORT_SCHEMA["required"]


def test_transfer_needs_surrogate(setup):
    params, ds = setup
    with pytest.raises(EvalError, match="surrogate"):
        robust_eval(params, ds, ["transfer"])
    other = init_params(get_architecture("tiny-cnn", (2, 8, 8)), 1)
    rep = robust_eval(params, ds, ["transfer:steps=2"], surrogate=other)
    assert 0 <= rep.results[0]["auc_video"] <= 1


def test_distortion_grid_shape_and_average(setup):
    params, ds = setup
    grid = distortion_sweep(params, ds, kinds=("gaussian_blur", "contrast"), severities=(1, 2, 3))
    assert grid.auc.shape == (2, 3)
    np.testing.assert_allclose(grid.average, grid.auc.mean(axis=0))
    rows = grid.rows()
    assert len(rows) == 2 * 3 + 3
    assert [r["kind"] for r in rows[-3:]] == ["average"] * 3
    csv_text = grid.to_csv()
    assert csv_text.splitlines()[0] == "severity,kind,auc" and len(csv_text.splitlines()) == 10


def test_grid_average_direct():
    grid = DistortionGrid(("a", "b"), (1, 2), np.array([[0.2, 0.4], [0.6, 1.0]]))
    np.testing.assert_allclose(grid.average, [0.4, 0.7])
