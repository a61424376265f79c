import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from afsl.data import (
    DISTORTION_KINDS,
    FAMILIES,
    SEVERITY_TABLE,
    ClassExhaustedError,
    DatasetConfig,
    DatasetConfigError,
    DirectoryNotEmptyError,
    DistortionError,
    DistortionSpec,
    apply_distortion,
    generate_dataset,
    load_dataset,
    make_paired_batch,
    manifest_hash,
    save_dataset,
    split_by_video,
    split_leave_one_family_out,
)
from afsl.models import FAKE, REAL


@pytest.fixture(scope="module")
def small():
    return generate_dataset(DatasetConfig(num_videos=40, clips_per_video=2, seed=3))


def test_generation_is_deterministic(small):
    again = generate_dataset(small.config)
    assert again.manifest() == small.manifest()
    assert again.digest() == small.digest()
    other = generate_dataset(DatasetConfig(num_videos=40, clips_per_video=2, seed=4))
    assert other.digest() != small.digest()


def test_class_counts_follow_real_fraction():
    ds = generate_dataset(DatasetConfig(num_videos=100, clips_per_video=1, T=2, H=8, W=8))
    labels = {s.video_id: s.label for s in ds}
    assert sum(v == REAL for v in labels.values()) == 20
    assert sum(v == FAKE for v in labels.values()) == 80


def test_samples_valid(small):
    for s in small:
        assert s.clip.shape == (4, 32, 32, 1)
        assert s.clip.min() >= 0 and s.clip.max() <= 1
        assert (s.label == REAL) == (s.family == "none")
    assert small.families() == set(FAMILIES)


def test_sample_label_family_consistency():
    from afsl.data import Sample

    with pytest.raises(ValueError, match="inconsistent"):
        Sample(np.zeros((1, 8, 8, 1)), REAL, "v", "smoothing")


@pytest.mark.parametrize(
    "kw, field",
    [({"real_fraction": 1.0}, "real_fraction"), ({"families": []}, "families"), ({"families": ["warp"]}, "families"), ({"T": 0}, "T")],
)
def test_invalid_config_names_field(kw, field):
    with pytest.raises(DatasetConfigError, match=field):
        DatasetConfig(**kw)


def _pixel_stats(x):
    lap = np.abs(x[:, :, 1:-1, 1:-1] * 4 - x[:, :, :-2, 1:-1] - x[:, :, 2:, 1:-1] - x[:, :, 1:-1, :-2] - x[:, :, 1:-1, 2:])
    dt = np.abs(np.diff(x, axis=1))
    H, W = x.shape[2:4]
    checker = (-1.0) ** np.add.outer(np.arange(H), np.arange(W))
    checker_resp = np.abs((x[..., 0] * checker).mean((2, 3))).mean(1)
    flicker = x.mean((2, 3, 4)).std(1)
    return np.stack(
        [x.mean((1, 2, 3, 4)), x.std((1, 2, 3, 4)), lap.mean((1, 2, 3, 4)), dt.mean((1, 2, 3, 4)), checker_resp, flicker],
        axis=1,
    )


def test_linear_probe_on_pixel_statistics_beats_floor():
    ds = generate_dataset(DatasetConfig(num_videos=200, seed=11))
    train, test = split_by_video(ds, 0.3, seed=0)
    xtr, ytr, _ = train.arrays()
    xte, yte, _ = test.arrays()
    probe = make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000)).fit(_pixel_stats(xtr), ytr)
    assert roc_auc_score(yte, probe.decision_function(_pixel_stats(xte))) >= 0.7


def test_split_by_video_partitions(small):
    train, test = split_by_video(small, 0.3, seed=1)
    assert set(train.video_ids()).isdisjoint(test.video_ids())
    assert set(train.video_ids()) | set(test.video_ids()) == set(small.video_ids())


@pytest.mark.parametrize("family", FAMILIES)
def test_leave_one_family_out(small, family):
    train, test = split_leave_one_family_out(small, family, seed=2)
    assert train.families() == set(FAMILIES) - {family}
    assert test.families() == {family}
    assert set(train.video_ids()).isdisjoint(test.video_ids())
    assert set(train.video_ids()) | set(test.video_ids()) == set(small.video_ids())
    for fam in FAMILIES:
        total = sum(s.family == fam for s in small)
        assert sum(s.family == fam for s in train) + sum(s.family == fam for s in test) == total
    assert any(s.label == REAL for s in test) and any(s.label == REAL for s in train)


def test_leave_one_family_out_absent_family(small):
    only = small.filter(lambda s: s.family in ("none", "smoothing"))
    with pytest.raises(ValueError, match="not present"):
        split_leave_one_family_out(only, "color_shift")


def test_paired_batch_composition_and_determinism(small):
    b = make_paired_batch(small, 8, seed=5)
    assert len(b.real) == 4 and len(b.fake) == 4
    assert all(small.samples[i].label == REAL for i in b.indices[0])
    assert all(small.samples[i].label == FAKE for i in b.indices[1])
    again = make_paired_batch(small, 8, seed=5)
    np.testing.assert_array_equal(b.indices[1], again.indices[1])
    with pytest.raises(ValueError):
        make_paired_batch(small, 7)
    with pytest.raises(ClassExhaustedError):
        make_paired_batch(small, 1000)


def test_paired_batch_fake_selection_is_uniform(small):
    rng = np.random.default_rng(0)
    fakes = small.class_indices(FAKE)
    counts = dict.fromkeys(fakes.tolist(), 0)
    draws = 10_000
    for _ in range(draws):
        for i in make_paired_batch(small, 8, rng).indices[1]:
            counts[int(i)] += 1
    p = 4 / len(fakes)
    expected, sigma = draws * p, np.sqrt(draws * p * (1 - p))
    assert all(abs(c - expected) <= 3 * sigma for c in counts.values())


def test_dataset_roundtrip_and_refusal(small, tmp_path):
    h = save_dataset(small, tmp_path / "d")
    assert manifest_hash(tmp_path / "d") == h
    back = load_dataset(tmp_path / "d", verify=True)
    assert back.digest() == small.digest()
    with pytest.raises(DirectoryNotEmptyError):
        save_dataset(small, tmp_path / "d")
    assert save_dataset(small, tmp_path / "d", force=True) == h


# -- distortions ----------------------------------------------------------------


def test_severity_tables_strictly_increasing():
    assert len(DISTORTION_KINDS) == 7
    for kind, params in SEVERITY_TABLE.items():
        assert len(params) == 5
        assert all(b > a for a, b in zip(params, params[1:])), kind


@pytest.mark.parametrize("bad", [0, 6, -1, 2.5, True])
def test_severity_out_of_range(bad):
    with pytest.raises(DistortionError, match="severity"):
        DistortionSpec("gaussian_noise", bad)


def test_unknown_kind():
    with pytest.raises(DistortionError, match="unknown"):
        DistortionSpec("motion_blur", 1)
    with pytest.raises(DistortionError):
        DistortionSpec.parse("gaussian_noise@x")


@pytest.mark.parametrize("kind", DISTORTION_KINDS)
def test_distortion_range_and_determinism(small, kind):
    clip = small.samples[0].clip
    for sev in (1, 5):
        spec = DistortionSpec(kind, sev)
        out = apply_distortion(clip, spec, seed=3)
        assert out.shape == clip.shape and out.min() >= 0 and out.max() <= 1
        np.testing.assert_array_equal(out, apply_distortion(clip, spec, seed=3))


def test_noise_severity_increases_change(small):
    clip = small.samples[0].clip
    mse = [np.mean((apply_distortion(clip, DistortionSpec("gaussian_noise", s)) - clip) ** 2) for s in (1, 5)]
    assert mse[1] > mse[0]


def test_contrast_fixes_constant_clip():
    clip = np.full((2, 8, 8, 1), 0.3)
    for sev in range(1, 6):
        np.testing.assert_allclose(apply_distortion(clip, DistortionSpec("contrast", sev)), clip, atol=1e-15)


def test_distortion_batch_and_bad_shape(small):
    x, _, _ = small.arrays(range(3))
    assert apply_distortion(x, DistortionSpec("pixelation", 2)).shape == x.shape
    with pytest.raises(DistortionError, match="shape"):
        apply_distortion(np.zeros((8, 8)), DistortionSpec("pixelation", 2))
