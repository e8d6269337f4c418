import json

import numpy as np
import pytest

from cogload import model, sigio, synth
from cogload.features import FeatureMatrix
from cogload.model import ModelError, PipelineConfig


def _fm(x, y):
    return FeatureMatrix(x, tuple(f"f{i}" for i in range(x.shape[1])), labels=y)


def _two_class(rng, n=200, d=2, sep=1.0):
    y = np.repeat([0, 1], n // 2)
    a = rng.standard_normal((d, d)) + 2 * np.eye(d)
    x = rng.standard_normal((n, d)) @ a + sep * y[:, None] * np.arange(1, d + 1)
    return x, y


def test_gamma_zero_matches_closed_form(rng):
    x, y = _two_class(rng)
    m = model.slda_train(_fm(x, y), gamma=0.0)
    # raw-space oracle: pooled within-class covariance, divided by n, inverted directly
    m0, m1 = x[y == 0].mean(0), x[y == 1].mean(0)
    r = x - np.where(y[:, None] == 1, m1, m0)
    sw = r.T @ r / len(y)
    w_raw = np.linalg.inv(sw) @ (m1 - m0)
    np.testing.assert_allclose(m.weights / m.std, w_raw, rtol=1e-10, atol=1e-10)
    # midpoint scores zero, class means land on the right side
    mid = (m0 + m1) / 2
    assert abs(model.slda_score(m, mid)) < 1e-10
    assert model.slda_score(m, m1) > 0 > model.slda_score(m, m0)


def test_ledoit_wolf_matches_sklearn(rng):
    covariance = pytest.importorskip("sklearn.covariance")
    x, y = _two_class(rng, n=120, d=8, sep=0.5)
    m = model.slda_train(_fm(x, y))
    z = (x - x.mean(0)) / x.std(0)
    zc = z - np.where(y[:, None] == 1, z[y == 1].mean(0), z[y == 0].mean(0))
    ref = covariance.ledoit_wolf_shrinkage(zc, assume_centered=True)
    assert m.gamma == pytest.approx(ref, rel=1e-10)
    assert 0.0 <= m.gamma <= 1.0


def test_separable_1d(rng):
    y = np.repeat([0, 1], 50)
    x = (2.0 * y - 1.0)[:, None] + 1e-3 * rng.standard_normal((100, 1))
    m = model.slda_train(_fm(x, y))
    assert np.all((model.slda_score(m, x) > 0) == (y == 1))


def test_identical_distributions_near_chance(rng):
    y = np.repeat([0, 1], 200)
    x = rng.standard_normal((400, 3))
    m = model.slda_train(_fm(x, y))
    acc = np.mean((model.slda_score(m, x) > 0) == (y == 1))
    assert abs(acc - 0.5) < 3 * 0.5 / np.sqrt(400) + 0.05


def test_batch_equals_rows(rng):
    x, y = _two_class(rng, d=4)
    m = model.slda_train(_fm(x, y))
    batch = model.slda_score(m, x)
    np.testing.assert_array_equal(batch, [model.slda_score(m, row) for row in x])


def test_affine_rescaling_invariance(rng):
    x, y = _two_class(rng, d=5)
    a, b = rng.uniform(0.1, 10, 5), rng.standard_normal(5)
    p1 = model.slda_score(model.slda_train(_fm(x, y)), x) > 0
    p2 = model.slda_score(model.slda_train(_fm(x * a + b, y)), x * a + b) > 0
    np.testing.assert_array_equal(p1, p2)


def test_full_shrinkage_direction(rng):
    x, y = _two_class(rng, d=6)
    m = model.slda_train(_fm(x, y), gamma=1.0)
    z = (x - m.mean) / m.std
    diff = z[y == 1].mean(0) - z[y == 0].mean(0)
    cos = m.weights @ diff / np.linalg.norm(m.weights) / np.linalg.norm(diff)
    assert cos == pytest.approx(1.0, abs=1e-6)


def test_zero_variance_feature_dropped(rng):
    x, y = _two_class(rng, d=3)
    x[:, 1] = 7.0
    m = model.slda_train(_fm(x, y))
    assert m.dropped == [1]
    assert np.isfinite(model.slda_score(m, x)).all()


def test_slda_errors(rng):
    with pytest.raises(ModelError):
        model.slda_train(_fm(rng.standard_normal((4, 2)), np.array([0, 1, 1, 1])))
    with pytest.raises(ModelError):
        model.slda_train(FeatureMatrix(np.zeros((4, 1)), ("a",)))


@pytest.mark.parametrize("raw, expect", [([-3, 0, 1], [-1, 0.5, 1]), ([2, 2, 2], [0, 0, 0]),
                                         ([-4, 0, 4], [-1, 0, 1])])
def test_normalize_index(raw, expect):
    np.testing.assert_allclose(model.normalize_index(raw), expect, atol=1e-15)


def test_normalize_index_order_and_errors(rng):
    r = rng.standard_normal(50)
    n = model.normalize_index(r)
    np.testing.assert_array_equal(np.argsort(r), np.argsort(n))
    p = model.normalize_index(np.r_[r, 100.0], "percentile")
    assert p.min() == -1 and p.max() == 1
    with pytest.raises(ModelError):
        model.normalize_index([])
    ref = model.normalize_index([0.0, 1.0], reference=[-1.0, 1.0])
    np.testing.assert_allclose(ref, [0.0, 1.0])


def test_pipeline_config_validation():
    with pytest.raises(ModelError):
        PipelineConfig(band_set="low7")
    with pytest.raises(ModelError):
        PipelineConfig(regularization="ridge")
    with pytest.raises(ModelError):
        PipelineConfig(modalities=("EMG",))
    with pytest.raises(ValueError):
        PipelineConfig(filter_order=5)


@pytest.fixture(scope="module")
def trained(calib_epochs):
    return model.train_workload(calib_epochs, PipelineConfig(), seed=11)


def test_train_workload(trained):
    assert trained.lda.n_input == 30
    assert len(trained.csp) == 5
    assert trained.provenance["n_per_class"] == [180, 180]
    assert trained.provenance["seed"] == 11
    with pytest.raises(ModelError):
        model.train_workload(sigio.EpochSet(np.zeros((0, 2, 512)), 2.0, 256.0,
                                            ["a", "b"], ["EEG", "EEG"], labels=[]))


def test_invariant_requires_use_data(calib_epochs):
    with pytest.raises(ModelError, match="use-context"):
        model.train_workload(calib_epochs, PipelineConfig(regularization="invariant"))


def test_serialization_roundtrip(trained, tmp_path, calib_epochs):
    p = tmp_path / "m.json"
    model.save_classifier(trained, p)
    back = model.load_classifier(p)
    ep = calib_epochs.subset(trials=np.arange(0, 360, 17))
    np.testing.assert_array_equal(back.score_epochs(ep), trained.score_epochs(ep))
    model.save_classifier(back, tmp_path / "m2.json")
    assert (tmp_path / "m2.json").read_bytes() == p.read_bytes()
    doc = json.loads(p.read_text())
    assert doc["format"] == model.MODEL_MAGIC
    doc["body"]["lda"]["bias"] += 1.0
    with pytest.raises(ModelError, match="checksum"):
        model.classifier_from_dict(doc)


def test_estimate_series(trained, use_session):
    rec = use_session.recording
    s1 = model.estimate_series(trained, rec)
    s2 = model.estimate_series(trained, rec)
    assert len(s1) == int((rec.duration_s - 2.0) / 1.0) + 1
    np.testing.assert_array_equal(s1.raw, s2.raw)
    assert s1.index.min() == -1.0 and s1.index.max() == 1.0
    assert s1.to_csv().splitlines()[0] == "t_start_s,raw_score,workload_index"
    short = sigio.Recording(rec.rate_hz, rec.channel_labels, rec.modalities, rec.samples[:, :256])
    with pytest.raises(ValueError):
        model.estimate_series(trained, short)


def test_high_workload_session_positive(calib_epochs):
    cfg = PipelineConfig(normalization_scope="session+calibration")
    clf = model.train_workload(calib_epochs, cfg)
    high = synth.gen_use_session(synth.SynthConfig(seed=5, task_loads=(1.0, 1.0)))
    assert model.estimate_series(clf, high.recording).index.mean() > 0
    low = synth.gen_use_session(synth.SynthConfig(seed=5, task_loads=(0.0, 0.0)))
    assert model.estimate_series(clf, low.recording).index.mean() < 0


def test_incompatible_montage(trained, use_session):
    rec = use_session.recording
    labels = list(rec.channel_labels)
    labels[0] = "XX"
    bad = sigio.Recording(rec.rate_hz, labels, rec.modalities, rec.samples)
    with pytest.raises(ModelError, match="montage"):
        model.estimate_series(trained, bad)
