import numpy as np
import pytest

from cogload import dsp, features, spatial, synth
from cogload.dsp import BAND_SETS
from cogload.features import FeatureError, FeatureMatrix, RRSeries
from cogload.model import PipelineConfig, build_cache, features_from_cache

RATE = 256.0


def _models(epochs, band_set):
    out = []
    for band in BAND_SETS[band_set]:
        f = dsp.bandpass(epochs, band)
        c1 = spatial.class_covariance(f, 1)
        c0 = spatial.class_covariance(f, 0)
        out.append(spatial.csp_train(c1, c0, 6, band))
    return out


@pytest.fixture(scope="module")
def small(calib_epochs):
    idx = np.r_[0:20, 60:80]
    return calib_epochs.pick("EEG").subset(trials=idx)


@pytest.mark.parametrize("band_set, width", [("all5", 30), ("low3", 18)])
def test_eeg_widths(small, band_set, width):
    fm = features.eeg_features(small, _models(small, band_set), band_set)
    assert fm.width == width
    assert fm.names[0] == "EEG:delta:csp0"
    assert fm.labels.tolist() == small.labels.tolist()


def test_identical_epochs_identical_rows(small):
    ep = small.subset(trials=[0, 0, 3])
    fm = features.eeg_features(ep, _models(small, "low3"), "low3")
    np.testing.assert_array_equal(fm.values[0], fm.values[1])


def test_moment_path_equals_literal_path(small):
    cfg = PipelineConfig(band_set="all5")
    models = _models(small, "all5")
    literal = features.eeg_features(small, models, "all5").values
    fast = features_from_cache(build_cache(small, cfg, need_covs=False), models, cfg)
    np.testing.assert_allclose(fast, literal, rtol=1e-9, atol=1e-12)


def test_model_band_mismatch(small):
    models = _models(small, "low3")
    with pytest.raises(FeatureError):
        features.eeg_features(small, models[::-1], "low3")
    with pytest.raises(FeatureError):
        features.eeg_features(small, models, "all5")


@pytest.mark.parametrize("rr_s", [1.0, 0.5])
def test_r_peaks_against_generator(rr_s):
    cfg = synth.SynthConfig(ecg_rr=(rr_s, rr_s), ecg_jitter=(0.0, 0.0))
    ecg, truth = synth.ecg_trace(cfg, 10.0, seed=4)
    rr = features.detect_r_peaks(ecg, RATE)
    assert abs(rr.r_peak_times.size - truth.size) <= 1
    assert abs(rr.r_peak_times.size - 10.0 / rr_s) <= 1
    np.testing.assert_allclose(rr.rr_intervals, rr_s, atol=0.02)


def test_r_peak_sensitivity_default_noise():
    cfg = synth.SynthConfig()
    ecg, truth = synth.ecg_trace(cfg, 120.0, load=0.5, seed=9)
    found = features.detect_r_peaks(ecg, RATE).r_peak_times
    hit = np.min(np.abs(truth[:, None] - found[None, :]), axis=1) < 0.05
    assert hit.mean() >= 0.95


def test_flat_ecg_has_no_beats():
    with pytest.raises(FeatureError, match="insufficient beats"):
        features.detect_r_peaks(np.zeros(int(10 * RATE)), RATE)


def test_ecg_identities():
    const = features.ecg_features(RRSeries.from_intervals(np.ones(12)), 10.0)
    assert const.values[0] == 60.0
    assert const.values[2] == 0.0
    alt = features.ecg_features(RRSeries.from_intervals([0.9, 1.1] * 6), 10.0)
    assert alt.values[2] == pytest.approx(200.0, abs=1e-9)
    assert alt.names == features.ECG_NAMES


def test_hrv_lf_modulation():
    def series(depth):
        t, rr = 0.0, []
        while t < 120.0:
            r = 1.0 + depth * np.sin(2 * np.pi * 0.05 * t)
            rr.append(r)
            t += r
        return RRSeries.from_intervals(rr)

    flat = features.ecg_features(series(0.0), 120.0).values[1]
    mod = features.ecg_features(series(0.08), 120.0).values[1]
    assert mod > 10 * flat
    assert flat < 1e-20


def test_ecg_window_rules():
    with pytest.raises(FeatureError):
        features.ecg_features(RRSeries.from_intervals([1.0, 1.0]), 10.0)
    with pytest.raises(FeatureError):
        features.ecg_features(RRSeries.from_intervals(np.ones(5)), 5.0)


def _sine(f, amp, seconds=10.0):
    t = np.arange(int(seconds * RATE)) / RATE
    return amp * np.sin(2 * np.pi * f * t)


def test_gsr_constant():
    v = features.gsr_features(np.full(int(10 * RATE), 4.2), RATE).values
    assert v[0] == pytest.approx(4.2)
    assert v[1] < 1e-20 and v[2] < 1e-20


def test_gsr_band_placement():
    a = 0.7
    scr = features.gsr_features(_sine(1.0, a), RATE).values
    assert scr[1] == pytest.approx(a * a / 2, rel=0.05)
    assert scr[2] < 0.05 * a * a / 2
    scl = features.gsr_features(_sine(0.3, a), RATE).values
    assert scl[2] == pytest.approx(a * a / 2, rel=0.10)
    assert scl[1] < 0.05 * a * a / 2
    with pytest.raises(FeatureError):
        features.gsr_features(_sine(1.0, a, seconds=9.0), RATE)


def test_physio_widths(calib_session):
    from cogload import sigio
    ep = sigio.calibration_epochs(calib_session.recording, calib_session.events, 10.0)
    ep = ep.subset(trials=np.arange(6))
    ecg = features.physio_features(ep, "ECG")
    gsr = features.physio_features(ep, "GSR")
    assert (ecg.width, gsr.width) == (3, 3)
    eeg = FeatureMatrix(np.zeros((6, 30)), features.eeg_feature_names(BAND_SETS["all5"], 6),
                        ep.labels, ep.t_start_s)
    fused = features.fuse([eeg, ecg, gsr])
    assert fused.width == 36
    assert np.all(fused.values[:, 30] > 40) and np.all(fused.values[:, 30] < 120)  # bpm


def test_fuse_rules():
    a = FeatureMatrix(np.ones((3, 2)), ("a", "b"), t_start_s=[0, 1, 2])
    one = features.fuse([a])
    np.testing.assert_array_equal(one.values, a.values)
    assert one.names == a.names
    with pytest.raises(FeatureError, match="row counts"):
        features.fuse([a, FeatureMatrix(np.ones((2, 1)), ("c",), t_start_s=[0, 1])])
    with pytest.raises(FeatureError, match="duplicate"):
        features.fuse([a, a])
    with pytest.raises(FeatureError, match="aligned"):
        features.fuse([a, FeatureMatrix(np.ones((3, 1)), ("c",), t_start_s=[0, 1, 3])])


def test_feature_csv():
    fm = FeatureMatrix([[1.5, 2.0]], ("x", "y"), labels=[1], t_start_s=[0.0])
    assert fm.to_csv() == "t_start_s,x,y,label\n0.0,1.5,2.0,1\n"
