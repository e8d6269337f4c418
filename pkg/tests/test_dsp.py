import numpy as np
import pytest
from scipy import signal

from cogload import dsp
from cogload.sigio import EpochSet, Recording

RATE = 256.0

# Noise-equivalent passband fraction of the zero-phase filter, i.e. the
# integral of |H(f)|^4 over [0, Nyquist] divided by Nyquist, from sosfreqz
# on 2**16 points. Frozen from the oracle below.
WHITE_NOISE_GOLDEN = {"delta": 0.0130163, "theta": 0.0130163, "alpha": 0.0390489,
                      "beta": 0.0715924, "gamma": 0.0911235}


def _tone(f, seconds=10.0, amp=1.0, rate=RATE):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * f * t)


def _central(y, frac=0.8):
    n = y.shape[-1]
    cut = int(n * (1 - frac) / 2)
    return y[..., cut:n - cut]


def test_theta_passband_identity():
    y = _central(dsp.filter_array(_tone(5.0), 4.0, 6.0, RATE))
    amp = np.sqrt(2 * np.mean(y ** 2))
    assert abs(amp - 1.0) < 0.02
    assert np.max(np.abs(y)) < 1.02


def test_theta_stopband():
    y = _central(dsp.filter_array(_tone(20.0), 4.0, 6.0, RATE))
    assert np.max(np.abs(y)) < 0.05


@pytest.mark.parametrize("band", dsp.BANDS, ids=lambda b: b.name)
def test_white_noise_oracle_matches_golden(band):
    sos = dsp.design_sos(band.low_hz, band.high_hz, RATE)
    f, h = signal.sosfreqz(sos, worN=2 ** 16, fs=RATE)
    oracle = np.trapezoid(np.abs(h) ** 4, f) / (RATE / 2)
    assert oracle == pytest.approx(WHITE_NOISE_GOLDEN[band.name], rel=1e-5)


@pytest.mark.parametrize("band", dsp.BANDS, ids=lambda b: b.name)
def test_white_noise_variance_ratio(band):
    x = np.random.default_rng(5).standard_normal(int(100 * RATE))
    y = dsp.filter_array(x, band.low_hz, band.high_hz, RATE)
    ratio = y.var() / x.var()
    assert ratio == pytest.approx(WHITE_NOISE_GOLDEN[band.name], rel=0.15)


def test_zero_phase():
    # a passband tone comes out without a time shift
    x = _tone(10.0)
    y = dsp.filter_array(x, 7.0, 13.0, RATE)
    xc = signal.correlate(_central(y), _central(x), mode="full")
    lag = np.argmax(xc) - (_central(x).size - 1)
    assert lag == 0


def test_bandpass_types_and_errors():
    rec = Recording(RATE, ["a", "b"], ["EEG", "EEG"], np.vstack([_tone(5.0), _tone(20.0)]))
    out = dsp.bandpass(rec, dsp.THETA)
    assert isinstance(out, Recording) and out.samples.shape == rec.samples.shape
    ep = EpochSet(np.stack([rec.samples[:, :512]] * 3), 2.0, RATE, ["a", "b"], ["EEG", "EEG"])
    assert dsp.bandpass(ep, dsp.THETA).data.shape == (3, 2, 512)
    with pytest.raises(ValueError, match="Nyquist"):
        dsp.bandpass(Recording(60.0, ["a"], ["EEG"], np.zeros((1, 600))), dsp.GAMMA)
    with pytest.raises(ValueError):
        dsp.BandDef("bad", 5.0, 4.0)
    with pytest.raises(ValueError):
        dsp.FilterSpec(order=3)


def test_multichannel_matches_single():
    x = np.random.default_rng(1).standard_normal((4, 1024))
    y = dsp.filter_array(x, 7.0, 13.0, RATE)
    for i in range(4):
        np.testing.assert_allclose(y[i], dsp.filter_array(x[i], 7.0, 13.0, RATE), atol=1e-12)


def test_band_power_identities():
    x = _tone(3.0, seconds=2.0, amp=1.7)  # integer number of periods
    assert dsp.band_power(x) == pytest.approx(1.7 ** 2 / 2, abs=1e-9)
    assert dsp.band_power(np.zeros(100)) == 0.0
    assert dsp.band_power(np.full(100, -3.0)) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        dsp.band_power(np.zeros(0))


def test_band_power_between():
    amp = 2.0
    x = _tone(1.0, seconds=10.0, amp=amp, rate=32.0)
    assert dsp.band_power_between(x, 0.5, 2.0, 32.0) == pytest.approx(amp ** 2 / 2, rel=0.05)
    # 10 s at a 0.1 Hz lower edge passes under the one-cycle rule
    assert dsp.band_power_between(x, 0.1, 0.5, 32.0) < 0.05 * amp ** 2 / 2
    with pytest.raises(ValueError, match="too short"):
        dsp.band_power_between(x[:int(9 * 32)], 0.1, 0.5, 32.0)


def test_min_window_rule():
    assert dsp.min_window_seconds(4.0) == 0.5
    assert dsp.min_window_seconds(0.1, 10.0) == pytest.approx(10.0)
    assert dsp.min_window_seconds(0.1, 5.0) == pytest.approx(20.0)
