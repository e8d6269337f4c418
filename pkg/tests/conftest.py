import numpy as np
import pytest

from cogload import sigio, synth


@pytest.fixture(scope="session")
def calib_session():
    return synth.gen_calibration(synth.SynthConfig(seed=11))


@pytest.fixture(scope="session")
def calib_epochs(calib_session):
    return sigio.calibration_epochs(calib_session.recording, calib_session.events, 2.0)


@pytest.fixture(scope="session")
def use_session():
    return synth.gen_use_session(synth.SynthConfig(seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.exp(rng.uniform(0, np.log(cond), n))
    return (q * ev) @ q.T
