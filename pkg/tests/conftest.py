"""Shared fixtures: OFDM grids, delay dictionaries and Doppler parameters.

Dictionaries front-load an eigendecomposition of the solver Gram matrix, so
the expensive ones are session scoped and shared read-only across tests.
"""

import numpy as np
import pytest

from dopsense import (
    DelayDictionary,
    DopplerParams,
    OfdmConfig,
    default_used_subchannels,
)


def thinned_ofdm(step, **kwargs):
    """Standard 802.11ac grid keeping every step-th used sub-channel."""
    used = default_used_subchannels()[::step]
    return OfdmConfig(used_subchannels=used, **kwargs)


@pytest.fixture(scope="session")
def ofdm_full():
    """The default grid: 242 used sub-channels on K=256."""
    return OfdmConfig()


@pytest.fixture(scope="session")
def ofdm_step4():
    """Grid thinned 4x (61 used sub-channels); alias-free for the default atoms."""
    return thinned_ofdm(4)


@pytest.fixture(scope="session")
def dict_full(ofdm_full):
    dictionary = DelayDictionary(ofdm_full)
    dictionary.workspace(ofdm_full.used_subchannels)
    return dictionary


@pytest.fixture(scope="session")
def dict_step4(ofdm_step4):
    dictionary = DelayDictionary(ofdm_step4)
    dictionary.workspace(ofdm_step4.used_subchannels)
    return dictionary


@pytest.fixture(scope="session")
def doppler_defaults():
    return DopplerParams()


@pytest.fixture
def tiny_params():
    """Small Doppler geometry for shape and streaming tests."""
    return DopplerParams(window_size=8, n_bins=16, trace_length=5, threshold_db=12.0)


def random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def complex_of():
    return random_complex


def assert_relative_close(actual, expected, tol, what="values"):
    actual = np.asarray(actual)
    expected = np.asarray(expected)
    scale = np.max(np.abs(expected))
    assert scale > 0, f"degenerate reference for {what}"
    worst = np.max(np.abs(actual - expected)) / scale
    assert worst < tol, f"{what}: relative error {worst:.3e} >= {tol:g}"
