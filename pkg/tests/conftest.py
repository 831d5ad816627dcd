import numpy as np
import pytest

from improvnet.corpus import SynthConfig, build_windows, fit_scaler, split_contiguous, synth_corpus
from improvnet.model import TrainConfig, make_cnn_rnn_spec, make_cnn_spec, train


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(SynthConfig(n_pieces=3, events_per_piece=200), seed=11, name="small")


@pytest.fixture(scope="session")
def small_data(small_corpus):
    tr, va = split_contiguous(small_corpus, 0.2, lags=10)
    scaler = fit_scaler(tr)
    return build_windows(tr).scale(scaler), build_windows(va).scale(scaler), scaler


@pytest.fixture(scope="session")
def tiny_cnn(small_data):
    dtr, dva, scaler = small_data
    return train(make_cnn_spec(), dtr, dva, TrainConfig(epochs=3, patience=1, seed=5), scaler)


@pytest.fixture(scope="session")
def tiny_rnn(small_data):
    dtr, dva, scaler = small_data
    return train(make_cnn_rnn_spec(), dtr, dva, TrainConfig(epochs=2, patience=1, seed=5), scaler)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
