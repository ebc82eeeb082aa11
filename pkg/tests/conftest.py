import numpy as np
import pytest

from regprune.register import RegisterNeuronSet, identify_register_neurons
from regprune.synth import CorpusConfig, generate_corpus


@pytest.fixture(scope="session")
def small_corpus_cfg():
    return CorpusConfig(
        count=12,
        seed=99,
        sink_channels=(3,),
        sinks_per_sample=(2, 4),
        sink_magnitude=(7.0, 10.0),
        n_informative=(6, 30),
        template=dict(n_patches=64, n_channels=24, hidden_dim=8, n_text=6, layers=(5, 11)),
    )


@pytest.fixture(scope="session")
def small_corpus(small_corpus_cfg):
    return generate_corpus(small_corpus_cfg)


@pytest.fixture(scope="session")
def small_neurons(small_corpus):
    return identify_register_neurons([b.activations for b in small_corpus], 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def no_neurons():
    return RegisterNeuronSet.empty()
