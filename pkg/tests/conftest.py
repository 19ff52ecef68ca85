"""Session fixtures: the seeded benchmark corpus and one full training run.

Everything expensive (generation, distillation, prediction dumps) happens
once per session; tests treat the results as read-only.
"""

import numpy as np
import pytest

from ragfuse import synth
from ragfuse.distill import TrainerConfig, train_sequential
from ragfuse.fusion import predict_all
from ragfuse.index import RetrieverHeads
from ragfuse.reader import SimulatedReader, SimulatedReaderParams


@pytest.fixture(scope="session")
def fixture_spec():
    return synth.SynthSpec(seed=7)


@pytest.fixture(scope="session")
def corpus(fixture_spec):
    """(index, queries, tags) for the shipped benchmark."""
    return synth.generate(fixture_spec)


@pytest.fixture(scope="session")
def reader_params():
    return SimulatedReaderParams(
        informativeness=0.95,
        confusion=SimulatedReaderParams.default_confusion(4),
        seed=7,
    )


@pytest.fixture(scope="session")
def reader(reader_params):
    return SimulatedReader(reader_params)


@pytest.fixture(scope="session")
def trainer_config():
    return TrainerConfig(
        temperature=0.1,
        candidates_per_query=8,
        learning_rate=1.0,
        epochs=100,
        seed=7,
    )


@pytest.fixture(scope="session")
def identity_heads(fixture_spec):
    return RetrieverHeads.identity(fixture_spec.dim)


@pytest.fixture(scope="session")
def trained(corpus, reader, trainer_config):
    """(heads, history) from one sequential training run on the fixture."""
    index, queries, _ = corpus
    return train_sequential(index, queries, reader, trainer_config)


@pytest.fixture(scope="session")
def prediction_sets(corpus, reader, identity_heads, trained):
    """Prediction dumps for every mode, identity and trained heads."""
    index, queries, _ = corpus
    heads, _ = trained
    out = {}
    for name, hs in (("identity", identity_heads), ("trained", heads)):
        out[name] = {
            mode: predict_all(queries, index, hs, reader, k=4, mode=mode, seed=7)
            for mode in ("fused", "top1", "max_confidence", "mean_confidence",
                         "random_retrieval", "no_retrieval", "no_query_image")
        }
    return out


@pytest.fixture(scope="session")
def injected(corpus, reader, trainer_config, identity_heads):
    """Rate-0.5 inconsistency injection plus before/after training runs."""
    index, queries, _ = corpus
    inj_index = synth.inject_inconsistency(index, queries, 0.5, k=4)
    before = predict_all(queries, inj_index, identity_heads, reader, k=4, mode="fused")
    heads, _ = train_sequential(inj_index, queries, reader, trainer_config)
    after = predict_all(queries, inj_index, heads, reader, k=4, mode="fused")
    return inj_index, before, after


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
