import pytest

from backparse.config import RunConfig
from backparse.data import build_vocabs, prepare_all
from backparse.synth import SyntheticSpec, generate_corpus
from backparse.tensor import make_rng

TINY_MODEL = {
    "model.layers": 2,
    "model.d": 16,
    "model.heads": 2,
    "model.d_r": 8,
    "model.ffn_size": 32,
    "model.d_biaffine": 8,
}


def tiny_config(**overrides) -> RunConfig:
    return RunConfig().replace(**{**TINY_MODEL, **overrides})


@pytest.fixture(scope="session")
def corpus():
    spec = SyntheticSpec(min_nodes=2, max_nodes=6, n_concepts=12, n_labels=4, n_train=40, n_dev=10, n_test=10, seed=7)
    return generate_corpus(spec)


@pytest.fixture(scope="session")
def vocabs(corpus):
    return build_vocabs(corpus["train"] + corpus["dev"] + corpus["test"])


@pytest.fixture(scope="session")
def prepared(corpus, vocabs):
    return prepare_all(corpus["train"], vocabs)


@pytest.fixture
def rng():
    return make_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from harness import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
