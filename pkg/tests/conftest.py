import numpy as np
import pytest
import torch

from edgeoutpaint.data import make_sample
from edgeoutpaint.networks import ModelBundle, NetworkConfig
from edgeoutpaint.synthetic import landscape, write_corpus

torch.set_num_threads(1)

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_net():
    return NetworkConfig(generator_channels=8, residual_blocks=1, discriminator_channels=8,
                         embedder_channels=(8, 16), embedder_input=32)


@pytest.fixture
def small_bundle(small_net):
    return ModelBundle.create(small_net, seed=0)


@pytest.fixture(scope="session")
def tiny_samples():
    return [make_sample(f"s{i}", landscape(i, 32), 0.25) for i in range(4)]


@pytest.fixture
def corpus_dir(tmp_path):
    write_corpus(tmp_path / "corpus", count=10, side=48)
    return tmp_path / "corpus"
