import numpy as np
import pytest
import torch

from rangediff import ConditionPair, build_linear_schedule
from rangediff.toyworld import toy_vocabulary


@pytest.fixture(scope="session")
def small_schedule():
    return build_linear_schedule(T=20, beta_start=1e-3, beta_end=0.05)


@pytest.fixture(scope="session")
def toy_vocab():
    return toy_vocabulary()


@pytest.fixture()
def rng():
    return torch.Generator().manual_seed(0)


def make_rng(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def np_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def some_condition(vocab) -> ConditionPair:
    return ConditionPair(0, vocab.distance_token(4))
