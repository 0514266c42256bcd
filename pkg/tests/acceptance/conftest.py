from pytest import fixture
from training import fit

from bnrectify.core.dataset import synthesize


TRAIN_COUNT = 5000
TEST_COUNT = 1000


@fixture(scope="session")
def train_set():
    return synthesize(TRAIN_COUNT, seed=0)


@fixture(scope="session")
def test_set():
    return synthesize(TEST_COUNT, seed=0, stream_offset=TRAIN_COUNT + 1)


@fixture(scope="session")
def trained(train_set):
    """tiny-cnn-bn trained on clean images."""
    return fit("tiny-cnn-bn", train_set)
