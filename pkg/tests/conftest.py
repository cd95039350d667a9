import numpy as np
import pytest

from sparselab.data import DataBundle, Dataset
from sparselab.layers import Conv2d, Flatten, Linear, MaxPool2d, ReLU
from sparselab.zoo import ArchitectureSpec


def tiny_conv_arch() -> ArchitectureSpec:
    """Small conv net: every layer kind, cheap enough for gradient probing."""
    spec = ArchitectureSpec(
        name="tinyconv",
        input_shape=(2, 9, 9),
        layers=(
            Conv2d(2, 4, 3, 3),
            ReLU(),
            MaxPool2d(2, 2),
            Conv2d(4, 5, 2, 2),
            ReLU(),
            Flatten(),
            Linear(5 * 2 * 2, 12),
            ReLU(),
            Linear(12, 10),
        ),
    )
    spec.validate()
    return spec


def tiny_fc_arch(sizes=(6, 8, 10)) -> ArchitectureSpec:
    layers = []
    for a, b in zip(sizes, sizes[1:]):
        layers.extend([Linear(a, b), ReLU()])
    layers.pop()  # no activation after logits
    spec = ArchitectureSpec(name="tinyfc", input_shape=(sizes[0],), layers=tuple(layers))
    spec.validate()
    return spec


def synth_bundle(n_train=200, n_test=64, shape=(1, 28, 28), seed=0) -> DataBundle:
    rng = np.random.default_rng(seed)
    def split(n, tag):
        return Dataset(
            images=rng.random((n, *shape), dtype=np.float32),
            labels=rng.integers(0, 10, n).astype(np.int64),
            split=tag,
        )
    return DataBundle(train=split(n_train, "train"), test=split(n_test, "test"))


@pytest.fixture
def conv_arch():
    return tiny_conv_arch()


@pytest.fixture
def fc_arch():
    return tiny_fc_arch()


@pytest.fixture
def bundle():
    return synth_bundle()
