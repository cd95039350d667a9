"""Declarative architecture catalog and the JSON config format.

The LeNet here is the pinned reference model: two 3x3 conv layers
(1->6, 6->16) with 2x2 pooling, then a 400-120-84-10 classifier head,
60,074 parameters in total. AlexNet and VGG-11 builders are included so
larger configs stay expressible through the same LayerSpec vocabulary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Tuple

from .errors import ConfigError
from .layers import (
    Conv2d,
    Flatten,
    LayerSpec,
    Linear,
    MaxPool2d,
    ReLU,
    Tanh,
    infer_shapes,
)

_KIND_FIELDS = {
    "conv2d": ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride", "padding"),
    "maxpool2d": ("window", "stride"),
    "linear": ("in_features", "out_features"),
    "relu": (),
    "tanh": (),
    "flatten": (),
}

_KIND_TYPES = {
    "conv2d": Conv2d,
    "maxpool2d": MaxPool2d,
    "linear": Linear,
    "relu": ReLU,
    "tanh": Tanh,
    "flatten": Flatten,
}


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_shape: Tuple[int, ...]
    layers: Tuple[LayerSpec, ...]

    @property
    def prunable_layers(self) -> Tuple[int, ...]:
        """Indices of layers that carry prunable weights (conv2d, linear)."""
        return tuple(i for i, l in enumerate(self.layers) if l.kind in ("conv2d", "linear"))

    def validate(self) -> None:
        infer_shapes(self.layers, self.input_shape)

    def parameter_count(self) -> int:
        total = 0
        for layer in self.layers:
            if layer.kind == "conv2d":
                total += layer.out_channels * layer.fan_in + layer.out_channels
            elif layer.kind == "linear":
                total += layer.out_features * layer.in_features + layer.out_features
        return total


def lenet() -> ArchitectureSpec:
    """The paper-pinned LeNet for 28x28 single-channel inputs."""
    spec = ArchitectureSpec(
        name="lenet",
        input_shape=(1, 28, 28),
        layers=(
            Conv2d(1, 6, 3, 3),
            ReLU(),
            MaxPool2d(2, 2),
            Conv2d(6, 16, 3, 3),
            ReLU(),
            MaxPool2d(2, 2),
            Flatten(),
            Linear(400, 120),
            ReLU(),
            Linear(120, 84),
            ReLU(),
            Linear(84, 10),
        ),
    )
    spec.validate()
    return spec


def alexnet(num_classes: int = 1000, in_channels: int = 3) -> ArchitectureSpec:
    spec = ArchitectureSpec(
        name="alexnet",
        input_shape=(in_channels, 224, 224),
        layers=(
            Conv2d(in_channels, 64, 11, 11, stride=4, padding=2),
            ReLU(),
            MaxPool2d(3, 2),
            Conv2d(64, 192, 5, 5, padding=2),
            ReLU(),
            MaxPool2d(3, 2),
            Conv2d(192, 384, 3, 3, padding=1),
            ReLU(),
            Conv2d(384, 256, 3, 3, padding=1),
            ReLU(),
            Conv2d(256, 256, 3, 3, padding=1),
            ReLU(),
            MaxPool2d(3, 2),
            Flatten(),
            Linear(256 * 6 * 6, 4096),
            ReLU(),
            Linear(4096, 4096),
            ReLU(),
            Linear(4096, num_classes),
        ),
    )
    spec.validate()
    return spec


def vgg11(num_classes: int = 1000, in_channels: int = 3) -> ArchitectureSpec:
    layers = []
    chans = in_channels
    for item in (64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"):
        if item == "M":
            layers.append(MaxPool2d(2, 2))
        else:
            layers.extend([Conv2d(chans, item, 3, 3, padding=1), ReLU()])
            chans = item
    layers.extend(
        [
            Flatten(),
            Linear(512 * 7 * 7, 4096),
            ReLU(),
            Linear(4096, 4096),
            ReLU(),
            Linear(4096, num_classes),
        ]
    )
    spec = ArchitectureSpec(name="vgg11", input_shape=(in_channels, 224, 224), layers=tuple(layers))
    spec.validate()
    return spec


BUILDERS = {"lenet": lenet, "alexnet": alexnet, "vgg11": vgg11}


def serialize_architecture(spec: ArchitectureSpec) -> str:
    layers = []
    for layer in spec.layers:
        entry = {"kind": layer.kind}
        for field in _KIND_FIELDS[layer.kind]:
            entry[field] = getattr(layer, field)
        layers.append(entry)
    doc = {"name": spec.name, "input_shape": list(spec.input_shape), "layers": layers}
    return json.dumps(doc, indent=2)


def parse_architecture(config_text: str) -> ArchitectureSpec:
    """Parse a JSON architecture document and validate its shape chain."""
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"architecture config is not valid JSON: {e}") from e
    for key in ("name", "input_shape", "layers"):
        if key not in doc:
            raise ConfigError(f"architecture config missing {key!r}")
    layers = []
    for i, entry in enumerate(doc["layers"]):
        kind = entry.get("kind")
        if kind not in _KIND_TYPES:
            raise ConfigError(f"layer {i}: unknown kind {kind!r}")
        kwargs = {}
        for field in _KIND_FIELDS[kind]:
            if field in entry:
                kwargs[field] = int(entry[field])
            elif field in ("stride", "padding") and kind == "conv2d":
                pass  # optional, dataclass default applies
            else:
                raise ConfigError(f"layer {i} ({kind}): missing field {field!r}")
        layers.append(_KIND_TYPES[kind](**kwargs))
    spec = ArchitectureSpec(
        name=str(doc["name"]),
        input_shape=tuple(int(v) for v in doc["input_shape"]),
        layers=tuple(layers),
    )
    spec.validate()
    return spec
