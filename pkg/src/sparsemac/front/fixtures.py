"""Desk-scale network fixtures shipped with the package.

Three flavors: a LeNet-style CONV x2 + FC x2 net sized for the synthetic
two-class training task, a bottleneck stack in the spirit of the mobile
nets (1x1 expand / 3x3 / 1x1 project, no depthwise) whose fat 3x3 stages
are compute-bound, and a large-FC net whose first fully-connected layer
streams far more weight bytes than the weight buffer holds.
"""

from __future__ import annotations

import json
from importlib import resources

from .network import NetworkDescription, network_from_dict

FIXTURE_NAMES = ("lenet", "mobilenet-flavored", "vgg-flavored")


def lenet_fixture(batch: int = 32, seed: int = 7) -> dict:
    return {
        "schema_version": 1,
        "name": "lenet-fixture",
        "batch": batch,
        "seed": seed,
        "input_shape": [1, 14, 14],
        "layers": [
            {"kind": "conv", "name": "conv1", "out_channels": 4, "kernel": [3, 3]},
            {"kind": "relu"},
            {"kind": "pool", "pool": "max", "window": [2, 2]},
            {"kind": "conv", "name": "conv2", "out_channels": 8, "kernel": [3, 3]},
            {"kind": "relu"},
            {"kind": "pool", "pool": "max", "window": [2, 2]},
            {"kind": "reshape"},
            {"kind": "fc", "name": "fc1", "out_features": 16},
            {"kind": "relu"},
            {"kind": "fc", "name": "fc2", "out_features": 2},
            {"kind": "loss", "loss": "softmax-xent"},
        ],
    }


def mobilenet_flavored_fixture(batch: int = 32, seed: int = 11) -> dict:
    layers = [
        {"kind": "conv", "name": "stem", "out_channels": 64, "kernel": [3, 3], "pad": [1, 1]},
        {"kind": "batchnorm"},
        {"kind": "relu"},
    ]
    for b in range(3):
        layers += [
            {"kind": "conv", "name": f"b{b}.expand", "out_channels": 512, "kernel": [1, 1]},
            {"kind": "relu"},
            {"kind": "conv", "name": f"b{b}.conv", "out_channels": 512,
             "kernel": [3, 3], "pad": [1, 1]},
            {"kind": "relu"},
            {"kind": "conv", "name": f"b{b}.project", "out_channels": 64, "kernel": [1, 1]},
            {"kind": "batchnorm"},
        ]
    layers += [
        {"kind": "pool", "pool": "mean", "window": [2, 2]},
        {"kind": "reshape"},
        {"kind": "fc", "name": "head", "out_features": 10},
        {"kind": "loss", "loss": "softmax-xent"},
    ]
    return {
        "schema_version": 1,
        "name": "mobilenet-flavored",
        "batch": batch,
        "seed": seed,
        "input_shape": [3, 14, 14],
        "layers": layers,
    }


def vgg_flavored_fixture(batch: int = 32, seed: int = 13) -> dict:
    return {
        "schema_version": 1,
        "name": "vgg-flavored",
        "batch": batch,
        "seed": seed,
        "input_shape": [3, 16, 16],
        "layers": [
            {"kind": "conv", "name": "conv1", "out_channels": 64, "kernel": [3, 3], "pad": [1, 1]},
            {"kind": "relu"},
            {"kind": "conv", "name": "conv2", "out_channels": 128, "kernel": [3, 3], "pad": [1, 1]},
            {"kind": "relu"},
            {"kind": "pool", "pool": "max", "window": [2, 2]},
            {"kind": "reshape"},
            {"kind": "fc", "name": "fc1", "out_features": 4096},
            {"kind": "relu"},
            {"kind": "fc", "name": "fc2", "out_features": 1000},
            {"kind": "loss", "loss": "softmax-xent"},
        ],
    }


_BUILDERS = {
    "lenet": lenet_fixture,
    "mobilenet-flavored": mobilenet_flavored_fixture,
    "vgg-flavored": vgg_flavored_fixture,
}


def fixture_dict(name: str, **kw) -> dict:
    if name not in _BUILDERS:
        raise ValueError(f"unknown fixture {name!r}; have {sorted(_BUILDERS)}")
    return _BUILDERS[name](**kw)


def fixture(name: str, **kw) -> NetworkDescription:
    return network_from_dict(fixture_dict(name, **kw))


def fixture_json(name: str, **kw) -> str:
    return json.dumps(fixture_dict(name, **kw), indent=2)


def packaged_fixture_path(name: str):
    """Path of the shipped JSON copy (same content as the builder defaults)."""
    return resources.files("sparsemac").joinpath(f"fixtures/{name}.json")
