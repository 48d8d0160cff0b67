"""Toy segmentation networks with explicit forward and backward passes.

Architecture (spatial size preserved end to end):

    conv 3->F 3x3 pad 1 -> relu -> conv F->F 3x3 pad 1 -> relu
        [feature tap, F channels]
    -> conv F->K 1x1
        [score tap, K channels]

The feature tap sits before the classifier, the score tap after it; both
are returned by :func:`forward` and both accept gradients in
:func:`backward` (the feature-tap gradient joins the chain at the tap).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .rng import Rng
from .tensor_core import as_tensor4, conv2d, conv2d_backward, read_cwt1, relu, relu_backward, write_cwt1

CHECKPOINT_FORMAT = "cwkd-toynet-v1"

PARAM_NAMES = ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b")


@dataclass
class TapPair:
    """The two distillation targets: pre-classifier features and class
    scores."""

    feature: np.ndarray  # (n, F, h, w)
    score: np.ndarray    # (n, K, h, w)


@dataclass
class ToyNet:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    conv3_w: np.ndarray
    conv3_b: np.ndarray

    @property
    def width(self) -> int:
        return self.conv1_w.shape[0]

    @property
    def classes(self) -> int:
        return self.conv3_w.shape[0]

    def params(self) -> dict:
        return {
            "conv1.w": self.conv1_w, "conv1.b": self.conv1_b,
            "conv2.w": self.conv2_w, "conv2.b": self.conv2_b,
            "conv3.w": self.conv3_w, "conv3.b": self.conv3_b,
        }

    def copy(self) -> "ToyNet":
        return ToyNet(*(p.copy() for p in (
            self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
            self.conv3_w, self.conv3_b)))


def init_toynet(rng: Rng, width: int, classes: int, scale: float = 1.0) -> ToyNet:
    """Fresh network with weights ~ uniform(-b, b), b = scale/sqrt(fan_in),
    and zero biases.  Draw order: conv1, conv2, conv3 weights."""

    def draw(c_out, c_in, k):
        bound = scale * float(np.sqrt(1.0 / (c_in * k * k)))
        return rng.uniform((c_out, c_in, k, k), -bound, bound)

    return ToyNet(
        conv1_w=draw(width, 3, 3), conv1_b=np.zeros(width),
        conv2_w=draw(width, width, 3), conv2_b=np.zeros(width),
        conv3_w=draw(classes, width, 1), conv3_b=np.zeros(classes),
    )


def _forward_cache(net: ToyNet, images):
    x = as_tensor4(images, "images")
    if x.shape[1] != net.conv1_w.shape[1]:
        raise ShapeError(
            f"images have {x.shape[1]} channels, network expects {net.conv1_w.shape[1]}")
    cols = []
    z1 = conv2d(x, net.conv1_w, net.conv1_b, pad=1, cols_out=cols)
    a1 = relu(z1)
    z2 = conv2d(a1, net.conv2_w, net.conv2_b, pad=1, cols_out=cols)
    a2 = relu(z2)
    score = conv2d(a2, net.conv3_w, net.conv3_b)
    return TapPair(feature=a2, score=score), (x, z1, a1, z2, a2, cols)


def forward(net: ToyNet, images) -> TapPair:
    """Run the network; returns the feature and score taps."""
    taps, _ = _forward_cache(net, images)
    return taps


def backward(net: ToyNet, images, grad_feature=None, grad_score=None,
             cache=None) -> dict:
    """Parameter gradients for given tap gradients.

    The score-tap gradient flows through the whole network; the
    feature-tap gradient joins at the tap.  Pass the cache returned by
    :func:`_forward_cache` to skip recomputing the forward pass.
    """
    if cache is None:
        _, cache = _forward_cache(net, images)
    x, z1, a1, z2, a2, cols = cache
    if grad_score is None:
        grad_score = np.zeros((x.shape[0], net.classes) + x.shape[2:])
    grad_score = as_tensor4(grad_score, "grad_score")
    if grad_score.shape != (x.shape[0], net.classes) + x.shape[2:]:
        raise ShapeError(f"grad_score has shape {grad_score.shape}, "
                         f"expected {(x.shape[0], net.classes) + x.shape[2:]}")

    g_a2, g_w3, g_b3 = conv2d_backward(a2, net.conv3_w, grad_score)
    if grad_feature is not None:
        grad_feature = as_tensor4(grad_feature, "grad_feature")
        if grad_feature.shape != a2.shape:
            raise ShapeError(f"grad_feature has shape {grad_feature.shape}, "
                             f"expected {a2.shape}")
        g_a2 = g_a2 + grad_feature
    g_z2 = relu_backward(z2, g_a2)
    g_a1, g_w2, g_b2 = conv2d_backward(a1, net.conv2_w, g_z2, pad=1, cols=cols[1])
    g_z1 = relu_backward(z1, g_a1)
    _, g_w1, g_b1 = conv2d_backward(x, net.conv1_w, g_z1, pad=1, cols=cols[0],
                                    need_input_grad=False)
    return {
        "conv1.w": g_w1, "conv1.b": g_b1,
        "conv2.w": g_w2, "conv2.b": g_b2,
        "conv3.w": g_w3, "conv3.b": g_b3,
    }


# ---------------------------------------------------------------------------
# checkpoints: JSON manifest + one CWT1 dump per parameter
# ---------------------------------------------------------------------------

def save_checkpoint(net: ToyNet, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {"format": CHECKPOINT_FORMAT, "width": net.width,
                "classes": net.classes, "params": {}}
    for name, value in net.params().items():
        fname = name.replace(".", "_") + ".cwt"
        arr = value if value.ndim == 4 else value.reshape(1, value.size, 1, 1)
        write_cwt1(os.path.join(directory, fname), arr)
        manifest["params"][name] = {"file": fname, "shape": list(value.shape)}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory) -> ToyNet:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ShapeError(f"{directory}: not a {CHECKPOINT_FORMAT} checkpoint")
    values = {}
    for name, entry in manifest["params"].items():
        arr = read_cwt1(os.path.join(directory, entry["file"]))
        values[name] = arr.reshape(entry["shape"])
    return ToyNet(
        conv1_w=values["conv1.w"], conv1_b=values["conv1.b"],
        conv2_w=values["conv2.w"], conv2_b=values["conv2.b"],
        conv3_w=values["conv3.w"], conv3_b=values["conv3.b"],
    )
