"""Segmentation quality metrics and training-cost accounting.

``complexity`` reports the leading-order per-pixel cost term of each
distillation kernel for an input tap of spatial size h x w with c channels
(n = class count, p = attention exponent), as exact integers, not measured
FLOPs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .tensor_core import IGNORE_LABEL, as_labelmap

# kind -> (symbolic cost term, evaluator over integer dims)
_COMPLEXITY_TABLE = {
    "mimic": ("h*w*c", lambda h, w, c, n, p: h * w * c),
    "at": ("h*w*c^p", lambda h, w, c, n, p: h * w * c ** p),
    "pi": ("h*w*c", lambda h, w, c, n, p: h * w * c),
    "local": ("8*h*w*c", lambda h, w, c, n, p: 8 * h * w * c),
    "pa": ("(h*w)^2*c", lambda h, w, c, n, p: (h * w) ** 2 * c),
    "ifvd": ("h*w*c*n", lambda h, w, c, n, p: h * w * c * n),
    "cw_kl": ("h*w*c", lambda h, w, c, n, p: h * w * c),
    "cw_bhattacharyya": ("h*w*c", lambda h, w, c, n, p: h * w * c),
    "cw_l2": ("h*w*c", lambda h, w, c, n, p: h * w * c),
}


def confusion_matrix(predicted, truth, classes: int) -> np.ndarray:
    """(classes, classes) counts with ``conf[i, j]`` = pixels predicted i
    whose true class is j; IGNORE pixels are excluded."""
    predicted = as_labelmap(predicted, "predicted")
    truth = as_labelmap(truth, "truth")
    if predicted.shape != truth.shape:
        raise ShapeError(f"label maps differ: {predicted.shape} vs {truth.shape}")
    valid = truth != IGNORE_LABEL
    p = predicted[valid]
    t = truth[valid]
    if p.size and (p.min() < 0 or p.max() >= classes or t.min() < 0 or t.max() >= classes):
        raise ParameterError(f"class indices outside [0, {classes})")
    conf = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(conf, (p, t), 1)
    return conf


def miou(conf) -> tuple:
    """(per-class IoU vector, mean); classes with zero union are NaN in the
    vector and excluded from the mean."""
    conf = np.asarray(conf, dtype=np.int64)
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - np.diag(conf)
    ious = np.where(union > 0, tp / np.maximum(union, 1), np.nan)
    valid = union > 0
    mean = float(ious[valid].mean()) if valid.any() else float("nan")
    return ious, mean


def macc(conf) -> float:
    """Mean over classes of per-class recall; classes with no true pixels
    are excluded."""
    conf = np.asarray(conf, dtype=np.int64)
    tp = np.diag(conf).astype(np.float64)
    truth_counts = conf.sum(axis=0)
    valid = truth_counts > 0
    if not valid.any():
        return float("nan")
    return float((tp[valid] / truth_counts[valid]).mean())


@dataclass
class ComplexityReport:
    kind: str
    term: str
    value: int


def complexity(kind: str, h: int, w: int, c: int, n: int = 1, p: int = 2) -> ComplexityReport:
    """Leading-order cost term of one distillation kernel, as an exact
    integer for integer inputs."""
    if kind == "ho":
        raise ParameterError(
            "holistic (adversarial) distillation is unsupported; its cost is "
            "that of a discriminator, not a closed form")
    if kind not in _COMPLEXITY_TABLE:
        raise ParameterError(f"no complexity entry for loss kind {kind!r}")
    for name, v in (("h", h), ("w", w), ("c", c), ("n", n), ("p", p)):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be a positive integer, got {v}")
    term, fn = _COMPLEXITY_TABLE[kind]
    return ComplexityReport(kind, term, int(fn(int(h), int(w), int(c), int(n), int(p))))


def count_params(net) -> int:
    """Exact parameter count of a toy network."""
    f = net.width
    k = net.classes
    return (f * 3 * 9 + f) + (f * f * 9 + f) + (k * f + k)


def time_loss(fn, *args, repeats: int = 3) -> float:
    """Best-of-``repeats`` wall time of one kernel call, in seconds."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best
