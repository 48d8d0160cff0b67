"""Finite-difference oracle for validating analytic gradients.

Central differences with eps = 1e-5 on float64 inputs balance truncation
against round-off; the relative error of a coordinate is

    |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, 1e-8)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import losses
from .errors import OracleError, ParameterError
from .rng import Rng
from .tensor_core import IGNORE_LABEL

DEFAULT_EPS = 1e-5
DEFAULT_SHAPES = ((1, 2, 3, 3), (2, 4, 5, 6))
DEFAULT_TOLERANCE = 1e-4

REL_FLOOR = 1e-8


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at
    a time."""
    if not 1e-7 <= eps <= 1e-3:
        raise ParameterError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1).copy()
    work = flat.copy()
    for i in range(flat.size):
        work[i] = flat[i] + eps
        hi = f(work.reshape(x.shape))
        work[i] = flat[i] - eps
        lo = f(work.reshape(x.shape))
        work[i] = flat[i]
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise OracleError(f"non-finite evaluation at coordinate {i}: {hi}, {lo}")
        grad.reshape(-1)[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric):
    """Worst-coordinate relative error and its index tuple."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    rel = np.abs(analytic - numeric) / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return float(rel[worst]), worst


@dataclass
class LossCheck:
    kind: str
    max_rel_error: float
    worst_coordinate: tuple
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    seed: int
    shapes: tuple
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "seed": self.seed,
            "shapes": [list(s) for s in self.shapes],
            "passed": self.passed,
            "losses": [
                {
                    "kind": c.kind,
                    "max_rel_error": c.max_rel_error,
                    "worst_coordinate": list(c.worst_coordinate),
                    "passed": c.passed,
                }
                for c in self.checks
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _random_instance(kind: str, shape, rng: Rng):
    """Teacher/student pair (plus labels where needed) and a closure pair
    (value_fn, analytic_grad) over the student tensor."""
    n, c, h, w = shape
    teacher = rng.uniform(shape, -1.0, 1.0)
    student = rng.uniform(shape, -1.0, 1.0)
    labels = None
    if kind in ("ce", "ifvd"):
        labels = rng.integers((n, h, w), 0, c)
        # exercise the ignore path on one pixel
        labels[0, 0, 0] = IGNORE_LABEL
    spec = losses.LossSpec(kind, temperature=1.3, p=2.0)

    def value_fn(s):
        return losses.evaluate(spec, teacher, s, labels=labels).value

    result = losses.evaluate(spec, teacher, student, labels=labels)
    return student, value_fn, result.grad_student


def check_loss(kind: str, shape, rng: Rng, eps: float = DEFAULT_EPS):
    student, value_fn, analytic = _random_instance(kind, shape, rng)
    numeric = finite_diff_grad(value_fn, student, eps)
    return relative_error(analytic, numeric)


def check_all_losses(seed: int = 0, shapes: Sequence = DEFAULT_SHAPES,
                     tolerance: float = DEFAULT_TOLERANCE,
                     kinds: Sequence[str] = losses.LOSS_KINDS,
                     eps: float = DEFAULT_EPS) -> GradCheckReport:
    """Run the finite-difference oracle over every loss kind and shape."""
    if tolerance < 0:
        raise ParameterError(f"tolerance must be non-negative, got {tolerance}")
    shapes = tuple(tuple(int(d) for d in s) for s in shapes)
    report = GradCheckReport(tolerance=tolerance, seed=seed, shapes=shapes)
    if not shapes:
        return report
    root = Rng(seed)
    for kind in kinds:
        worst = 0.0
        worst_coord = ()
        for si, shape in enumerate(shapes):
            rng = root.derive("gradcheck", kind, si)
            err, coord = check_loss(kind, shape, rng, eps)
            if err >= worst:
                worst, worst_coord = err, (si,) + tuple(int(i) for i in coord)
        report.checks.append(
            LossCheck(kind, worst, worst_coord, passed=worst < tolerance))
    return report
