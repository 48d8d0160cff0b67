"""Distillation loss kernels.

Every kernel returns a :class:`LossResult` holding the scalar loss and its
analytic gradient with respect to the *student* tensor; teacher tensors and
labels are constants and never receive gradients.

Reductions (documented per kernel):

* the three channel-distribution losses divide their raw double sum by
  ``n * c`` by default so the loss weight keeps its meaning across tensor
  shapes; pass ``reduction="sum"`` for the unnormalized double sum;
* ``mimic_l2``, ``pixelwise_kl``, ``local_similarity`` and ``ifvd`` average
  over contributing pixels, ``pairwise_affinity`` over pixel pairs, and
  ``attention_transfer`` over samples.

Cosine similarity with a zero vector is defined as 0 rather than NaN.  The
point-wise L1 variants sometimes quoted alongside these kernels are not
implemented; all distance-style kernels here use squared L2.

Because the teacher is frozen during distillation, kernels that do
non-trivial work on the teacher side accept an optional precomputed form
of it (see :func:`precompute_teacher`); passing it changes nothing but the
cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import blas as _blas

from .errors import NormalizationError, ParameterError, ShapeError
from .rng import Rng
from .tensor_core import (
    IGNORE_LABEL,
    as_labelmap,
    as_tensor4,
    conv2d,
    conv2d_backward,
    log_softmax_over_axis,
    require_same_shape,
)

CHANNEL_LOSS_KINDS = ("cw_kl", "cw_bhattacharyya", "cw_l2")
SPATIAL_LOSS_KINDS = ("mimic", "at", "pi", "local", "pa", "ifvd")
DISTILL_LOSS_KINDS = CHANNEL_LOSS_KINDS + SPATIAL_LOSS_KINDS
LOSS_KINDS = DISTILL_LOSS_KINDS + ("ce",)

TARGETS = ("featuremap", "scoremap")


@dataclass
class LossResult:
    """Scalar loss value plus gradient w.r.t. the student input tensor."""

    value: float
    grad_student: np.ndarray


@dataclass
class LossSpec:
    """Declarative description of one loss term.

    ``temperature`` is the softmax temperature of the channel-distribution
    losses and of the per-pixel logit loss; ``p`` is the attention-map
    exponent; ``alpha`` the combination weight; ``target`` selects the
    distillation tap.
    """

    kind: str
    temperature: float = 1.0
    p: float = 2.0
    alpha: float = 1.0
    target: str = "featuremap"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ParameterError(f"unknown loss kind {self.kind!r}")
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        if self.alpha < 0:
            raise ParameterError(f"alpha must be non-negative, got {self.alpha}")
        if self.p < 1:
            raise ParameterError(f"attention exponent must be >= 1, got {self.p}")
        if self.target not in TARGETS:
            raise ParameterError(f"target must be one of {TARGETS}, got {self.target!r}")

    def label(self) -> str:
        """Short column label, e.g. ``cw_kl_f`` / ``pi_s``."""
        if self.kind == "ce":
            return "ce"
        return f"{self.kind}_{self.target[0]}"


def _check_pair(teacher, student):
    teacher = as_tensor4(teacher, "teacher")
    student = as_tensor4(student, "student")
    require_same_shape(teacher, student, "teacher and student tensors")
    return teacher, student


def _check_precomputed(arr, shape, what):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != shape:
        raise ShapeError(f"precomputed {what} must have shape {shape}, got {arr.shape}")
    return arr


def _cw_norm(shape, reduction: str) -> float:
    if reduction == "mean":
        return float(shape[0] * shape[1])
    if reduction == "sum":
        return 1.0
    raise ParameterError(f"reduction must be 'mean' or 'sum', got {reduction!r}")


def channel_distribution(x, temperature: float = 1.0) -> np.ndarray:
    """Per-channel distribution over spatial positions, shape (n, c, h*w).

    Each (sample, channel) row is the softmax of that channel's activations
    over all h*w positions at the given temperature.
    """
    x = as_tensor4(x)
    n, c, h, w = x.shape
    return np.exp(log_softmax_over_axis(x, "spatial", temperature)).reshape(n, c, h * w)


# ---------------------------------------------------------------------------
# channel-distribution losses
# ---------------------------------------------------------------------------

def channelwise_kl(teacher, student, temperature: float = 1.0,
                   reduction: str = "mean", teacher_log_dist=None) -> LossResult:
    """KL divergence between per-channel spatial distributions.

    Asymmetric: the teacher distribution always weights the log-ratio, so
    positions where the teacher puts little mass are nearly ignored.
    """
    teacher, student = _check_pair(teacher, student)
    if teacher_log_dist is None:
        lt = log_softmax_over_axis(teacher, "spatial", temperature)
    else:
        lt = _check_precomputed(teacher_log_dist, teacher.shape, "teacher log-distribution")
    ls = log_softmax_over_axis(student, "spatial", temperature)
    pt = np.exp(lt)
    norm = _cw_norm(student.shape, reduction)
    value = float((pt * (lt - ls)).sum() / norm)
    grad = np.exp(ls)
    grad -= pt
    grad /= temperature * norm
    return LossResult(value, grad)


def channelwise_bhattacharyya(teacher, student, temperature: float = 1.0,
                              reduction: str = "mean", teacher_dist=None) -> LossResult:
    """Bhattacharyya distance between per-channel spatial distributions.

    Symmetric in its arguments: -ln of the Bhattacharyya coefficient
    summed over (sample, channel) slices.
    """
    teacher, student = _check_pair(teacher, student)
    n, c, h, w = student.shape
    if teacher_dist is None:
        pt = channel_distribution(teacher, temperature)
    else:
        pt = _check_precomputed(teacher_dist, teacher.shape,
                                "teacher distribution").reshape(n, c, h * w)
    ps = channel_distribution(student, temperature)
    root = np.sqrt(pt * ps)
    bc = root.sum(axis=2)  # (n, c) Bhattacharyya coefficients, in (0, 1]
    norm = _cw_norm(student.shape, reduction)
    value = float(-np.log(bc).sum() / norm)
    grad = (ps - root / bc[:, :, None]) * (0.5 / (temperature * norm))
    return LossResult(value, grad.reshape(n, c, h, w))


def channelwise_l2(teacher, student, temperature: float = 1.0,
                   reduction: str = "mean", teacher_dist=None) -> LossResult:
    """Squared L2 distance between per-channel spatial distributions."""
    teacher, student = _check_pair(teacher, student)
    n, c, h, w = student.shape
    if teacher_dist is None:
        pt = channel_distribution(teacher, temperature)
    else:
        pt = _check_precomputed(teacher_dist, teacher.shape,
                                "teacher distribution").reshape(n, c, h * w)
    ps = channel_distribution(student, temperature)
    d = ps - pt
    norm = _cw_norm(student.shape, reduction)
    value = float((d * d).sum() / norm)
    inner = (d * ps).sum(axis=2, keepdims=True)
    grad = 2.0 * ps * (d - inner) / (temperature * norm)
    return LossResult(value, grad.reshape(n, c, h, w))


# ---------------------------------------------------------------------------
# spatial (point-wise / structured) losses
# ---------------------------------------------------------------------------

def mimic_l2(teacher, student) -> LossResult:
    """Squared L2 between per-pixel feature vectors, averaged over pixels."""
    teacher, student = _check_pair(teacher, student)
    n, c, h, w = student.shape
    pixels = n * h * w
    diff = student - teacher
    value = float((diff * diff).sum() / pixels)
    diff *= 2.0 / pixels
    return LossResult(value, diff)


def _unit_attention(x, p):
    """Flattened attention map sum_c |x_c|^p, L2-normalized per sample."""
    n, c, h, w = x.shape
    a = (np.abs(x) ** p).sum(axis=1).reshape(n, h * w)
    norms = np.sqrt((a * a).sum(axis=1))
    if np.any(norms == 0.0):
        raise NormalizationError("attention map is all zeros; cannot normalize")
    return a / norms[:, None], norms


def attention_transfer(teacher, student, p: float = 2.0,
                       teacher_attention=None) -> LossResult:
    """Squared L2 between L2-normalized single-channel attention maps.

    The attention map collapses channels via sum_c |x_c|^p; each sample's
    flattened map is normalized to unit length before comparison, so the
    loss is invariant to positive rescaling of either network's features.
    """
    if p < 1:
        raise ParameterError(f"attention exponent must be >= 1, got {p}")
    teacher, student = _check_pair(teacher, student)
    n, c, h, w = student.shape
    if teacher_attention is None:
        ahat_t, _ = _unit_attention(teacher, p)
    else:
        ahat_t = _check_precomputed(teacher_attention, (n, h * w),
                                    "normalized teacher attention")
    ahat_s, ns = _unit_attention(student, p)
    diff = ahat_s - ahat_t
    value = float((diff * diff).sum() / n)

    g = 2.0 * diff / n
    # back through the unit normalization, then through sum_c |x|^p
    da = (g - ahat_s * (ahat_s * g).sum(axis=1, keepdims=True)) / ns[:, None]
    da = da.reshape(n, 1, h, w)
    grad = da * (p * np.abs(student) ** (p - 1.0) * np.sign(student))
    return LossResult(value, grad)


def pixelwise_kl(teacher, student, temperature: float = 1.0,
                 teacher_log_probs=None) -> LossResult:
    """Per-pixel KL between channel-axis softmax distributions, averaged
    over pixels."""
    teacher, student = _check_pair(teacher, student)
    n, c, h, w = student.shape
    pixels = n * h * w
    if teacher_log_probs is None:
        lt = log_softmax_over_axis(teacher, "channel", temperature)
    else:
        lt = _check_precomputed(teacher_log_probs, teacher.shape,
                                "teacher log-probabilities")
    ls = log_softmax_over_axis(student, "channel", temperature)
    pt = np.exp(lt)
    value = float((pt * (lt - ls)).sum() / pixels)
    grad = np.exp(ls)
    grad -= pt
    grad /= temperature * pixels
    return LossResult(value, grad)


_NEIGHBOR_OFFSETS = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)
                     if (di, dj) != (0, 0)]


def _neighbor_slices(h, w, di, dj):
    """(base, neighbor) row/col slices for the in-image part of offset
    (di, dj)."""
    bi = slice(max(-di, 0), h - max(di, 0))
    ni = slice(max(di, 0), h + min(di, 0))
    bj = slice(max(-dj, 0), w - max(dj, 0))
    nj = slice(max(dj, 0), w + min(dj, 0))
    return bi, bj, ni, nj


def local_distance_map(x) -> np.ndarray:
    """Per-pixel sum of Euclidean feature distances to the in-image
    8-neighborhood, shape (n, h, w); out-of-image neighbors contribute 0,
    so constant features give an identically zero map."""
    x = as_tensor4(x)
    n, c, h, w = x.shape
    s = np.zeros((n, h, w))
    for di, dj in _NEIGHBOR_OFFSETS:
        bi, bj, ni, nj = _neighbor_slices(h, w, di, dj)
        diff = x[:, :, ni, nj] - x[:, :, bi, bj]
        s[:, bi, bj] += np.sqrt((diff * diff).sum(axis=1))
    return s


def local_similarity(teacher, student, teacher_map=None) -> LossResult:
    """Mean squared difference between the two networks' local-distance
    maps (see :func:`local_distance_map`)."""
    teacher, student = _check_pair(teacher, student)
    n, c, h, w = student.shape
    pixels = n * h * w
    if teacher_map is None:
        st = local_distance_map(teacher)
    else:
        st = _check_precomputed(teacher_map, (n, h, w), "teacher distance map")

    ss = np.zeros((n, h, w))
    per_offset = []
    for di, dj in _NEIGHBOR_OFFSETS:
        bi, bj, ni, nj = _neighbor_slices(h, w, di, dj)
        diff = student[:, :, ni, nj] - student[:, :, bi, bj]
        dist = np.sqrt((diff * diff).sum(axis=1, keepdims=True))
        ss[:, bi, bj] += dist[:, 0]
        per_offset.append((bi, bj, ni, nj, diff, dist))

    d = ss - st
    value = float((d * d).sum() / pixels)

    weight = 2.0 * d / pixels  # dL/d(ss)
    grad = np.zeros_like(student)
    for bi, bj, ni, nj, diff, dist in per_offset:
        np.divide(diff, dist, out=diff, where=dist > 0)
        diff *= weight[:, None, bi, bj]
        grad[:, :, ni, nj] += diff
        grad[:, :, bi, bj] -= diff
    return LossResult(value, grad)


def _unit_pixel_vectors(x):
    """Normalize each pixel's channel vector; zero vectors stay zero."""
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    norms = np.sqrt((flat * flat).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    return flat / safe, safe, norms


def pairwise_affinity(teacher, student) -> LossResult:
    """Mean squared difference between the two networks' (h*w) x (h*w)
    pixel-pair cosine-similarity matrices.

    A pixel with a zero feature vector has similarity 0 to everything
    (including itself) by convention.  Cost is quadratic in the pixel
    count: both similarity matrices are materialized (as symmetric
    rank-k updates, only one triangle each).
    """
    teacher, student = _check_pair(teacher, student)
    n, c, h, w = student.shape
    p = h * w
    ut, _, _ = _unit_pixel_vectors(teacher)
    us, safe_s, norms_s = _unit_pixel_vectors(student)
    denom = n * p * p

    # similarity matrices are symmetric: build upper triangles with syrk,
    # take the value from the triangle, and push the gradient through a
    # symmetric matmul; the lower triangles stay zero throughout
    t_tri = np.zeros((p, p), order="F")
    s_tri = np.zeros((p, p), order="F")
    diff = np.empty((p, p), order="F")
    value = 0.0
    dus = np.empty_like(us)
    for i in range(n):
        _blas.dsyrk(1.0, ut[i], beta=0.0, c=t_tri, trans=1, lower=0,
                    overwrite_c=1)
        _blas.dsyrk(1.0, us[i], beta=0.0, c=s_tri, trans=1, lower=0,
                    overwrite_c=1)
        np.subtract(s_tri, t_tri, out=diff)
        flat = diff.ravel(order="K")
        raw = float(flat @ flat)
        diag = np.diagonal(diff)
        value += 2.0 * raw - float(diag @ diag)
        # d(loss)/d(us) = us @ (D + D^T) = 2 us @ D with symmetric
        # D = 2 (S_s - S_t) / denom
        dus[i] = _blas.dsymm(4.0 / denom, diff, us[i], side=1, lower=0)
    value /= denom

    radial = (us * dus).sum(axis=1, keepdims=True)
    grad_flat = np.where(norms_s > 0, (dus - us * radial) / safe_s, 0.0)
    return LossResult(value, grad_flat.reshape(n, c, h, w))


def _cosine_to_prototype(flat, lab, classes_present):
    """Per-pixel cosine to its class prototype plus the per-class caches
    needed for the analytic gradient."""
    c, p = flat.shape
    v = np.zeros(p)
    cache = {}
    for k in classes_present:
        mask = lab == k
        cols = flat[:, mask]
        proto = cols.mean(axis=1)
        mnorm = float(np.sqrt((proto * proto).sum()))
        cnorms = np.sqrt((cols * cols).sum(axis=0))
        safe_c = np.where(cnorms > 0, cnorms, 1.0)
        if mnorm > 0:
            vk = (cols * proto[:, None]).sum(axis=0) / (safe_c * mnorm)
            vk = np.where(cnorms > 0, vk, 0.0)
        else:
            vk = np.zeros(cols.shape[1])
        v[mask] = vk
        cache[k] = (mask, cols, cnorms, safe_c, proto, mnorm, vk)
    return v, cache


def prototype_cosine_map(features, labels) -> np.ndarray:
    """Per-pixel cosine similarity to the class prototype, shape (n, h, w);
    IGNORE pixels get 0."""
    features = as_tensor4(features)
    labels = as_labelmap(labels)
    n, c, h, w = features.shape
    out = np.zeros((n, h, w))
    for i in range(n):
        lab = labels[i].reshape(h * w)
        present = [int(k) for k in np.unique(lab) if k != IGNORE_LABEL]
        v, _ = _cosine_to_prototype(features[i].reshape(c, h * w), lab, present)
        out[i] = v.reshape(h, w)
    return out


def ifvd(teacher, student, labels, teacher_values=None) -> LossResult:
    """Intra-class feature-variation transfer.

    Per network and per class present in a sample, the class prototype is
    the mean feature vector over that class's pixels; each labeled pixel
    contributes the squared difference of its cosine-to-prototype between
    the two networks.  Pixels labeled ``IGNORE_LABEL`` are excluded from
    both the prototypes and the mean.
    """
    teacher, student = _check_pair(teacher, student)
    labels = as_labelmap(labels)
    n, c, h, w = student.shape
    if labels.shape != (n, h, w):
        raise ShapeError(
            f"labels shape {labels.shape} does not match feature grid {(n, h, w)}; "
            "resize labels to the feature resolution first")
    if teacher_values is not None:
        teacher_values = _check_precomputed(teacher_values, (n, h, w),
                                            "teacher cosine map")

    count = int((labels != IGNORE_LABEL).sum())
    grad = np.zeros_like(student)
    if count == 0:
        return LossResult(0.0, grad)

    value = 0.0
    for i in range(n):
        lab = labels[i].reshape(h * w)
        present = [int(k) for k in np.unique(lab) if k != IGNORE_LABEL]
        sf = student[i].reshape(c, h * w)
        if teacher_values is None:
            vt, _ = _cosine_to_prototype(teacher[i].reshape(c, h * w), lab, present)
        else:
            vt = teacher_values[i].reshape(h * w)
        vs, cache = _cosine_to_prototype(sf, lab, present)
        labeled = lab != IGNORE_LABEL
        dv = vs - vt
        value += float((dv[labeled] * dv[labeled]).sum())

        weight = np.where(labeled, 2.0 * dv / count, 0.0)
        gflat = np.zeros((c, h * w))
        for k in present:
            mask, cols, cnorms, safe_c, proto, mnorm, vk = cache[k]
            wk = weight[mask]
            if mnorm == 0:
                continue
            mhat = proto / mnorm
            uhat = cols / safe_c
            # direct dependence of each pixel's cosine on its own vector
            direct = wk * (mhat[:, None] - vk * uhat) / safe_c
            direct = np.where(cnorms > 0, direct, 0.0)
            # every class pixel moves the shared prototype by 1/|S_k|
            proto_pull = (wk * (uhat - vk * mhat[:, None])).sum(axis=1) / mnorm
            gflat[:, mask] += direct + proto_pull[:, None] / cols.shape[1]
        grad[i] = gflat.reshape(c, h, w)
    return LossResult(value / count, grad)


def cross_entropy(logits, labels) -> LossResult:
    """Per-pixel softmax cross-entropy, averaged over non-ignored pixels.

    An all-ignored batch yields value 0 with a zero gradient.
    """
    logits = as_tensor4(logits, "logits")
    labels = as_labelmap(labels)
    n, k, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {(n, h, w)}")
    valid = labels != IGNORE_LABEL
    if np.any((labels < 0) & valid) or np.any((labels >= k) & valid):
        raise ParameterError(f"labels must lie in [0, {k}) or be IGNORE_LABEL")
    count = int(valid.sum())
    if count == 0:
        return LossResult(0.0, np.zeros_like(logits))

    ls = log_softmax_over_axis(logits, "channel", 1.0)
    idx = np.where(valid, labels, 0)[:, None, :, :]
    picked = np.take_along_axis(ls, idx, axis=1)[:, 0]
    value = float(-(picked * valid).sum() / count)

    grad = np.exp(ls)
    np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=1) - 1.0, axis=1)
    grad *= valid[:, None, :, :] / count
    return LossResult(value, grad)


# ---------------------------------------------------------------------------
# channel alignment and combination
# ---------------------------------------------------------------------------

@dataclass
class Aligner:
    """Trainable 1x1 convolution mapping student channels to the teacher's
    channel count; owned by the distillation session."""

    weight: np.ndarray  # (c_out, c_in, 1, 1)
    bias: np.ndarray    # (c_out,)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def params(self) -> dict:
        return {"aligner.w": self.weight, "aligner.b": self.bias}


def init_aligner(rng: Rng, c_in: int, c_out: int) -> Aligner:
    bound = float(np.sqrt(1.0 / c_in))
    weight = rng.uniform((c_out, c_in, 1, 1), -bound, bound)
    return Aligner(weight, np.zeros(c_out))


def identity_aligner(channels: int) -> Aligner:
    weight = np.eye(channels).reshape(channels, channels, 1, 1)
    return Aligner(weight, np.zeros(channels))


def align_channels(student_feat, aligner: Optional[Aligner]) -> np.ndarray:
    """Map student channels onto the teacher's channel count.

    ``aligner=None`` is the pass-through used when the channel counts
    already match.
    """
    if aligner is None:
        return as_tensor4(student_feat, "student features")
    return conv2d(student_feat, aligner.weight, aligner.bias)


def align_channels_backward(student_feat, aligner: Optional[Aligner], grad_out):
    """Gradients of the aligned output w.r.t. the student features and the
    aligner parameters; (grad_student, grad_weight, grad_bias)."""
    if aligner is None:
        return as_tensor4(grad_out, "grad_out"), None, None
    return conv2d_backward(student_feat, aligner.weight, grad_out)


def precompute_teacher(spec: LossSpec, teacher, labels=None):
    """Frozen-teacher quantity a kernel can reuse across steps, or None
    for kernels with no teacher-side precomputation."""
    kind = spec.kind
    if kind == "cw_kl":
        return log_softmax_over_axis(teacher, "spatial", spec.temperature)
    if kind in ("cw_bhattacharyya", "cw_l2"):
        t = as_tensor4(teacher)
        return channel_distribution(teacher, spec.temperature).reshape(t.shape)
    if kind == "pi":
        return log_softmax_over_axis(teacher, "channel", spec.temperature)
    if kind == "at":
        return _unit_attention(as_tensor4(teacher), spec.p)[0]
    if kind == "local":
        return local_distance_map(teacher)
    if kind == "ifvd":
        if labels is None:
            raise ParameterError("ifvd precomputation requires labels")
        return prototype_cosine_map(teacher, labels)
    return None


def evaluate(spec: LossSpec, teacher, student, labels=None,
             precomputed=None) -> LossResult:
    """Dispatch one loss term.  ``teacher`` is ignored for ``ce`` (the
    student tensor holds the logits); ``labels`` is required for ``ce``
    and ``ifvd``; ``precomputed`` may hold the matching
    :func:`precompute_teacher` output."""
    kind = spec.kind
    if kind == "ce":
        if labels is None:
            raise ParameterError("cross-entropy requires labels")
        return cross_entropy(student, labels)
    if kind == "cw_kl":
        return channelwise_kl(teacher, student, spec.temperature,
                              teacher_log_dist=precomputed)
    if kind == "cw_bhattacharyya":
        return channelwise_bhattacharyya(teacher, student, spec.temperature,
                                         teacher_dist=precomputed)
    if kind == "cw_l2":
        return channelwise_l2(teacher, student, spec.temperature,
                              teacher_dist=precomputed)
    if kind == "mimic":
        return mimic_l2(teacher, student)
    if kind == "at":
        return attention_transfer(teacher, student, spec.p,
                                  teacher_attention=precomputed)
    if kind == "pi":
        return pixelwise_kl(teacher, student, spec.temperature,
                            teacher_log_probs=precomputed)
    if kind == "local":
        return local_similarity(teacher, student, teacher_map=precomputed)
    if kind == "pa":
        return pairwise_affinity(teacher, student)
    if kind == "ifvd":
        if labels is None:
            raise ParameterError("ifvd requires labels")
        return ifvd(teacher, student, labels, teacher_values=precomputed)
    raise ParameterError(f"unknown loss kind {kind!r}")


def combine(terms: Sequence[tuple]) -> LossResult:
    """Weighted sum of loss terms sharing one target tensor.

    ``terms`` is a sequence of (LossSpec, LossResult) pairs; values and
    gradients are combined with each spec's alpha.  Terms aimed at
    different tensors must be combined by the caller per target.
    """
    if not terms:
        raise ParameterError("cannot combine an empty list of loss terms")
    first = terms[0][1].grad_student
    value = 0.0
    grad = np.zeros_like(first)
    for spec, result in terms:
        if result.grad_student.shape != first.shape:
            raise ShapeError(
                "combine() requires a single target tensor; got gradients of "
                f"shape {result.grad_student.shape} and {first.shape}")
        value += spec.alpha * result.value
        grad += spec.alpha * result.grad_student
    return LossResult(float(value), grad)
