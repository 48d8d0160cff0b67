"""Teacher pretraining and student distillation.

The optimizer is plain SGD with momentum (v <- m*v + g; p <- p - lr*v), no
learning-rate schedule.  All randomness flows from explicit seeds through
named sub-streams: the experiment seed drives data generation and teacher
training, while each distillation run has its own run seed driving student
and aligner initialization plus batch sampling.  The teacher is trained
once and reused, frozen, across all distillation runs, so run seeds differ
only in the student side.

Reported per run: the best validation mIoU over the periodic evaluations
(the "best checkpoint" convention) next to the final-step value.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import data as data_mod
from .errors import ParameterError, ShapeError, TrainingDiverged
from .losses import (
    Aligner,
    LossSpec,
    align_channels,
    align_channels_backward,
    cross_entropy,
    evaluate,
    init_aligner,
    precompute_teacher,
)
from .metrics import confusion_matrix, miou
from .models import ToyNet, _forward_cache, backward, forward, init_toynet
from .rng import Rng

# per-kind weights used by `compare` when the config does not override
# them; calibrated once on the default synthetic task so that every kernel
# is at least non-harmful at desk scale (the channel losses keep the
# published alpha=35, temperature=1 setting)
DEFAULT_COMPARE_SPECS = {
    "cw_kl": LossSpec("cw_kl", target="featuremap", alpha=35.0, temperature=1.0),
    "cw_bhattacharyya": LossSpec("cw_bhattacharyya", target="featuremap",
                                 alpha=35.0, temperature=1.0),
    "cw_l2": LossSpec("cw_l2", target="featuremap", alpha=35.0, temperature=1.0),
    "mimic": LossSpec("mimic", target="featuremap", alpha=0.1),
    "at": LossSpec("at", target="featuremap", alpha=2.0, p=2.0),
    "pi": LossSpec("pi", target="scoremap", alpha=2.0, temperature=1.0),
    "local": LossSpec("local", target="featuremap", alpha=0.005),
    "pa": LossSpec("pa", target="featuremap", alpha=5.0),
    "ifvd": LossSpec("ifvd", target="featuremap", alpha=25.0),
}

DEFAULT_T_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_ALPHA_GRID = (0.0, 5.0, 15.0, 35.0, 50.0)


@dataclass
class DataConfig:
    seed: int = 0
    count: int = 250
    height: int = 32
    width: int = 32
    classes: int = 4
    train: int = 200
    val: int = 50
    noise: float = 0.05


@dataclass
class OptimConfig:
    lr: float = 0.05
    momentum: float = 0.9
    steps: int = 2000
    batch_size: int = 8
    val_every: int = 100


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    teacher_width: int = 32
    student_width: int = 8
    losses: list = field(default_factory=lambda: [LossSpec("ce", target="scoremap")])
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self):
        self.validate()

    def validate(self):
        ce_terms = [t for t in self.losses if t.kind == "ce"]
        if len(ce_terms) != 1:
            raise ParameterError(
                f"config must contain exactly one 'ce' loss term, got {len(ce_terms)}")
        labels = [t.label() for t in self.losses]
        if len(set(labels)) != len(labels):
            raise ParameterError(f"duplicate loss terms: {sorted(labels)}")
        if self.optim.steps < 0 or self.optim.batch_size < 1:
            raise ParameterError("optimizer steps must be >= 0 and batch size >= 1")

    @property
    def ce_term(self) -> LossSpec:
        return next(t for t in self.losses if t.kind == "ce")

    @property
    def distill_terms(self) -> list:
        return [t for t in self.losses if t.kind != "ce"]

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        cfg = dict(d)
        if "data" in cfg:
            cfg["data"] = DataConfig(**cfg["data"])
        if "optim" in cfg:
            cfg["optim"] = OptimConfig(**cfg["optim"])
        if "losses" in cfg:
            cfg["losses"] = [LossSpec(**t) for t in cfg["losses"]]
        return ExperimentConfig(**cfg)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def make_datasets(cfg: ExperimentConfig):
    """(train, val) datasets for the experiment; fixed by cfg.data alone."""
    d = cfg.data
    full = data_mod.generate(d.seed, d.count, d.height, d.width, d.classes, d.noise)
    return data_mod.split_counts(full, d.train, d.val)


# ---------------------------------------------------------------------------
# optimizer and evaluation
# ---------------------------------------------------------------------------

def sgd_step(params: dict, grads: dict, velocity: dict, lr: float,
             momentum: float) -> dict:
    """One SGD-with-momentum update, in place; returns the velocity dict."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        v = velocity[name]
        v *= momentum
        v += g
        p -= lr * v
    return velocity


def evaluate_net(net: ToyNet, dataset, batch: int = 32) -> float:
    """Mean IoU of argmax predictions over a dataset."""
    conf = np.zeros((dataset.classes, dataset.classes), dtype=np.int64)
    for lo in range(0, len(dataset), batch):
        images = dataset.images[lo:lo + batch]
        taps = forward(net, images)
        pred = np.argmax(taps.score, axis=1)
        conf += confusion_matrix(pred, dataset.labels[lo:lo + batch], dataset.classes)
    return miou(conf)[1]


def teacher_taps(net: ToyNet, images, batch: int = 32):
    """Precomputed (feature, score) taps for a frozen teacher."""
    feats, scores = [], []
    for lo in range(0, images.shape[0], batch):
        taps = forward(net, images[lo:lo + batch])
        feats.append(taps.feature)
        scores.append(taps.score)
    return np.concatenate(feats), np.concatenate(scores)


@dataclass
class TrainResult:
    net: ToyNet                 # final parameters
    best_net: ToyNet            # parameters at the best validation step
    rows: list                  # per-step metric dicts
    loss_labels: list           # column order of the loss components
    best_val: float
    final_val: float
    aligner: Aligner | None = None


def _finite_or_raise(step, components):
    total = sum(components.values())
    if not np.isfinite(total):
        raise TrainingDiverged(step, components)
    return total


# ---------------------------------------------------------------------------
# teacher pretraining
# ---------------------------------------------------------------------------

def train_teacher(cfg: ExperimentConfig, train, val) -> TrainResult:
    """Cross-entropy-only training of the wide network."""
    root = Rng(cfg.seed)
    net = init_toynet(root.derive("teacher", "init"), cfg.teacher_width,
                      cfg.data.classes)
    batch_rng = root.derive("teacher", "batches")
    opt = cfg.optim
    params = net.params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}

    rows = []
    best_val = -np.inf
    best_net = net.copy()
    final_val = evaluate_net(net, val) if opt.steps == 0 else np.nan
    for step in range(1, opt.steps + 1):
        idx = batch_rng.integers((opt.batch_size,), 0, len(train))
        images = train.images[idx]
        labels = train.labels[idx]
        taps, cache = _forward_cache(net, images)
        ce = cross_entropy(taps.score, labels)
        components = {"ce": ce.value}
        total = _finite_or_raise(step, components)
        grads = backward(net, images, grad_score=ce.grad_student, cache=cache)
        sgd_step(params, grads, velocity, opt.lr, opt.momentum)

        row = {"step": step, "ce": ce.value, "total": total, "val_miou": None}
        if step % opt.val_every == 0 or step == opt.steps:
            v = evaluate_net(net, val)
            row["val_miou"] = v
            final_val = v
            if v > best_val:
                best_val = v
                best_net = net.copy()
        rows.append(row)
    if opt.steps == 0:
        best_val = final_val
    return TrainResult(net, best_net, rows, [], float(best_val), float(final_val))


# ---------------------------------------------------------------------------
# distillation
# ---------------------------------------------------------------------------

def distill(cfg: ExperimentConfig, teacher: ToyNet, run_seed: int,
            train, val) -> TrainResult:
    """Train a student under the frozen teacher per the configured loss
    terms; gradients reach only the student and its aligner."""
    if teacher.classes != cfg.data.classes:
        raise ShapeError(
            f"teacher has {teacher.classes} classes, config wants {cfg.data.classes}")
    root = Rng(run_seed)
    student = init_toynet(root.derive("student", "init"), cfg.student_width,
                          cfg.data.classes)
    ce_spec = cfg.ce_term
    terms = cfg.distill_terms

    aligner = None
    if any(t.target == "featuremap" for t in terms) and teacher.width != student.width:
        aligner = init_aligner(root.derive("aligner", "init"),
                               student.width, teacher.width)

    batch_rng = root.derive("batches")
    opt = cfg.optim
    params = student.params()
    if aligner is not None:
        params.update(aligner.params())
    velocity = {k: np.zeros_like(v) for k, v in params.items()}

    t_feat, t_score = teacher_taps(teacher, train.images)
    # teacher-side loss quantities are fixed per scene; compute them once
    precomp = {}
    for spec in terms:
        tap = t_score if spec.target == "scoremap" else t_feat
        cached = precompute_teacher(spec, tap, labels=train.labels)
        if cached is not None:
            precomp[spec.label()] = cached
    labels_order = ["ce"] + [t.label() for t in terms]

    rows = []
    best_val = -np.inf
    best_net = student.copy()
    final_val = evaluate_net(student, val) if opt.steps == 0 else np.nan
    for step in range(1, opt.steps + 1):
        idx = batch_rng.integers((opt.batch_size,), 0, len(train))
        images = train.images[idx]
        labels = train.labels[idx]
        taps, cache = _forward_cache(student, images)

        ce = cross_entropy(taps.score, labels)
        components = {"ce": ce_spec.alpha * ce.value}
        grad_score = ce_spec.alpha * ce.grad_student
        grad_aligned = None
        aligned = None
        for spec in terms:
            cached = precomp.get(spec.label())
            pre = cached[idx] if cached is not None else None
            if spec.target == "scoremap":
                res = evaluate(spec, t_score[idx], taps.score, labels=labels,
                               precomputed=pre)
                grad_score += spec.alpha * res.grad_student
            else:
                if aligned is None:
                    aligned = align_channels(taps.feature, aligner)
                    grad_aligned = np.zeros_like(aligned)
                res = evaluate(spec, t_feat[idx], aligned, labels=labels,
                               precomputed=pre)
                grad_aligned += spec.alpha * res.grad_student
            components[spec.label()] = spec.alpha * res.value
        total = _finite_or_raise(step, components)

        grad_feature = None
        grads = {}
        if grad_aligned is not None:
            grad_feature, g_aw, g_ab = align_channels_backward(
                taps.feature, aligner, grad_aligned)
            if aligner is not None:
                grads["aligner.w"] = g_aw
                grads["aligner.b"] = g_ab
        grads.update(backward(student, images, grad_feature, grad_score, cache=cache))
        sgd_step(params, grads, velocity, opt.lr, opt.momentum)

        row = {"step": step, "total": total, "val_miou": None}
        for label in labels_order:
            row[label] = components[label]
        if step % opt.val_every == 0 or step == opt.steps:
            v = evaluate_net(student, val)
            row["val_miou"] = v
            final_val = v
            if v > best_val:
                best_val = v
                best_net = student.copy()
        rows.append(row)
    if opt.steps == 0:
        best_val = final_val
    return TrainResult(student, best_net, rows, labels_order, float(best_val),
                       float(final_val), aligner)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _primary_channel_term(cfg: ExperimentConfig) -> LossSpec:
    for t in cfg.distill_terms:
        if t.kind.startswith("cw_"):
            return t
    raise ParameterError("ablation needs a channel-distribution loss term in the config")


def _distill_summary(job):
    """Picklable worker for parallel sweeps: (best, final) validation mIoU."""
    cfg, teacher, seed, train, val = job
    result = distill(cfg, teacher, seed, train, val)
    return result.best_val, result.final_val


def ablate(cfg: ExperimentConfig, teacher: ToyNet, train, val,
           t_grid=DEFAULT_T_GRID, alpha_grid=DEFAULT_ALPHA_GRID,
           seeds=None, map_fn=map) -> list:
    """Two one-dimensional sweeps over the channel term's temperature and
    weight; returns one row per (sweep point, seed)."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    base = _primary_channel_term(cfg)
    points = []
    for t in t_grid:
        points.append(("temperature", float(t), base.alpha,
                       replace(base, temperature=float(t))))
    for a in alpha_grid:
        points.append(("alpha", base.temperature, float(a),
                       replace(base, alpha=float(a))))

    jobs, meta = [], []
    for sweep, t, a, spec in points:
        run_cfg = replace(cfg, losses=[spec if x is base else x for x in cfg.losses])
        for seed in seeds:
            jobs.append((run_cfg, teacher, seed, train, val))
            meta.append({"sweep": sweep, "temperature": t, "alpha": a, "seed": seed})
    rows = []
    for info, (best, final) in zip(meta, map_fn(_distill_summary, jobs)):
        rows.append({**info, "val_miou": best, "final_miou": final})
    return rows


def compare_specs(kinds) -> dict:
    unknown = [k for k in kinds if k not in DEFAULT_COMPARE_SPECS]
    if unknown:
        raise ParameterError(f"no comparison defaults for loss kinds {unknown}")
    return {k: DEFAULT_COMPARE_SPECS[k] for k in kinds}


def run_comparison(cfg: ExperimentConfig, teacher: ToyNet, train, val,
                   kinds, seeds=None, specs: dict | None = None,
                   map_fn=map) -> list:
    """One distillation run per (loss kind, seed) plus the CE-only
    baseline; returns per-run rows (aggregation is the caller's job)."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    specs = compare_specs(kinds) if specs is None else specs
    jobs, meta = [], []
    base_cfg = replace(cfg, losses=[cfg.ce_term])
    for seed in seeds:
        jobs.append((base_cfg, teacher, seed, train, val))
        meta.append({"loss": "baseline", "target": "-", "seed": seed})
    for kind in kinds:
        spec = specs[kind]
        run_cfg = replace(cfg, losses=[cfg.ce_term, spec])
        for seed in seeds:
            jobs.append((run_cfg, teacher, seed, train, val))
            meta.append({"loss": kind, "target": spec.target, "seed": seed})
    rows = []
    for info, (best, final) in zip(meta, map_fn(_distill_summary, jobs)):
        rows.append({**info, "val_miou": best, "final_miou": final})
    return rows


def write_metrics_csv(path, rows, loss_labels) -> None:
    """Fixed-order CSV: step, ce, one column per distillation term, total,
    val_miou (blank off the evaluation grid).  Full float precision so the
    file is byte-stable and exactly re-parseable."""
    columns = ["step", "ce"] + [l for l in loss_labels if l != "ce"] \
        + ["total", "val_miou"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for col in columns:
                v = row.get(col)
                if v is None:
                    cells.append("")
                elif col == "step":
                    cells.append(str(v))
                else:
                    cells.append(format(v, ".17g"))
            fh.write(",".join(cells) + "\n")
