"""Channel-wise knowledge distillation lab for dense prediction.

Loss kernels (channel-distribution KL/Bhattacharyya/L2 plus the spatial
baselines) with analytic gradients, a finite-difference oracle, toy
teacher/student networks, a deterministic synthetic segmentation task, and
the training/ablation harness tying them together.
"""

__version__ = "0.1.0"

from .errors import (
    CwkdError,
    NormalizationError,
    OracleError,
    ParameterError,
    ShapeError,
    TrainingDiverged,
)
from .rng import Rng
from .tensor_core import (
    IGNORE_LABEL,
    bilinear_upsample,
    conv2d,
    conv2d_backward,
    read_cwt1,
    reduce,
    relu,
    relu_backward,
    softmax_over_axis,
    write_cwt1,
)
from .losses import (
    Aligner,
    LossResult,
    LossSpec,
    align_channels,
    align_channels_backward,
    attention_transfer,
    channel_distribution,
    channelwise_bhattacharyya,
    channelwise_kl,
    channelwise_l2,
    combine,
    cross_entropy,
    evaluate,
    identity_aligner,
    ifvd,
    init_aligner,
    local_similarity,
    mimic_l2,
    pairwise_affinity,
    pixelwise_kl,
)
from .gradcheck import check_all_losses, finite_diff_grad
from .models import ToyNet, TapPair, backward, forward, init_toynet, load_checkpoint, save_checkpoint
from .data import Dataset, generate, load_dataset, save_dataset, split
from .metrics import ComplexityReport, complexity, confusion_matrix, count_params, macc, miou
from .trainer import (
    DataConfig,
    ExperimentConfig,
    OptimConfig,
    ablate,
    distill,
    load_config,
    make_datasets,
    run_comparison,
    sgd_step,
    train_teacher,
)
