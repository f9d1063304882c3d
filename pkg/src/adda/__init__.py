"""Adversarial discriminative domain adaptation workbench for digit
classifiers: a small autodiff tensor engine, the LeNet-style encoder /
classifier / discriminator trio, the three-stage adaptation protocol, and
the evaluation artifacts (confusion matrices, exact t-SNE, SVG/CSV)."""

__version__ = "0.1.0"

from .config import RunConfig, SampleCaps, StageConfig, config_from_dict, load_config
from .data import (
    DatasetContainer,
    PreprocessConfig,
    SyntheticShiftSpec,
    apply_shift,
    load_dataset,
    load_idx,
    preprocess,
    resolve_dataset,
    save_dataset,
    save_idx,
    split,
    synthetic_digits,
)
from .errors import (
    AddaError,
    DimensionError,
    FormatError,
    NumericsError,
    TapeError,
    ValidationError,
)
from .models import (
    Classifier,
    Discriminator,
    Encoder,
    init_weights,
    load_checkpoint,
    save_checkpoint,
)
from .optim import Adam, BatchPlan, batch_indices
from .pipeline import (
    ProtocolResult,
    SourceModel,
    adapt_target,
    encode_features,
    evaluate,
    pretrain_source,
    run_protocol,
)
from .tensor import (
    Parameter,
    Tensor,
    backward,
    conv2d,
    finite_diff_check,
    linear,
    maxpool2,
    no_grad,
    relu,
    sigmoid_bce,
    softmax_cross_entropy,
)
from .viz import (
    ConfusionMatrix,
    Embedding,
    TsneConfig,
    calibrated_conditionals,
    confusion,
    emit_confusion_svg,
    emit_csv,
    emit_embedding_svg,
    joint_probabilities,
    kl_and_gradient,
    pairwise_sq_dists,
    tsne_embed,
)
