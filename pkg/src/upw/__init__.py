"""Unified pix-token/word-token modeling pipeline.

Color-folding pixel tokenization, lossless window partitioning, a
hierarchical local-window/global transformer with grouped-query
attention, desk-scale image pretraining, and the mixed text+image
container format.
"""

from .errors import (
    AlignmentError,
    ConfigError,
    CorruptionError,
    DataError,
    EmptyImageError,
    EmptyInputError,
    EncodingError,
    FormatError,
    InvalidFactorError,
    InvalidTokenError,
    NumericalError,
    ShapeError,
    TruncationError,
    UpwError,
    UsageError,
)
from .folding import (
    VALID_FACTORS,
    FoldedImage,
    fold_image,
    fold_pixel,
    unfold_image,
    unfold_token,
    validate_factor,
    vocab_size,
)
from .windows import (
    PadSpec,
    WindowGrid,
    pad_and_partition,
    pad_image,
    pad_token_id,
    partition,
    sub_partition,
    sub_unpartition,
    unpartition,
)
from .vocab import Tag, UnifiedToken, from_unified, to_unified, total_vocab
from .model import (
    ModelConfig,
    UnifiedPixWordModel,
    causal_mask,
    full_local_mask,
    gqa_attention,
    local_window_mask,
)
from .autodiff import Tensor
from .gradcheck import GradCheckResult, grad_check
from .checkpoint import load_checkpoint, save_checkpoint
from .training import (
    LossCurve,
    PretrainResult,
    TrainConfig,
    pretrain_images,
    sample_image,
    training_step_equivalence,
)
from .mixedfile import (
    ImageRecord,
    MixedRecord,
    TextRecord,
    iterate_mixed,
    read_mixed,
    write_mixed,
)

__version__ = "0.1.0"
