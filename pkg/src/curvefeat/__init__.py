"""Curvelet-domain feature enhancement for forgery-style classification.

A tight-frame 2D discrete curvelet transform, wedge-level attention gating
with binary thresholds, scale-band spatial masks, a loss-adaptive L1 gate
regularizer, and a desk-scale end-to-end trainer with hand-written
reverse-mode gradients.
"""

from .curvelet import (
    CurveletCoeffs,
    CurveletGeometry,
    WedgeInfo,
    adjoint_check,
    build_geometry,
    fdct_forward,
    fdct_inverse,
)
from .errors import (
    BadAngleCount,
    BadChannelCount,
    CurvefeatError,
    DimensionTooSmall,
    EmptyInput,
    GeometryTooShallow,
    MissingForwardCache,
    ShapeMismatch,
    SingleClassInput,
)
from .gating import (
    ExciteMLP,
    GateVector,
    SqueezeStack,
    apply_gates,
    binary_threshold,
    excite,
    gate_forward,
    gate_vjp,
    squeeze,
)
from .masks import (
    MaskSet,
    ScaleBandSpec,
    build_bands,
    mask_vjp,
    modulate,
    recompose_band,
)
from .metrics import ScoredItem, accuracy, auc, gates_report
from .pipeline import (
    EnhanceParams,
    enhance_channel,
    enhance_image,
    inflate_first_conv,
    neutral_params,
)
from .regularizer import (
    RegConfig,
    lambda_l1_at,
    normalized_cls_loss,
    reg_loss,
    reg_vjp,
)
from .spectral import MagPhasePair, decompose, recompose
from .training import (
    FafeModel,
    OptimizerConfig,
    SyntheticDataset,
    SyntheticSample,
    ToyClassifier,
    TrainState,
    backward,
    build_model,
    load_checkpoint,
    make_synthetic,
    model_backward,
    model_forward,
    predict,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
