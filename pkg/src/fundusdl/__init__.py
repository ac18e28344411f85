"""fundusdl: a from-scratch deep-learning and fundus-image-processing toolkit
for binary PDR / non-PDR classification.

Subpackages: tensor + nn (autodiff ops), optim, imgproc, dataset, augment,
model (+ serialize), train, evaluate, cli. Hot conv/pool kernels live in
fundusdl.kernels with a compiled backend and a numpy fallback.
"""

from .augment import AugmentConfig, NormStats, fit_stats, normalize
from .dataset import CLASS_NAMES, DatasetSplit, Sample
from .imgproc import Image
from .kernels import BACKEND as KERNEL_BACKEND
from .model import (
    LayerSpec,
    ModelGraph,
    WeightStore,
    attach_head,
    build_functional_v2,
    build_sequential_v1,
    build_vgg16_base,
    build_vgg16_transfer,
    forward,
    freeze_prefix,
    init_weights,
)
from .nn import BatchNormState, LayerParams
from .optim import Adam, RMSProp
from .serialize import load_model, save_model
from .tensor import Tensor, no_grad
from .train import EarlyStopper, History, TrainConfig, evaluate_epoch, fit

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "NormStats", "fit_stats", "normalize",
    "CLASS_NAMES", "DatasetSplit", "Sample", "Image",
    "KERNEL_BACKEND", "LayerSpec", "ModelGraph", "WeightStore",
    "attach_head", "build_functional_v2", "build_sequential_v1",
    "build_vgg16_base", "build_vgg16_transfer", "forward", "freeze_prefix",
    "init_weights", "BatchNormState", "LayerParams", "Adam", "RMSProp",
    "load_model", "save_model", "Tensor", "no_grad",
    "EarlyStopper", "History", "TrainConfig", "evaluate_epoch", "fit",
    "__version__",
]
