from .tensor import (
    Tensor,
    as_tensor,
    no_grad,
    is_grad_enabled,
    set_finite_checks,
    concat,
    stack,
    where,
    minimum,
    maximum,
    matmul,
    conv2d,
    conv_transpose2d,
    grid_sample,
    avg_pool2d,
    softmax,
    layer_norm,
    take,
    identity_grid,
    upsample_bilinear,
)
from .nn import Module, ModuleList, Parameter, Linear, Conv2d, ConvTranspose2d, LayerNorm
from .optim import Adam
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError

__all__ = [
    "Tensor", "as_tensor", "no_grad", "is_grad_enabled", "set_finite_checks",
    "concat", "stack", "where", "minimum", "maximum", "matmul",
    "conv2d", "conv_transpose2d", "grid_sample", "avg_pool2d", "softmax",
    "layer_norm", "take", "identity_grid", "upsample_bilinear",
    "Module", "ModuleList", "Parameter", "Linear", "Conv2d", "ConvTranspose2d",
    "LayerNorm", "Adam", "save_checkpoint", "load_checkpoint", "CheckpointError",
]
