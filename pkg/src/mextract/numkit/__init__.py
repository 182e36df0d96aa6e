from .kernels import (
    BCE_CLAMP,
    ELU_ALPHA,
    LN_EPS,
    KernelError,
    activation,
    bce_loss,
    dense,
    dropout,
    layer_norm,
    sigmoid,
)
from .mlp import ForwardTrace, ParamSet, backprop, forward_trace, init_params, n_hidden
from .optim import AdamState, adam_step
from .rng import RngStream
from .scaler import RobustScalerParams, apply_robust_scaler, fit_robust_scaler, invert_robust_scaler
