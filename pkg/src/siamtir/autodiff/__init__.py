"""Minimal tensor library with reverse-mode automatic differentiation."""
from .fourier import abs2, cdiv, cmul, conj, cross_correlate_fft, fft2, ifft2, real
from .gradcheck import grad_check, relative_error
from .ops import (
    conv2d,
    conv_output_size,
    conv_transpose2d,
    cross_correlate,
    global_avg_pool,
    global_max_pool,
    max_pool2d,
    pad2d,
    relu,
    roll2d,
    scale_broadcast,
    sigmoid,
    softplus,
)
from .tensor import (
    Tensor,
    complex_dtype,
    ensure_tensor,
    get_default_dtype,
    gradients,
    is_grad_enabled,
    no_grad,
    precision,
    set_default_dtype,
    topological_order,
    verification_mode,
)

__all__ = [
    "Tensor", "abs2", "cdiv", "cmul", "complex_dtype", "conj", "conv2d", "conv_output_size",
    "conv_transpose2d", "cross_correlate", "cross_correlate_fft", "ensure_tensor", "fft2",
    "get_default_dtype", "global_avg_pool", "global_max_pool", "grad_check", "gradients",
    "ifft2", "is_grad_enabled", "max_pool2d", "no_grad", "pad2d", "precision", "real",
    "relative_error", "relu", "roll2d", "scale_broadcast", "set_default_dtype", "sigmoid",
    "softplus", "topological_order", "verification_mode",
]
