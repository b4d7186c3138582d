"""Python surface of the saenet C++ core.

Dense kernels (conv2d, pooling, activations), the named gradient-check
targets, the model zoo presets, and an eval-mode Model wrapper. Everything
numerical runs in the C++ extension; arrays cross the boundary as numpy.
"""

try:
    from ._saenet import (
        CheckResult,
        Model,
        channel_scale,
        check_names,
        conv2d,
        global_avg_pool,
        grad_check,
        lr_at_epoch,
        make_synthetic,
        maxpool2d,
        metrics,
        preset_names,
        relu,
        sigmoid,
        softmax,
    )
except ImportError:  # build-tree layout keeps the extension next to the package
    from _saenet import (
        CheckResult,
        Model,
        channel_scale,
        check_names,
        conv2d,
        global_avg_pool,
        grad_check,
        lr_at_epoch,
        make_synthetic,
        maxpool2d,
        metrics,
        preset_names,
        relu,
        sigmoid,
        softmax,
    )

__version__ = "0.1.0"

__all__ = [
    "CheckResult",
    "Model",
    "channel_scale",
    "check_names",
    "conv2d",
    "global_avg_pool",
    "grad_check",
    "lr_at_epoch",
    "make_synthetic",
    "maxpool2d",
    "metrics",
    "preset_names",
    "relu",
    "sigmoid",
    "softmax",
]
