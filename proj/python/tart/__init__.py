"""Task-adaptive reference transformation for few-shot text classification."""

from ._tart import (
    DegenerateTaskError,
    classify,
    compute_prototypes,
    compute_w,
    evaluate,
    gradcheck,
    make_synthetic,
    proto_classify,
    train,
)

__all__ = [
    "DegenerateTaskError",
    "classify",
    "compute_prototypes",
    "compute_w",
    "evaluate",
    "gradcheck",
    "make_synthetic",
    "proto_classify",
    "train",
]
