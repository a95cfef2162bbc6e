from .filtering import BACKEND, get_filter, truncated_filter
from .meanfield import (
    CrfRnn,
    mean_field,
    mean_field_numpy,
    mean_field_refine,
    pass_messages,
    postprocess_crf,
    unary_from_mask,
    window_weights,
)

__all__ = [
    "BACKEND",
    "CrfRnn",
    "get_filter",
    "mean_field",
    "mean_field_numpy",
    "mean_field_refine",
    "pass_messages",
    "postprocess_crf",
    "truncated_filter",
    "unary_from_mask",
    "window_weights",
]
