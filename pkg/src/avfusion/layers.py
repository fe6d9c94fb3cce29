"""Small building blocks shared by the model and the trainer."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError


def dense(x, W, b):
    return ad.add(ad.matmul(x, ad.swapaxes(W, 0, 1)), b)


def apply_dropout(x, rate: float, rng: np.random.Generator | None, mode: str):
    """Inverted dropout: in train mode zero each unit with probability ``rate``
    and scale survivors by ``1/(1-rate)``; identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise InvalidInputError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    if mode != "train":
        raise InvalidInputError(f"unknown mode {mode!r}")
    if rng is None:
        raise InvalidInputError("train-mode dropout needs an rng")
    keep = rng.random(ad.value(x).shape) >= rate
    return ad.mul(x, keep / (1.0 - rate))
