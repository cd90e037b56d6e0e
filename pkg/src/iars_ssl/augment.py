"""Overlapping crop views and latent timestamp masking.

The two views of a batch are contiguous slices that share a nonempty
overlap; positive pairs are only defined inside that overlap. Sampling is
overlap-first: draw the overlap length, place it, then extend view A to the
left and view B to the right by independent uniform amounts. One plan per
batch keeps the overlap alignment rectangular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Batch
from .numerics import Tensor, mul, narrow


@dataclass(frozen=True)
class CropPlan:
    """Timestep boundaries of the two views; A covers [a_start, a_end) and
    ends where the overlap ends, B covers [b_start, b_end) and starts where
    the overlap starts."""

    a_start: int
    a_end: int
    b_start: int
    b_end: int

    def __post_init__(self):
        if not (0 <= self.a_start <= self.b_start < self.a_end <= self.b_end):
            raise ValueError(f"invalid crop ordering: {self}")

    @property
    def overlap_start(self) -> int:
        return self.b_start

    @property
    def overlap_end(self) -> int:
        return self.a_end

    @property
    def overlap_length(self) -> int:
        return self.a_end - self.b_start


def sample_crop(l: int, min_overlap_pow: int = 0, rng: np.random.Generator | None = None) -> CropPlan:
    """Draw a crop plan for series length ``l``.

    The overlap length is uniform on [2**(min_overlap_pow+1), l], which
    guarantees at least min_overlap_pow+2 pyramid levels.
    """
    rng = rng or np.random.default_rng()
    min_overlap = 2 ** (min_overlap_pow + 1)
    if l < min_overlap:
        raise ValueError(f"series length {l} below minimum overlap {min_overlap}")
    ov_len = int(rng.integers(min_overlap, l + 1))
    ov_start = int(rng.integers(0, l - ov_len + 1))
    ov_end = ov_start + ov_len
    a_start = int(rng.integers(0, ov_start + 1))
    b_end = int(rng.integers(ov_end, l + 1))
    return CropPlan(a_start=a_start, a_end=ov_end, b_start=ov_start, b_end=b_end)


def apply_crop(batch: Batch, plan: CropPlan) -> tuple[Tensor, Tensor]:
    """Slice a batch into the two views defined by ``plan``."""
    length = batch.values.shape[2]
    if plan.b_end > length:
        raise ValueError(f"crop plan extends to {plan.b_end} on series of length {length}")
    view_a = narrow(batch.values, 2, plan.a_start, plan.a_end - plan.a_start)
    view_b = narrow(batch.values, 2, plan.b_start, plan.b_end - plan.b_start)
    return view_a, view_b


def mask_latent(f: Tensor, p_drop: float, rng: np.random.Generator | None = None,
                training: bool = True) -> Tensor:
    """Zero the whole K-dim latent vector of random (instance, timestep) slots.

    Identity when not training or when p_drop is 0; masked positions are
    exact zeros, unmasked positions are bit-identical to the input.
    """
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
    if not training or p_drop == 0.0:
        return f
    if rng is None:
        raise ValueError("mask_latent needs an rng when dropping is active")
    b, _, length = f.shape
    keep = (rng.random((b, length)) >= p_drop).astype(f.dtype)  # B×L
    return mul(f, Tensor(keep[:, None, :]))
