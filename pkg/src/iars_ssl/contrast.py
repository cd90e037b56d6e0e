"""Temporal and instance contrastive losses over the overlap pyramid.

Both losses are InfoNCE-style with dot-product similarities. The positive
pair is the aligned (instance, timestep) slot across the two views; the
temporal loss draws negatives from other overlap timesteps of the same
instance, the instance loss from other batch instances at the same
timestep. Negatives come from the overlap region only, so numerator and
denominator live on the same index set at every pyramid level. Each loss
is symmetrized by averaging the two anchor directions, and is 0 by
definition when it has no negatives (single timestep, single instance).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .iars import canonical_index
from .numerics import (
    Tensor,
    add,
    diag_part,
    logaddexp,
    logsumexp,
    mask_fill,
    matmul,
    mean,
    mul,
    pool1d,
    sub,
    transpose,
)


@dataclass
class LossConfig:
    alpha: float = 0.5  # weight of the temporal term in the combined loss
    pool_mode: str = "max"
    include_unpooled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.pool_mode not in ("max", "avg"):
            raise ValueError(f"pool_mode must be 'max' or 'avg', got {self.pool_mode!r}")


@dataclass
class PyramidLevel:
    """One resolution of the overlap: the two pooled maps plus its losses."""

    f_o: Tensor  # B×K×l_k
    f_o_prime: Tensor  # B×K×l_k
    pooled_length: int
    canonical_index: int
    temporal_loss: Optional[Tensor] = None
    instance_loss: Optional[Tensor] = None
    combined_loss: Optional[Tensor] = None


def build_pyramid(f_o: Tensor, f_o_prime: Tensor, config: LossConfig) -> list[PyramidLevel]:
    """Halve both overlap maps with width-2 pooling until length 1.

    Level order is fine to coarse; the unpooled maps are level 0 when
    ``config.include_unpooled`` is set (a length-1 overlap always yields
    exactly one level).
    """
    if f_o.shape != f_o_prime.shape:
        raise ValueError(f"overlap extents differ: {f_o.shape} vs {f_o_prime.shape}")
    levels = []
    a, b = f_o, f_o_prime
    length = a.shape[2]
    if config.include_unpooled or length == 1:
        levels.append(PyramidLevel(a, b, length, canonical_index(length)))
    while length > 1:
        a = pool1d(a, config.pool_mode)
        b = pool1d(b, config.pool_mode)
        length = a.shape[2]
        levels.append(PyramidLevel(a, b, length, canonical_index(length)))
    return levels


def _check_finite(level: PyramidLevel) -> None:
    if np.isnan(level.f_o.data).any() or np.isnan(level.f_o_prime.data).any():
        raise ValueError("NaN in feature maps passed to a contrastive loss")


def _zero_like(level: PyramidLevel) -> Tensor:
    return Tensor(np.zeros((), dtype=level.f_o.dtype))


def _nce_direction(sim_cross: Tensor, sim_self: Tensor, self_mask: np.ndarray) -> Tensor:
    """One anchor direction: mean over anchors of logsumexp(logits) - positive.

    ``sim_cross`` rows are anchor-vs-other-view similarities (the diagonal is
    the positive), ``sim_self`` rows are anchor-vs-own-view with the anchor
    itself excluded via ``self_mask``.
    """
    pos = diag_part(sim_cross)
    lse = logaddexp(logsumexp(sim_cross, -1),
                    logsumexp(mask_fill(sim_self, self_mask, -np.inf), -1))
    return mean(sub(lse, pos))


def temporal_loss(level: PyramidLevel) -> Tensor:
    """Aligned timestamps are positives, other overlap timestamps negatives."""
    _check_finite(level)
    fa, fb = level.f_o, level.f_o_prime
    length = fa.shape[2]
    if length == 1:
        return _zero_like(level)  # no temporal negatives
    at = transpose(fa, (0, 2, 1))  # B×l×K
    bt = transpose(fb, (0, 2, 1))
    sim_ab = matmul(at, fb)  # B×l×l, [i,t,u] = fa[i,:,t]·fb[i,:,u]
    sim_aa = matmul(at, fa)
    sim_bb = matmul(bt, fb)
    sim_ba = transpose(sim_ab, (0, 2, 1))
    eye = np.eye(length, dtype=bool)
    loss_a = _nce_direction(sim_ab, sim_aa, eye)
    loss_b = _nce_direction(sim_ba, sim_bb, eye)
    return mul(add(loss_a, loss_b), 0.5)


def instance_loss(level: PyramidLevel) -> Tensor:
    """Same instance across views is the positive, other batch instances at
    the same timestep are negatives."""
    _check_finite(level)
    fa, fb = level.f_o, level.f_o_prime
    b = fa.shape[0]
    if b == 1:
        return _zero_like(level)  # no instance negatives
    fa_t = transpose(fa, (2, 0, 1))  # l×B×K
    fb_t = transpose(fb, (2, 0, 1))
    fb_tt = transpose(fb_t, (0, 2, 1))  # l×K×B
    sim_ab = matmul(fa_t, fb_tt)  # l×B×B, [t,i,j] = fa[i,:,t]·fb[j,:,t]
    sim_aa = matmul(fa_t, transpose(fa_t, (0, 2, 1)))
    sim_bb = matmul(fb_t, fb_tt)
    sim_ba = transpose(sim_ab, (0, 2, 1))
    eye = np.eye(b, dtype=bool)
    loss_a = _nce_direction(sim_ab, sim_aa, eye)
    loss_b = _nce_direction(sim_ba, sim_bb, eye)
    return mul(add(loss_a, loss_b), 0.5)


def combined_loss(level: PyramidLevel, alpha: float) -> Tensor:
    """alpha * temporal + (1 - alpha) * instance, caching all three on the level."""
    if level.temporal_loss is None:
        level.temporal_loss = temporal_loss(level)
    if level.instance_loss is None:
        level.instance_loss = instance_loss(level)
    level.combined_loss = add(mul(level.temporal_loss, alpha),
                              mul(level.instance_loss, 1.0 - alpha))
    return level.combined_loss


def hierarchical_loss(pyramid: list[PyramidLevel], alpha: float) -> Tensor:
    """Sum of combined losses over all levels: the baseline objective."""
    if not pyramid:
        raise ValueError("hierarchical_loss needs a nonempty pyramid")
    total = None
    for level in pyramid:
        term = combined_loss(level, alpha) if level.combined_loss is None else level.combined_loss
        total = term if total is None else add(total, term)
    return total
