"""Importance-aware resolution selection.

Resolutions are aligned across epochs from the coarse end: the length-1
level is always slot 0 no matter how long the epoch's overlap was, so slot
k holds the resolutions of pooled length in (2**(k-1), 2**k]. A ledger
keeps each slot's last observed loss; the importance score of a slot is
its loss delta against that ledger value. Rising or flat losses (the
resolutions that are not being indirectly co-trained) get the largest
probabilities, one slot is sampled per epoch, and only that slot's loss is
backpropagated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .numerics import Tensor, softmax


def canonical_index(pooled_length: int) -> int:
    """ceil(log2(length)) with slot 0 for length 1; exact integer math."""
    if pooled_length < 1:
        raise ValueError(f"pooled length must be >= 1, got {pooled_length}")
    return int(pooled_length - 1).bit_length()


@dataclass
class LedgerSlot:
    last_loss: float
    last_epoch: int


@dataclass
class ResolutionLedger:
    """Last observed loss per canonical slot, carried across epochs.

    Slots missing from an epoch keep their previous value (the absent-value
    filling), so a delta can always be formed once a slot has been seen.
    """

    slots: dict = field(default_factory=dict)  # k -> LedgerSlot

    def last_loss(self, k: int) -> Optional[float]:
        slot = self.slots.get(k)
        return slot.last_loss if slot is not None else None

    def as_dict(self) -> dict:
        return {k: {"last_loss": s.last_loss, "last_epoch": s.last_epoch}
                for k, s in sorted(self.slots.items())}


def record_epoch(ledger: ResolutionLedger, observed: Mapping[int, float],
                 epoch: int) -> ResolutionLedger:
    """Overwrite observed slots with this epoch's mean losses; leave the rest."""
    for k, loss in observed.items():
        loss = float(loss)
        if not np.isfinite(loss):
            raise ValueError(f"non-finite loss {loss} for slot {k}")
        if loss < 0:
            raise ValueError(f"negative loss {loss} for slot {k}")
        prev = ledger.slots.get(k)
        if prev is not None and epoch < prev.last_epoch:
            raise ValueError(f"epoch {epoch} older than slot {k}'s last epoch {prev.last_epoch}")
        ledger.slots[k] = LedgerSlot(last_loss=loss, last_epoch=epoch)
    return ledger


@dataclass
class ImportanceDistribution:
    candidates: list  # canonical indices observed this epoch, sorted
    probabilities: np.ndarray  # aligned to candidates, positive, sums to 1
    deltas: np.ndarray  # the scores the probabilities came from


def importance(current: Mapping[int, float], ledger: ResolutionLedger,
               score_mode: str = "delta", double_softmax: bool = False) -> ImportanceDistribution:
    """Softmax distribution over the slots observed in the current epoch.

    ``score_mode='delta'`` scores each candidate by current loss minus the
    ledger's previous value (0 when the slot has never been recorded);
    ``'level'`` scores by the raw current loss instead. ``double_softmax``
    reproduces the literal two-step normalization (softmax of the softmax),
    which compresses the distribution toward uniform.
    """
    if not current:
        raise ValueError("importance needs at least one observed resolution")
    if score_mode not in ("delta", "level"):
        raise ValueError(f"score_mode must be 'delta' or 'level', got {score_mode!r}")
    candidates = sorted(current)
    if score_mode == "delta":
        scores = np.array([current[k] - prev if (prev := ledger.last_loss(k)) is not None else 0.0
                           for k in candidates], dtype=np.float64)
    else:
        scores = np.array([current[k] for k in candidates], dtype=np.float64)
    probs = softmax(scores)
    if double_softmax:
        probs = softmax(probs)
    return ImportanceDistribution(candidates=candidates, probabilities=probs, deltas=scores)


def pick_resolution(dist: ImportanceDistribution, rng: np.random.Generator) -> int:
    """Inverse-CDF sample from the distribution using one uniform draw."""
    cdf = np.cumsum(dist.probabilities)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return dist.candidates[min(idx, len(dist.candidates) - 1)]


def selected_loss(pyramid: Sequence, k: int) -> Tensor:
    """The chosen slot's combined loss: the sole training objective L^a."""
    for level in pyramid:
        if level.canonical_index == k:
            if level.combined_loss is None:
                raise ValueError(f"combined loss of slot {k} has not been computed")
            return level.combined_loss
    raise KeyError(f"no pyramid level with canonical index {k} "
                   f"(present: {[lv.canonical_index for lv in pyramid]})")
