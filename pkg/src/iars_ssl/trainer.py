"""Training orchestration: the full-hierarchy baseline and the
importance-aware single-resolution mode, plus Adam and run reporting.

Both modes share the same per-batch front end (crop, encode-with-masking,
overlap slice, pyramid build) and consume augmentation randomness from the
same stream, so with equal seeds their crop plans, masks and batch orders
are identical; they differ only in which losses are gradient-tracked and
backpropagated. In hier mode every level's loss is tracked and their sum
is the objective. In iars mode all level losses are observed without
gradient tracking except the epoch's selected slot, whose loss is the sole
objective; at the end of each epoch its per-slot mean losses are scored
against the ledger, the next epoch's slot is sampled, and the ledger is
updated. Epoch records therefore store the distribution computed at the
*end* of that epoch (the one the next epoch's slot was drawn from).
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .augment import apply_crop, sample_crop
from .contrast import LossConfig, build_pyramid, combined_loss, hierarchical_loss
from .dataio import TimeSeriesDataset, batches
from .encoder import EncoderConfig, EncoderParams, encode, init_encoder, save_checkpoint, slice_overlap
from .iars import (
    ResolutionLedger,
    canonical_index,
    importance,
    pick_resolution,
    record_epoch,
    selected_loss,
)
from .numerics import GradTape, backward, no_grad


class NumericalError(RuntimeError):
    """Non-finite values where the training loop cannot continue."""


@dataclass
class TrainConfig:
    mode: str = "iars"  # "hier" trains every resolution, "iars" one per epoch
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 40
    alpha: float = 0.5
    pool_mode: str = "max"
    include_unpooled: bool = True
    mask_prob: float = 0.5
    embed_dim: int = 128
    hidden_dim: int = 64
    num_blocks: int = 8
    kernel_width: int = 3
    min_overlap_pow: int = 0
    shuffle: bool = True
    seed: int = 0
    precision: str = "f64"
    score_mode: str = "delta"
    double_softmax: bool = False

    def __post_init__(self):
        if self.mode not in ("hier", "iars"):
            raise ValueError(f"mode must be 'hier' or 'iars', got {self.mode!r}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be 'f32' or 'f64', got {self.precision!r}")

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha=self.alpha, pool_mode=self.pool_mode,
                          include_unpooled=self.include_unpooled)

    def encoder_config(self, input_dim: int) -> EncoderConfig:
        return EncoderConfig(input_dim=input_dim, hidden_dim=self.hidden_dim,
                             output_dim=self.embed_dim, num_blocks=self.num_blocks,
                             kernel_width=self.kernel_width, seed=self.seed)


@dataclass
class EpochRecord:
    epoch: int
    seconds: float
    objective: float  # mean objective value over batches
    slot_losses: dict  # k -> mean combined loss observed this epoch
    first_batch_losses: dict  # per-slot losses of the first batch, pre-update
    n_batches: int
    n_backward: int
    n_tracked_losses: int
    pyramid_depths: list
    crop_plans: list  # (a_start, a_end, b_start, b_end) per batch
    batch_order_digest: str
    aug_state_digest: str
    selected_k: Optional[int] = None  # iars: slot trained this epoch
    fallback_count: int = 0
    slot_deltas: Optional[dict] = None  # iars: end-of-epoch scores vs ledger
    slot_probs: Optional[dict] = None  # iars: distribution the next slot was drawn from


@dataclass
class RunReport:
    config: dict
    environment: dict
    epochs: list
    totals: dict

    def to_dict(self) -> dict:
        out = {"config": self.config, "environment": self.environment,
               "totals": self.totals, "epochs": []}
        for rec in self.epochs:
            d = asdict(rec)
            for key in ("slot_losses", "first_batch_losses", "slot_deltas", "slot_probs"):
                if d[key] is not None:
                    d[key] = {str(k): v for k, v in sorted(d[key].items())}
            out["epochs"].append(d)
        return out

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @staticmethod
    def load_json(path) -> "RunReport":
        raw = json.loads(Path(path).read_text())
        epochs = []
        for d in raw["epochs"]:
            for key in ("slot_losses", "first_batch_losses", "slot_deltas", "slot_probs"):
                if d[key] is not None:
                    d[key] = {int(k): v for k, v in d[key].items()}
            d["crop_plans"] = [tuple(p) for p in d["crop_plans"]]
            epochs.append(EpochRecord(**d))
        return RunReport(config=raw["config"], environment=raw["environment"],
                         epochs=epochs, totals=raw["totals"])

    def save_csv(self, path) -> None:
        """Per-epoch per-slot metrics: loss, delta, probability, selected flag."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "slot", "loss", "delta", "probability", "selected", "seconds"])
            for rec in self.epochs:
                deltas = rec.slot_deltas or {}
                probs = rec.slot_probs or {}
                for k in sorted(rec.slot_losses):
                    selected = 1 if (rec.selected_k is None or k == rec.selected_k) else 0
                    writer.writerow([
                        rec.epoch, k, repr(rec.slot_losses[k]),
                        repr(deltas[k]) if k in deltas else "",
                        repr(probs[k]) if k in probs else "",
                        selected, repr(rec.seconds),
                    ])


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int
    m: list
    v: list


def init_adam(params: list) -> AdamState:
    return AdamState(step=0,
                     m=[np.zeros_like(p.data) for p in params],
                     v=[np.zeros_like(p.data) for p in params])


def adam_step(params: list, grads: list, state: AdamState, learning_rate: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected adaptive moment update; parameters are rebound, not
    mutated in place, so earlier tape references stay valid."""
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        elif np.isnan(g).any():
            raise NumericalError("NaN gradient in optimizer step")
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.data = p.data - learning_rate * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# epoch loops


@dataclass
class RngStreams:
    """Independent child streams so mode-specific draws (scheduler) cannot
    shift the data/augmentation streams shared by both modes."""

    batch: np.random.Generator
    augment: np.random.Generator
    scheduler: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        return cls(
            batch=np.random.default_rng(np.random.SeedSequence([seed, 1])),
            augment=np.random.default_rng(np.random.SeedSequence([seed, 2])),
            scheduler=np.random.default_rng(np.random.SeedSequence([seed, 3])),
        )


def _digest(obj) -> str:
    return hashlib.md5(repr(obj).encode()).hexdigest()[:16]


def _batch_front_end(batch, plan, params, config, rngs):
    """Crop, encode both views with masking, slice the aligned overlap."""
    view_a, view_b = apply_crop(batch, plan)
    f_a = encode(view_a, params, mask_prob=config.mask_prob, rng=rngs.augment, training=True)
    f_b = encode(view_b, params, mask_prob=config.mask_prob, rng=rngs.augment, training=True)
    return slice_overlap(f_a, f_b, plan)


def _check_finite(value: float, what: str, epoch: int) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what} ({value}) in epoch {epoch}; aborting run")
    return value


class _SlotMeans:
    def __init__(self):
        self.sums: dict = {}
        self.counts: dict = {}

    def add(self, k: int, value: float) -> None:
        self.sums[k] = self.sums.get(k, 0.0) + value
        self.counts[k] = self.counts.get(k, 0) + 1

    def means(self) -> dict:
        return {k: self.sums[k] / self.counts[k] for k in self.sums}


def _backward_and_step(objective, tape, params, opt_state, config) -> int:
    """Backprop (when the objective carries gradients) and take one Adam step.

    A fully degenerate batch (e.g. a single instance at the length-1 level)
    yields a constant objective; its gradient is exactly zero, so the step
    runs with zero gradients and no backward pass is counted.
    """
    if objective.requires_grad:
        backward(objective, tape)
        grads = [p.grad for p in params.tensors()]
        did_backward = 1
    else:
        grads = [None] * len(params.tensors())
        did_backward = 0
    adam_step(params.tensors(), grads, opt_state, config.learning_rate)
    return did_backward


def train_epoch_hier(params: EncoderParams, data: TimeSeriesDataset, config: TrainConfig,
                     rngs: RngStreams, opt_state: AdamState, epoch: int) -> EpochRecord:
    """One epoch on the full hierarchical objective (sum over all levels)."""
    loss_cfg = config.loss_config()
    epoch_batches = batches(data, config.batch_size,
                            seed=int(rngs.batch.integers(2 ** 63)), shuffle=config.shuffle)
    slot_means = _SlotMeans()
    first_batch_losses: dict = {}
    objective_sum = 0.0
    crop_plans, depths = [], []
    n_backward = n_tracked = 0
    for b_idx, batch in enumerate(epoch_batches):
        plan = sample_crop(data.length, config.min_overlap_pow, rngs.augment)
        crop_plans.append((plan.a_start, plan.a_end, plan.b_start, plan.b_end))
        tape = GradTape()
        with tape:
            f_o, f_o_prime = _batch_front_end(batch, plan, params, config, rngs)
            pyramid = build_pyramid(f_o, f_o_prime, loss_cfg)
            objective = hierarchical_loss(pyramid, config.alpha)
        n_tracked += sum(1 for lv in pyramid if lv.combined_loss.requires_grad)
        depths.append(len(pyramid))
        objective_sum += _check_finite(objective.item(), "hierarchical loss", epoch)
        for level in pyramid:
            value = _check_finite(level.combined_loss.item(), "level loss", epoch)
            slot_means.add(level.canonical_index, value)
            if b_idx == 0:
                first_batch_losses[level.canonical_index] = value
        params.zero_grad()
        n_backward += _backward_and_step(objective, tape, params, opt_state, config)
    return EpochRecord(
        epoch=epoch, seconds=0.0,
        objective=objective_sum / len(epoch_batches),
        slot_losses=slot_means.means(), first_batch_losses=first_batch_losses,
        n_batches=len(epoch_batches), n_backward=n_backward, n_tracked_losses=n_tracked,
        pyramid_depths=depths, crop_plans=crop_plans,
        batch_order_digest=_digest([b.indices.tolist() for b in epoch_batches]),
        aug_state_digest=_digest(rngs.augment.bit_generator.state),
    )


def train_epoch_iars(params: EncoderParams, ledger: ResolutionLedger, data: TimeSeriesDataset,
                     config: TrainConfig, rngs: RngStreams, opt_state: AdamState,
                     epoch: int, selected_k: int) -> tuple[EpochRecord, int]:
    """One epoch training only ``selected_k``; returns the next epoch's slot.

    All level losses are still observed (without gradient tracking) so the
    ledger can be refreshed; only the selected slot's loss is recomputed on
    the tape and backpropagated. When a batch's pyramid is too shallow for
    ``selected_k`` the nearest coarser slot substitutes for that batch.
    """
    loss_cfg = config.loss_config()
    epoch_batches = batches(data, config.batch_size,
                            seed=int(rngs.batch.integers(2 ** 63)), shuffle=config.shuffle)
    slot_means = _SlotMeans()
    first_batch_losses: dict = {}
    objective_sum = 0.0
    crop_plans, depths = [], []
    n_backward = n_tracked = fallback_count = 0
    for b_idx, batch in enumerate(epoch_batches):
        plan = sample_crop(data.length, config.min_overlap_pow, rngs.augment)
        crop_plans.append((plan.a_start, plan.a_end, plan.b_start, plan.b_end))
        tape = GradTape()
        with tape:
            f_o, f_o_prime = _batch_front_end(batch, plan, params, config, rngs)
            pyramid = build_pyramid(f_o, f_o_prime, loss_cfg)
        depths.append(len(pyramid))
        # canonical slots of a pyramid are exactly {0..top}, so the nearest
        # coarser substitute for a missing slot is the top slot itself
        top_k = max(level.canonical_index for level in pyramid)
        k_batch = min(selected_k, top_k)
        if k_batch != selected_k:
            fallback_count += 1
        with no_grad():
            for level in pyramid:
                if level.canonical_index != k_batch:
                    combined_loss(level, config.alpha)
        with tape:
            for level in pyramid:
                if level.canonical_index == k_batch:
                    combined_loss(level, config.alpha)
            objective = selected_loss(pyramid, k_batch)
        n_tracked += 1 if objective.requires_grad else 0
        objective_sum += _check_finite(objective.item(), "selected loss", epoch)
        for level in pyramid:
            value = _check_finite(level.combined_loss.item(), "level loss", epoch)
            slot_means.add(level.canonical_index, value)
            if b_idx == 0:
                first_batch_losses[level.canonical_index] = value
        params.zero_grad()
        n_backward += _backward_and_step(objective, tape, params, opt_state, config)
    observed = slot_means.means()
    dist = importance(observed, ledger, score_mode=config.score_mode,
                      double_softmax=config.double_softmax)
    next_k = pick_resolution(dist, rngs.scheduler)
    record_epoch(ledger, observed, epoch)
    record = EpochRecord(
        epoch=epoch, seconds=0.0,
        objective=objective_sum / len(epoch_batches),
        slot_losses=observed, first_batch_losses=first_batch_losses,
        n_batches=len(epoch_batches), n_backward=n_backward, n_tracked_losses=n_tracked,
        pyramid_depths=depths, crop_plans=crop_plans,
        batch_order_digest=_digest([b.indices.tolist() for b in epoch_batches]),
        aug_state_digest=_digest(rngs.augment.bit_generator.state),
        selected_k=selected_k, fallback_count=fallback_count,
        slot_deltas=dict(zip(dist.candidates, dist.deltas.tolist())),
        slot_probs=dict(zip(dist.candidates, dist.probabilities.tolist())),
    )
    return record, next_k


def _environment(config: TrainConfig) -> dict:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "precision": config.precision,
        "threads": None,  # CLI fills this in when it pins a thread count
    }


def fit(dataset: TimeSeriesDataset, config: TrainConfig,
        out_dir=None) -> tuple[EncoderParams, Optional[ResolutionLedger], RunReport]:
    """Run the configured mode for ``config.epochs`` epochs.

    Returns the trained parameters, the resolution ledger (iars mode only)
    and the run report. When ``out_dir`` is given, a checkpoint plus
    ``report.json`` / ``report.csv`` are persisted there.
    """
    if dataset.n == 0:
        raise ValueError("fit needs a nonempty dataset")
    dtype = np.float32 if config.precision == "f32" else np.float64
    data = replace(dataset, values=dataset.values.astype(dtype))
    params = init_encoder(config.encoder_config(data.d))
    if dtype is np.float32:
        params = params.astype(dtype)
    opt_state = init_adam(params.tensors())
    rngs = RngStreams.from_seed(config.seed)

    ledger: Optional[ResolutionLedger] = None
    selected_k = None
    if config.mode == "iars":
        ledger = ResolutionLedger()
        # epoch 0 has no deltas yet: uniform over every possible slot
        k_max = canonical_index(data.length)
        selected_k = int(rngs.scheduler.integers(0, k_max + 1))

    records = []
    t_start = time.perf_counter()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        if config.mode == "hier":
            record = train_epoch_hier(params, data, config, rngs, opt_state, epoch)
        else:
            record, selected_k = train_epoch_iars(params, ledger, data, config,
                                                  rngs, opt_state, epoch, selected_k)
        record.seconds = time.perf_counter() - t0
        records.append(record)
    total_seconds = time.perf_counter() - t_start

    report = RunReport(
        config=asdict(config),
        environment=_environment(config),
        epochs=records,
        totals={"train_seconds": total_seconds,
                "backward_passes": int(np.sum([r.n_backward for r in records]))},
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(params, out)
        report.save_json(out / "report.json")
        report.save_csv(out / "report.csv")
    return params, ledger, report
