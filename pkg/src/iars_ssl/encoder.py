"""Residual 1-D convolutional encoder producing per-timestep feature maps.

A raw view B×D×L is projected per timestep into a constant-width hidden
space, optionally masked (training only), passed through a stack of
residual units ``y = x + conv1d(relu(x))`` with same-length padding, and
projected to the K-dim output. The temporal extent is preserved end to
end, so every output column is the embedding of one input timestep.

Feature maps are plain ``numerics.Tensor`` values of shape B×K×L; gradient
lineage is carried by the active tape.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import CropPlan, mask_latent
from .numerics import Tensor, add, conv1d, narrow, relu

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class EncoderConfig:
    input_dim: int
    hidden_dim: int = 64
    output_dim: int = 128
    num_blocks: int = 8
    kernel_width: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.kernel_width % 2 == 0:
            raise ValueError(f"kernel_width must be odd, got {self.kernel_width}")
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise ValueError("all encoder dimensions must be positive")


@dataclass
class EncoderParams:
    """All trainable kernels; every tensor has requires_grad set."""

    input_proj: Tensor  # hidden×D×1
    blocks: list  # each hidden×hidden×w
    output_proj: Tensor  # K×hidden×1
    config: EncoderConfig

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("input_proj", self.input_proj)]
        out += [(f"block_{i}", b) for i, b in enumerate(self.blocks)]
        out.append(("output_proj", self.output_proj))
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(
            input_proj=self.input_proj.astype(dtype),
            blocks=[b.astype(dtype) for b in self.blocks],
            output_proj=self.output_proj.astype(dtype),
            config=self.config,
        )


def _fan_in_uniform(rng: np.random.Generator, shape: tuple) -> Tensor:
    # shape = (c_out, c_in, w); scaled uniform with fan-in = c_in * w
    bound = 1.0 / np.sqrt(shape[1] * shape[2])
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_encoder(config: EncoderConfig) -> EncoderParams:
    """Fan-in scaled uniform init, deterministic per config.seed."""
    rng = np.random.default_rng(config.seed)
    input_proj = _fan_in_uniform(rng, (config.hidden_dim, config.input_dim, 1))
    blocks = [_fan_in_uniform(rng, (config.hidden_dim, config.hidden_dim, config.kernel_width))
              for _ in range(config.num_blocks)]
    output_proj = _fan_in_uniform(rng, (config.output_dim, config.hidden_dim, 1))
    return EncoderParams(input_proj=input_proj, blocks=blocks,
                         output_proj=output_proj, config=config)


def encode(view: Tensor, params: EncoderParams, mask_prob: float = 0.0,
           rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Map a view B×D×L to a feature map B×K×L."""
    if view.data.ndim != 3 or view.shape[1] != params.config.input_dim:
        raise ValueError(f"expected B×{params.config.input_dim}×L input, got shape {view.shape}")
    h = conv1d(view, params.input_proj)
    if training:
        h = mask_latent(h, mask_prob, rng, training=True)
    for blk in params.blocks:
        h = add(h, conv1d(relu(h), blk))
    return conv1d(h, params.output_proj)


def slice_overlap(f_a: Tensor, f_b: Tensor, plan: CropPlan) -> tuple[Tensor, Tensor]:
    """Aligned overlap slices of two view feature maps.

    Timestep t of both outputs corresponds to the same absolute raw
    timestep, which is what makes positive pairs well defined.
    """
    if f_a.shape[2] != plan.a_end - plan.a_start or f_b.shape[2] != plan.b_end - plan.b_start:
        raise ValueError(
            f"feature map extents {f_a.shape[2]}/{f_b.shape[2]} do not match plan {plan}")
    ov = plan.overlap_length
    f_o = narrow(f_a, 2, plan.overlap_start - plan.a_start, ov)
    f_o_prime = narrow(f_b, 2, plan.overlap_start - plan.b_start, ov)
    return f_o, f_o_prime


# ---------------------------------------------------------------------------
# checkpointing: flat binary of parameter values + JSON sidecar with shapes


def save_checkpoint(params: EncoderParams, directory, stem: str = "checkpoint") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    named = params.named_tensors()
    dtype = named[0][1].data.dtype
    blob = b"".join(np.ascontiguousarray(t.data, dtype=dtype).tobytes() for _, t in named)
    (directory / f"{stem}.bin").write_bytes(blob)
    sidecar = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "dtype": dtype.name,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in named],
        "encoder_config": asdict(params.config),
    }
    (directory / f"{stem}.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return directory / f"{stem}.json"


def load_checkpoint(directory, stem: str = "checkpoint") -> EncoderParams:
    directory = Path(directory)
    sidecar = json.loads((directory / f"{stem}.json").read_text())
    if sidecar.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {sidecar.get('format_version')}")
    dtype = np.dtype(sidecar["dtype"])
    blob = (directory / f"{stem}.bin").read_bytes()
    tensors = {}
    offset = 0
    for entry in sidecar["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
        offset += count * dtype.itemsize
        tensors[entry["name"]] = Tensor(arr, requires_grad=True)
    config = EncoderConfig(**sidecar["encoder_config"])
    blocks = [tensors[f"block_{i}"] for i in range(config.num_blocks)]
    return EncoderParams(input_proj=tensors["input_proj"], blocks=blocks,
                         output_proj=tensors["output_proj"], config=config)
