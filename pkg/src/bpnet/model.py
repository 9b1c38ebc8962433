"""Network assembly: per-signal 1x1 input stems, channel concatenation,
a stack of dilated-causal residual blocks, and the two-channel head that
emits per-sample normalized systolic/diastolic estimates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .nn import (
    Conv1dLayer,
    Tensor,
    add,
    causal_dilated_conv,
    concat_channels,
    conv1d_layer,
    dropout,
    elu,
)

__all__ = [
    "ModelConfig",
    "ResidualBlock",
    "BPNetModel",
    "build_bpnet",
    "forward",
    "receptive_field_total",
    "parameter_count",
    "save_checkpoint",
    "load_checkpoint",
    "normalize_targets",
    "denormalize_targets",
    "SBP_RANGE_MMHG",
    "DBP_RANGE_MMHG",
]

# Fixed target scaling: pressures are min-max normalized to [0, 1] before
# the loss and denormalized for reporting. The ranges cover the physio-
# logically plausible support with headroom.
SBP_RANGE_MMHG = (50.0, 220.0)
DBP_RANGE_MMHG = (30.0, 150.0)

CHECKPOINT_MAGIC = "bpnet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    kernel_size: int = 5
    dilations: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    block_channels: list[int] = field(default_factory=lambda: [32, 32, 64, 64, 128, 256])
    input_stem_channels: int = 32
    head_channels: int = 256
    output_channels: int = 2
    dropout_rate: float = 0.2

    def __post_init__(self):
        if len(self.dilations) != len(self.block_channels):
            raise ValueError("dilations and block_channels must have equal length")
        values = (
            [self.kernel_size, self.input_stem_channels, self.head_channels,
             self.output_channels]
            + list(self.dilations)
            + list(self.block_channels)
        )
        if any(v < 1 for v in values):
            raise ValueError("config values must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass
class ResidualBlock:
    """Two weight-normalized dilated causal convolutions with ELU and
    dropout, plus a skip connection; a 1x1 projection aligns channel
    counts when input and output widths differ."""

    conv1: Conv1dLayer
    conv2: Conv1dLayer
    dropout_rate: float
    projection: Conv1dLayer | None = None

    def parameters(self) -> list[Tensor]:
        params = self.conv1.parameters() + self.conv2.parameters()
        if self.projection is not None:
            params += self.projection.parameters()
        return params

    def forward(self, x: Tensor, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        h = dropout(elu(self.conv1(x)), self.dropout_rate, training, rng)
        h = dropout(elu(self.conv2(h)), self.dropout_rate, training, rng)
        skip = self.projection(x) if self.projection is not None else x
        return elu(add(skip, h))


@dataclass
class BPNetModel:
    ecg_stem: Conv1dLayer
    ppg_stem: Conv1dLayer
    blocks: list[ResidualBlock]
    head_conv1: Conv1dLayer
    head_conv2: Conv1dLayer
    config: ModelConfig

    def parameters(self) -> list[Tensor]:
        params = self.ecg_stem.parameters() + self.ppg_stem.parameters()
        for block in self.blocks:
            params += block.parameters()
        return params + self.head_conv1.parameters() + self.head_conv2.parameters()

    def zero_grads(self):
        for p in self.parameters():
            p.grad = None

    def forward(self, ecg: Tensor, ppg: Tensor, training: bool = False,
                dropout_seed: int = 0) -> Tensor:
        return forward(self, ecg, ppg, training=training, dropout_seed=dropout_seed)


def build_bpnet(config: ModelConfig, rng_seed: int = 0) -> BPNetModel:
    """Deterministically initialized network for a given seed."""
    rng = np.random.default_rng(rng_seed)
    r = config.kernel_size
    stem_ch = config.input_stem_channels
    ecg_stem = conv1d_layer(1, stem_ch, 1, 1, rng)
    ppg_stem = conv1d_layer(1, stem_ch, 1, 1, rng)
    blocks = []
    in_ch = 2 * stem_ch
    for dilation, out_ch in zip(config.dilations, config.block_channels):
        conv1 = conv1d_layer(in_ch, out_ch, r, dilation, rng)
        conv2 = conv1d_layer(out_ch, out_ch, r, dilation, rng)
        projection = conv1d_layer(in_ch, out_ch, 1, 1, rng) if in_ch != out_ch else None
        blocks.append(ResidualBlock(conv1, conv2, config.dropout_rate, projection))
        in_ch = out_ch
    head_conv1 = conv1d_layer(in_ch, config.head_channels, 1, 1, rng)
    head_conv2 = conv1d_layer(config.head_channels, config.output_channels, 1, 1, rng)
    return BPNetModel(ecg_stem, ppg_stem, blocks, head_conv1, head_conv2, config)


def forward(model: BPNetModel, ecg: Tensor, ppg: Tensor, training: bool = False,
            dropout_seed: int = 0) -> Tensor:
    """Run the network on [batch, 1, T] inputs; output is [batch, 2, T]
    with row 0 the normalized systolic and row 1 the normalized diastolic
    estimate per sample. Causality holds end to end."""
    ecg, ppg = _as_input(ecg), _as_input(ppg)
    if ecg.data.shape != ppg.data.shape:
        raise ValueError("ecg and ppg must share batch size and length")
    # one generator per forward pass keeps dropout deterministic per seed
    rng = np.random.default_rng((0x62706E74, dropout_seed)) if training else None
    h = concat_channels([
        causal_dilated_conv(ecg, model.ecg_stem),
        causal_dilated_conv(ppg, model.ppg_stem),
    ])
    for block in model.blocks:
        h = block.forward(h, training=training, rng=rng)
    h = elu(causal_dilated_conv(h, model.head_conv1))
    return elu(causal_dilated_conv(h, model.head_conv2))


def _as_input(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.data.ndim != 3:
        raise ValueError("inputs must be [batch, channels, time]")
    return t


def receptive_field_total(config: ModelConfig) -> int:
    """1 + sum over blocks of 2 (R-1) L: two dilated convolutions per
    block; the 1x1 stems and head add nothing."""
    r = config.kernel_size
    return 1 + sum(2 * (r - 1) * dilation for dilation in config.dilations)


def parameter_count(model: BPNetModel) -> int:
    return sum(p.data.size for p in model.parameters())


# --- checkpointing ----------------------------------------------------------


def _named_parameters(model: BPNetModel) -> dict[str, Tensor]:
    def layer_entries(name: str, layer: Conv1dLayer):
        return {
            f"{name}.v": layer.kernel_direction_v,
            f"{name}.g": layer.gain_g,
            f"{name}.b": layer.bias,
        }

    named: dict[str, Tensor] = {}
    named.update(layer_entries("ecg_stem", model.ecg_stem))
    named.update(layer_entries("ppg_stem", model.ppg_stem))
    for k, block in enumerate(model.blocks):
        named.update(layer_entries(f"blocks.{k}.conv1", block.conv1))
        named.update(layer_entries(f"blocks.{k}.conv2", block.conv2))
        if block.projection is not None:
            named.update(layer_entries(f"blocks.{k}.projection", block.projection))
    named.update(layer_entries("head_conv1", model.head_conv1))
    named.update(layer_entries("head_conv2", model.head_conv2))
    return named


def save_checkpoint(model: BPNetModel, path):
    """Versioned JSON checkpoint; float round-trip is bit-exact."""
    payload = {
        "format": CHECKPOINT_MAGIC,
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "parameters": {name: t.data.tolist() for name, t in _named_parameters(model).items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> BPNetModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValueError(f"corrupt checkpoint: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_MAGIC:
        raise ValueError("incompatible checkpoint: missing magic")
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"incompatible checkpoint: format version {version!r}")
    model = build_bpnet(ModelConfig(**payload["config"]))
    named = _named_parameters(model)
    stored = payload["parameters"]
    if set(stored) != set(named):
        raise ValueError("incompatible checkpoint: parameter set mismatch")
    for name, tensor in named.items():
        values = np.asarray(stored[name], dtype=np.float64)
        if values.shape != tensor.data.shape:
            raise ValueError(f"incompatible checkpoint: shape mismatch for {name}")
        tensor.data = values
    return model


# --- target scaling ---------------------------------------------------------


def normalize_targets(sbp_mmhg, dbp_mmhg):
    """Map pressures onto [0, 1] with the fixed module-level ranges."""
    sbp = (np.asarray(sbp_mmhg, dtype=np.float64) - SBP_RANGE_MMHG[0]) / (
        SBP_RANGE_MMHG[1] - SBP_RANGE_MMHG[0]
    )
    dbp = (np.asarray(dbp_mmhg, dtype=np.float64) - DBP_RANGE_MMHG[0]) / (
        DBP_RANGE_MMHG[1] - DBP_RANGE_MMHG[0]
    )
    return sbp, dbp


def denormalize_targets(sbp_unit, dbp_unit):
    sbp = np.asarray(sbp_unit, dtype=np.float64) * (SBP_RANGE_MMHG[1] - SBP_RANGE_MMHG[0]) + SBP_RANGE_MMHG[0]
    dbp = np.asarray(dbp_unit, dtype=np.float64) * (DBP_RANGE_MMHG[1] - DBP_RANGE_MMHG[0]) + DBP_RANGE_MMHG[0]
    return sbp, dbp
