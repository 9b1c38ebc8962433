"""Training loop and prediction.

The learning-rate schedule is cyclic: within a 100-epoch cycle the rate
halves every 20 epochs; at the cycle boundary it is multiplied by 14.4
instead of halved, so each cycle starts at exactly 90% of the previous
one (14.4 / 16 == 0.9 in IEEE doubles).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import RecordSegment, WindowedExample, normalize_window
from .model import BPNetModel, denormalize_targets, forward
from .nn import Tensor, adam_init, adam_step, mse_loss

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "lr_at_epoch",
    "train",
    "predict",
    "write_history",
]

DEFAULT_WINDOW_LEN = 1024
DEFAULT_WINDOW_STRIDE = 256


@dataclass
class TrainConfig:
    epochs: int
    base_lr: float = 0.001
    cycle_len_epochs: int = 100
    halving_period_epochs: int = 20
    cycle_boundary_multiplier: float = 14.4
    batch_size: int = 64
    loss: str = "mse"
    rng_seed: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.cycle_len_epochs < 1 or self.halving_period_epochs < 1:
            raise ValueError("cycle lengths must be positive")
        if self.cycle_len_epochs % self.halving_period_epochs != 0:
            raise ValueError("cycle_len_epochs must be a multiple of halving_period_epochs")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")


@dataclass
class TrainHistory:
    lr: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_parameters: list[np.ndarray] | None = None

    def epochs(self) -> int:
        return len(self.lr)


def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    """Piecewise-constant cyclic schedule.

    Cycle starts are computed by iterated multiplication with the exact
    per-cycle ratio; the within-cycle halvings divide by a power of two,
    which is exact in floating point.
    """
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    cycles, position = divmod(epoch, config.cycle_len_epochs)
    steps_per_cycle = config.cycle_len_epochs // config.halving_period_epochs
    ratio = config.cycle_boundary_multiplier / 2.0 ** (steps_per_cycle - 1)
    start = config.base_lr
    for _ in range(cycles):
        start *= ratio
    return start / 2.0 ** (position // config.halving_period_epochs)


def _stack_windows(windows: list[WindowedExample]):
    ecg = np.stack([w.ecg_window for w in windows])[:, None, :]
    ppg = np.stack([w.ppg_window for w in windows])[:, None, :]
    targets = np.stack(
        [np.stack([w.sbp_target, w.dbp_target]) for w in windows]
    )  # [n, 2, T]
    return ecg, ppg, targets


def _evaluate(model: BPNetModel, ecg, ppg, targets, batch_size: int) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(ecg), batch_size):
        hi = min(lo + batch_size, len(ecg))
        out = forward(model, Tensor(ecg[lo:hi]), Tensor(ppg[lo:hi]), training=False)
        loss = float(mse_loss(out, targets[lo:hi]).data)
        total += loss * (hi - lo)
        count += hi - lo
    return total / count


def train(model: BPNetModel, train_windows: list[WindowedExample],
          valid_windows: list[WindowedExample], config: TrainConfig) -> tuple[BPNetModel, TrainHistory]:
    """Mini-batch training with per-epoch shuffling and the cyclic
    learning-rate schedule; deterministic for a given seed on one thread.

    The last partial batch is kept. The best-validation parameter snapshot
    is recorded on the returned history.
    """
    if not train_windows:
        raise ValueError("empty training set")
    ecg, ppg, targets = _stack_windows(train_windows)
    valid = _stack_windows(valid_windows) if valid_windows else None
    params = model.parameters()
    state = adam_init(params)
    history = TrainHistory()
    best = np.inf
    for epoch in range(config.epochs):
        lr = lr_at_epoch(epoch, config)
        order = np.random.default_rng(config.rng_seed + epoch).permutation(len(train_windows))
        epoch_loss, seen = 0.0, 0
        for batch_index, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            out = forward(
                model,
                Tensor(ecg[idx]),
                Tensor(ppg[idx]),
                training=True,
                dropout_seed=(config.rng_seed * 1_000_003 + epoch) * 1_000_003 + batch_index,
            )
            loss = mse_loss(out, targets[idx])
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            model.zero_grads()
            loss.backward()
            adam_step(params, [p.grad for p in params], state, lr)
            epoch_loss += loss_value * len(idx)
            seen += len(idx)
        valid_loss = (
            _evaluate(model, *valid, config.batch_size) if valid is not None else float("nan")
        )
        if valid is not None and not np.isfinite(valid_loss):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        history.lr.append(lr)
        history.train_loss.append(epoch_loss / seen)
        history.valid_loss.append(valid_loss)
        if valid is not None and valid_loss < best:
            best = valid_loss
            history.best_epoch = epoch
            history.best_parameters = [p.data.copy() for p in params]
    return model, history


def write_history(path, history: TrainHistory):
    lines = ["epoch,lr,train_loss,valid_loss"]
    for epoch in range(history.epochs()):
        lines.append(
            f"{epoch},{history.lr[epoch]!r},{history.train_loss[epoch]!r},"
            f"{history.valid_loss[epoch]!r}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def predict(model: BPNetModel, segment: RecordSegment,
            window_len: int = DEFAULT_WINDOW_LEN) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample systolic/diastolic estimates in mmHg over a whole segment.

    The segment is covered by consecutive non-overlapping windows (the
    final one may be shorter); each window is normalized exactly as in
    training and the outputs are denormalized and concatenated.
    """
    n = len(segment)
    if n < 1:
        raise ValueError("empty segment")
    sbp = np.empty(n)
    dbp = np.empty(n)
    for start in range(0, n, window_len):
        sl = slice(start, min(start + window_len, n))
        ecg_w = normalize_window(segment.ecg[sl])[None, None, :]
        ppg_w = normalize_window(segment.ppg[sl])[None, None, :]
        out = forward(model, Tensor(ecg_w), Tensor(ppg_w), training=False).data
        sbp[sl], dbp[sl] = denormalize_targets(out[0, 0], out[0, 1])
    return sbp, dbp
