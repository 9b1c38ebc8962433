"""Dataset handling: aligned ECG/PPG/ABP records, per-sample pressure
targets derived from the ABP waveform, chronological splitting, window
assembly, and a synthetic subject generator for desk-scale experiments.

Record CSV format: header exactly ``t,ecg,ppg,abp``, one row per sample at
125 Hz, ``t`` in seconds strictly increasing by 0.008, decimal floats,
UTF-8, LF line endings. A dataset directory holds one ``<subject_id>.csv``
per subject plus a ``manifest.csv`` with columns ``subject_id,ecg_lead``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .model import normalize_targets
from .signals import SignalVector, mu_law

__all__ = [
    "SubjectRecord",
    "TargetSeries",
    "RecordSegment",
    "WindowedExample",
    "SplitSpec",
    "load_record",
    "save_record",
    "load_manifest",
    "save_manifest",
    "load_dataset",
    "extract_bp_targets",
    "split_record",
    "make_windows",
    "normalize_window",
    "synth_subject",
]

SAMPLE_RATE_HZ = 125.0
_DT = 1.0 / SAMPLE_RATE_HZ

MIN_BEAT_SPACING_S = 0.33   # >= 180 bpm rejected
MIN_BEAT_PROMINENCE = 10.0  # mmHg
PRESSURE_SANITY_MMHG = (20.0, 260.0)


@dataclass
class SubjectRecord:
    """One subject's aligned waveforms at 125 Hz."""

    subject_id: str
    ecg_lead: str
    ecg: SignalVector
    ppg: SignalVector
    abp: SignalVector

    def __post_init__(self):
        lengths = {len(self.ecg), len(self.ppg), len(self.abp)}
        if len(lengths) != 1:
            raise ValueError("ecg/ppg/abp must have equal lengths")
        rates = {self.ecg.sample_rate_hz, self.ppg.sample_rate_hz, self.abp.sample_rate_hz}
        if rates != {SAMPLE_RATE_HZ}:
            raise ValueError(f"record signals must be sampled at {SAMPLE_RATE_HZ} Hz")

    def __len__(self):
        return len(self.ecg)


@dataclass
class TargetSeries:
    """Per-sample systolic/diastolic pressures in mmHg."""

    sbp: np.ndarray
    dbp: np.ndarray

    def __post_init__(self):
        self.sbp = np.asarray(self.sbp, dtype=np.float64)
        self.dbp = np.asarray(self.dbp, dtype=np.float64)
        if self.sbp.shape != self.dbp.shape:
            raise ValueError("sbp/dbp length mismatch")
        if np.any(self.sbp < self.dbp):
            raise ValueError("sbp must dominate dbp pointwise")
        lo, hi = PRESSURE_SANITY_MMHG
        if self.sbp.size and (self.dbp.min() < lo or self.sbp.max() > hi):
            raise ValueError("pressure outside sanity band")

    def __len__(self):
        return self.sbp.size


@dataclass
class RecordSegment:
    """A contiguous chronological slice of a record plus aligned targets."""

    subject_id: str
    start_index: int
    ecg: np.ndarray
    ppg: np.ndarray
    sbp: np.ndarray
    dbp: np.ndarray

    def __len__(self):
        return self.ecg.size


@dataclass
class WindowedExample:
    """A training example: companded inputs and unit-scaled targets."""

    ecg_window: np.ndarray
    ppg_window: np.ndarray
    sbp_target: np.ndarray
    dbp_target: np.ndarray
    subject_id: str
    start_index: int


@dataclass
class SplitSpec:
    train_fraction: float = 0.70
    valid_fraction: float = 0.10
    test_fraction: float = 0.20

    def __post_init__(self):
        fractions = (self.train_fraction, self.valid_fraction, self.test_fraction)
        if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must be nonnegative and sum to 1")


# --- record I/O -------------------------------------------------------------

_COLUMNS = ("t", "ecg", "ppg", "abp")


def load_record(path, subject_id: str | None = None, ecg_lead: str = "II") -> SubjectRecord:
    """Parse a record CSV, validating schema, sample spacing and values.

    Errors cite the file line number (the header is line 1).
    """
    path = Path(path)
    rows = {name: [] for name in _COLUMNS}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path.name}: empty file") from None
        if tuple(header) != _COLUMNS:
            missing = [c for c in _COLUMNS if c not in header]
            if missing:
                raise ValueError(f"{path.name}: missing column '{missing[0]}'")
            raise ValueError(f"{path.name}: bad header {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(_COLUMNS):
                raise ValueError(f"{path.name}: line {line_no}: expected 4 fields, got {len(row)}")
            for name, cell in zip(_COLUMNS, row):
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(f"{path.name}: line {line_no}: bad number {cell!r}") from None
                if not np.isfinite(value):
                    raise ValueError(f"{path.name}: line {line_no}: non-finite value in '{name}'")
                rows[name].append(value)
    t = np.asarray(rows["t"])
    if t.size > 1 and np.abs(np.diff(t) - _DT).max() > 1e-6:
        bad = int(np.abs(np.diff(t) - _DT).argmax()) + 2
        raise ValueError(f"{path.name}: line {bad}: sample spacing is not {_DT} s")
    return SubjectRecord(
        subject_id=subject_id or path.stem,
        ecg_lead=ecg_lead,
        ecg=SignalVector(SAMPLE_RATE_HZ, np.asarray(rows["ecg"])),
        ppg=SignalVector(SAMPLE_RATE_HZ, np.asarray(rows["ppg"])),
        abp=SignalVector(SAMPLE_RATE_HZ, np.asarray(rows["abp"])),
    )


def save_record(path, record: SubjectRecord):
    lines = ["t,ecg,ppg,abp"]
    ecg, ppg, abp = record.ecg.samples, record.ppg.samples, record.abp.samples
    for i in range(len(record)):
        t = i / SAMPLE_RATE_HZ
        lines.append(f"{t!r},{float(ecg[i])!r},{float(ppg[i])!r},{float(abp[i])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_manifest(directory) -> list[tuple[str, str]]:
    path = Path(directory) / "manifest.csv"
    entries = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "ecg_lead"]:
            raise ValueError(f"{path.name}: bad header {header!r}")
        for row in reader:
            if len(row) != 2:
                raise ValueError(f"{path.name}: malformed row {row!r}")
            entries.append((row[0], row[1]))
    return entries


def save_manifest(directory, entries: list[tuple[str, str]]):
    lines = ["subject_id,ecg_lead"] + [f"{sid},{lead}" for sid, lead in entries]
    (Path(directory) / "manifest.csv").write_text("\n".join(lines) + "\n", encoding="utf-8",
                                                  newline="\n")


def load_dataset(directory) -> list[SubjectRecord]:
    directory = Path(directory)
    records = []
    for subject_id, lead in load_manifest(directory):
        records.append(load_record(directory / f"{subject_id}.csv", subject_id, lead))
    return records


# --- target extraction ------------------------------------------------------


def _zero_order_hold(n: int, anchors: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Step series switching at each anchor; backfilled before the first."""
    out = np.empty(n)
    out[: anchors[0]] = values[0]
    for k in range(len(anchors)):
        end = anchors[k + 1] if k + 1 < len(anchors) else n
        out[anchors[k] : end] = values[k]
    return out


def extract_bp_targets(abp: SignalVector) -> TargetSeries:
    """Beat-wise systolic maxima and diastolic minima of the ABP waveform,
    held constant between consecutive beats to form per-sample series."""
    fs = abp.sample_rate_hz
    if len(abp) < 3 * fs:
        raise ValueError("ABP record shorter than 3 s")
    distance = int(round(MIN_BEAT_SPACING_S * fs))
    x = abp.samples
    peaks, _ = find_peaks(x, distance=distance, prominence=MIN_BEAT_PROMINENCE)
    troughs, _ = find_peaks(-x, distance=distance, prominence=MIN_BEAT_PROMINENCE)
    if peaks.size == 0 or troughs.size == 0:
        raise ValueError("no pulsatile ABP")
    sbp = _zero_order_hold(len(abp), peaks, x[peaks])
    dbp = _zero_order_hold(len(abp), troughs, x[troughs])
    return TargetSeries(sbp=sbp, dbp=np.minimum(sbp, dbp))


# --- splitting and windowing -------------------------------------------------


def split_record(record: SubjectRecord, targets: TargetSeries,
                 spec: SplitSpec | None = None) -> tuple[RecordSegment, RecordSegment, RecordSegment]:
    """Chronological, contiguous, non-overlapping train/valid/test segments.

    Splitting in time order keeps future samples out of the training
    portion, matching the causal framing of the task.
    """
    spec = spec or SplitSpec()
    n = len(record)
    if len(targets) != n:
        raise ValueError("targets must align with the record")
    n_train = int(n * spec.train_fraction)
    n_valid = int(n * spec.valid_fraction)
    if min(n_train, n_valid, n - n_train - n_valid) < 1:
        raise ValueError("record too short to split")
    bounds = [0, n_train, n_train + n_valid, n]
    segments = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        segments.append(
            RecordSegment(
                subject_id=record.subject_id,
                start_index=lo,
                ecg=record.ecg.samples[lo:hi].copy(),
                ppg=record.ppg.samples[lo:hi].copy(),
                sbp=targets.sbp[lo:hi].copy(),
                dbp=targets.dbp[lo:hi].copy(),
            )
        )
    return tuple(segments)


def normalize_window(x: np.ndarray) -> np.ndarray:
    """Scale to unit peak (divisor 1 for an all-zero window), then compand."""
    peak = np.abs(x).max()
    return mu_law(x / (peak if peak > 0 else 1.0))


def make_windows(segment: RecordSegment, window_len: int = 1024, stride: int = 256,
                 receptive_field: int | None = None) -> list[WindowedExample]:
    """Slice a segment into fixed-length training windows.

    Inputs are per-window peak-normalized and companded; targets are
    min-max normalized with the fixed pressure ranges.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if receptive_field is not None and window_len < receptive_field:
        warnings.warn(
            f"window_len {window_len} is below the model receptive field {receptive_field}",
            stacklevel=2,
        )
    windows = []
    for start in range(0, len(segment) - window_len + 1, stride):
        sl = slice(start, start + window_len)
        sbp_unit, dbp_unit = normalize_targets(segment.sbp[sl], segment.dbp[sl])
        windows.append(
            WindowedExample(
                ecg_window=normalize_window(segment.ecg[sl]),
                ppg_window=normalize_window(segment.ppg[sl]),
                sbp_target=sbp_unit,
                dbp_target=dbp_unit,
                subject_id=segment.subject_id,
                start_index=segment.start_index + start,
            )
        )
    return windows


# --- synthetic subjects -------------------------------------------------------

# Pressures follow a fixed affine law in the reciprocal pulse-arrival lag,
# so the waveform timing carries the information the network must learn.
# The lag spread puts a constant (population-mean) predictor well outside
# the evaluation gates: the task is only solvable by reading the inputs.
_SBP_LAW = (20.0, 40.0)   # sbp = 20 / tau + 40
_DBP_LAW = (10.0, 30.0)   # dbp = 10 / tau + 30


def synth_subject(seed: int, duration_s: float = 120.0, heart_rate_hz: float = 1.2,
                  lag_drift_s: float = 0.025,
                  noise_amplitude: float = 0.003) -> tuple[SubjectRecord, TargetSeries]:
    """Generate one synthetic subject with learnable pressure dynamics.

    The ECG is a train of gaussian R spikes with a small T bump; the PPG is
    a skewed pulse delayed by a slowly drifting lag tau(t); the ABP is a
    per-beat pulse whose systolic/diastolic levels follow a fixed affine
    law in 1/tau plus bounded noise. Deterministic per seed.
    """
    if duration_s < 30.0:
        raise ValueError("duration must be at least 30 s")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE_HZ))
    t = np.arange(n) * _DT

    tau_base = rng.uniform(0.16, 0.32)
    tau_period = rng.uniform(30.0, 60.0)
    tau_phase = rng.uniform(0.0, 2 * np.pi)

    def lag(time):
        return tau_base + lag_drift_s * np.sin(2 * np.pi * time / tau_period + tau_phase)

    period = 1.0 / heart_rate_hz
    beat_times = []
    beat = rng.uniform(0.2, 0.2 + period)
    while beat < duration_s + period:
        beat_times.append(beat)
        beat += period * (1.0 + 0.02 * rng.uniform(-1.0, 1.0))
    beat_times = np.asarray(beat_times)
    taus = lag(beat_times)
    inv = 1.0 / taus
    sbp_beats = _SBP_LAW[0] * inv + _SBP_LAW[1] + rng.uniform(-1.0, 1.0, size=len(beat_times))
    dbp_beats = _DBP_LAW[0] * inv + _DBP_LAW[1] + rng.uniform(-1.0, 1.0, size=len(beat_times))

    ecg = noise_amplitude * rng.normal(size=n)
    ppg = noise_amplitude * rng.normal(size=n)
    for beat, tau in zip(beat_times, taus):
        ecg += np.exp(-0.5 * ((t - beat) / 0.012) ** 2)
        ecg += 0.25 * np.exp(-0.5 * ((t - beat - 0.25) / 0.05) ** 2)
        arrival = beat + tau
        rise = np.exp(-0.5 * ((t - arrival) / 0.05) ** 2)
        fall = np.exp(-0.5 * ((t - arrival) / 0.13) ** 2)
        ppg += np.where(t < arrival, rise, fall)

    # ABP: linear diastolic baseline between beat onsets plus a smooth
    # pressure pulse peaking at a quarter of the beat; continuous at onsets
    onsets = beat_times + taus
    abp = np.full(n, dbp_beats[0])
    pulse_peak_indices = []
    u_peak = 0.25
    shape_norm = (u_peak ** 2) * (1 - u_peak) ** 6
    for k in range(len(onsets) - 1):
        lo, hi = onsets[k], onsets[k + 1]
        mask = (t >= lo) & (t < hi)
        if not mask.any():
            continue
        u = (t[mask] - lo) / (hi - lo)
        baseline = dbp_beats[k] + (dbp_beats[k + 1] - dbp_beats[k]) * u
        pulse = (u ** 2) * (1 - u) ** 6 / shape_norm
        abp[mask] = baseline + (sbp_beats[k] - dbp_beats[k]) * pulse
        segment_indices = np.where(mask)[0]
        pulse_peak_indices.append(segment_indices[np.argmax(pulse)])
    abp[t >= onsets[-1]] = dbp_beats[-1]

    peak_idx = np.asarray(pulse_peak_indices)
    onset_idx = np.clip(np.round(onsets / _DT).astype(int), 0, n - 1)
    complete = len(peak_idx)
    truth = TargetSeries(
        sbp=_zero_order_hold(n, peak_idx, sbp_beats[:complete]),
        dbp=_zero_order_hold(n, onset_idx[: complete + 1], dbp_beats[: complete + 1]),
    )
    lead = ("I", "II", "III", "IV")[seed % 4]
    record = SubjectRecord(
        subject_id=f"synth-{seed:04d}",
        ecg_lead=lead,
        ecg=SignalVector(SAMPLE_RATE_HZ, ecg),
        ppg=SignalVector(SAMPLE_RATE_HZ, ppg),
        abp=SignalVector(SAMPLE_RATE_HZ, abp),
    )
    return record, truth
