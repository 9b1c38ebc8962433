"""Continuous cuff-less blood pressure estimation from raw ECG/PPG.

The package covers the full experiment: waveform denoising, a small
dense-tensor autodiff engine, the dilated causal convolutional network,
dataset handling with a synthetic generator, the training loop with its
cyclic learning-rate schedule, and clinical agreement statistics.
"""

__version__ = "0.1.0"
