"""Time-domain speech enhancement with a densely connected network."""

from ._dcn import (
    Model,
    TrainingDiverged,
    frame_signal,
    loss,
    mix_at_snr,
    overlap_add,
    si_sdr,
    snr_db,
    stft,
    synth_dataset,
    train,
    wav_read,
    wav_write,
)

__all__ = [
    "Model",
    "TrainingDiverged",
    "frame_signal",
    "loss",
    "mix_at_snr",
    "overlap_add",
    "si_sdr",
    "snr_db",
    "stft",
    "synth_dataset",
    "train",
    "wav_read",
    "wav_write",
]
