"""
From waveform to feature archive
================================

A tone with a silent gap goes through fbank extraction, energy VAD and
sliding mean normalization, then round-trips through an FTR1 archive.
"""

import tempfile
from pathlib import Path

import numpy as np

from distillkit.features import (
    FbankConfig,
    Waveform,
    compute_fbank,
    extract_features,
    frame_log_energy,
    read_archive,
    write_archive,
)

sr = 16000
t = np.arange(3 * sr) / sr
rng = np.random.default_rng(0)
samples = 0.3 * np.sin(2 * np.pi * 220 * t) * (1 + 0.5 * np.sin(2 * np.pi * 3 * t))
samples[sr : 2 * sr] = 1e-6 * rng.standard_normal(sr)  # one second of near-silence
wav = Waveform(samples, sr)

# 25 ms windows every 10 ms: (48000 - 400) // 160 + 1 frames
fbank = compute_fbank(wav)
print("fbank", fbank.shape, fbank.dtype)

energy = frame_log_energy(wav)
print("log-energy range %.1f .. %.1f" % (energy.min(), energy.max()))

# the quiet middle second falls below max energy - 9.21 and is dropped
feats = extract_features(wav)
print("after VAD + CMN", feats.shape, "per-bin mean |mu| = %.2e" % np.abs(feats.mean(axis=0)).mean())

# a coarser front end is one config away
coarse = compute_fbank(wav, FbankConfig(n_mels=40, hop_ms=20.0))
print("40 mels, 20 ms hop", coarse.shape)

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "demo.ftr1"
    write_archive({"tone": feats, "tone-coarse": coarse}, path)
    back = read_archive(path)
    print(path.stat().st_size, "bytes;", "bit-exact:", back["tone"].tobytes() == feats.tobytes())
