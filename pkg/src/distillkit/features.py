"""Log-mel filterbank front end: fbank extraction, energy VAD, sliding CMN.

Feature matrices are plain ``(T, 80)`` numpy arrays, one row per 10 ms frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import _binary
from .errors import ConfigError, EmptyAfterVadError, FormatError, TooShortError

FTR1_MAGIC = b"FTR1"


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples)
        if samples.ndim != 1 or samples.size < 1:
            raise ConfigError("waveform must be a non-empty 1-D sequence")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FbankConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 80
    low_hz: float = 20.0
    high_hz: float = 7600.0
    n_fft: int | None = None  # next power of two >= window length
    preemphasis: float = 0.0
    log_floor: float = 1e-10
    dtype: str = "float32"

    @property
    def frame_shift_s(self) -> float:
        return self.hop_ms / 1000.0

    def window_length(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_length(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


@dataclass(frozen=True)
class VadConfig:
    # ln-domain; 9.21 ~ 40 dB of frame energy below the loudest frame
    dynamic_range: float = 9.21
    absolute_floor: float = -20.0
    energy_floor: float = 1e-10


def num_frames(n_samples: int, win_len: int, hop_len: int) -> int:
    if n_samples < win_len:
        return 0
    return (n_samples - win_len) // hop_len + 1


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels, n_fft, sample_rate, low_hz, high_hz) -> np.ndarray:
    """Triangular filters on the mel axis, shape ``(n_mels, n_fft // 2 + 1)``."""
    if not 0 <= low_hz < high_hz <= sample_rate / 2:
        raise ConfigError(
            f"mel range [{low_hz}, {high_hz}] Hz invalid for sample rate {sample_rate}"
        )
    edges = np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_mels + 2)
    bin_mel = hz_to_mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_mel - left) / (center - left)
    down = (right - bin_mel) / (right - center)
    weights = np.maximum(0.0, np.minimum(up, down))
    if np.any(weights.sum(axis=1) <= 0):
        raise ConfigError(
            f"n_fft={n_fft} too small: some of the {n_mels} mel filters cover no FFT bin"
        )
    return weights


def _frames(samples: np.ndarray, win_len: int, hop_len: int) -> np.ndarray:
    n = num_frames(samples.size, win_len, hop_len)
    idx = np.arange(win_len)[None, :] + hop_len * np.arange(n)[:, None]
    return samples[idx]


def compute_fbank(wav: Waveform, cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    """Natural-log mel filterbank energies of shape ``(T, n_mels)``.

    The floor is added to every power-spectrum bin before mel integration, so
    an all-zero input yields ``ln(log_floor * filter_area)`` in every frame.
    """
    sr = wav.sample_rate
    win_len, hop_len = cfg.window_length(sr), cfg.hop_length(sr)
    if win_len < 2 or hop_len < 1:
        raise ConfigError("window and hop must span at least 2 and 1 samples")
    if wav.samples.size < win_len:
        raise TooShortError(
            f"waveform has {wav.samples.size} samples, shorter than one "
            f"{cfg.window_ms} ms window ({win_len} samples)"
        )
    dtype = np.dtype(cfg.dtype)
    n_fft = cfg.n_fft or 1 << (win_len - 1).bit_length()
    if n_fft < win_len:
        raise ConfigError(f"n_fft={n_fft} shorter than window ({win_len})")

    x = wav.samples.astype(dtype)
    if cfg.preemphasis:
        x = np.concatenate([x[:1], x[1:] - dtype.type(cfg.preemphasis) * x[:-1]])
    frames = _frames(x, win_len, hop_len) * np.hamming(win_len).astype(dtype)
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    power = (spec.real**2 + spec.imag**2).astype(dtype)
    fb = mel_filterbank(cfg.n_mels, n_fft, sr, cfg.low_hz, cfg.high_hz).astype(dtype)
    mel = (power + dtype.type(cfg.log_floor)) @ fb.T
    return np.log(mel).astype(dtype)


def frame_log_energy(wav: Waveform, cfg: FbankConfig = FbankConfig(), floor: float = 1e-10):
    """Per-frame ln(sum of squared samples), aligned with ``compute_fbank`` frames."""
    sr = wav.sample_rate
    frames = _frames(
        wav.samples.astype(np.float64), cfg.window_length(sr), cfg.hop_length(sr)
    )
    return np.log(np.sum(frames**2, axis=1) + floor)


def apply_vad(feats: np.ndarray, energies, cfg: VadConfig = VadConfig()) -> np.ndarray:
    """Keep frames whose log-energy exceeds ``max(floor, max_energy - dynamic_range)``."""
    energies = np.asarray(energies, dtype=np.float64)
    if energies.shape != (feats.shape[0],):
        raise ConfigError(
            f"{energies.size} energies given for {feats.shape[0]} feature frames"
        )
    if energies.size == 0:
        raise EmptyAfterVadError("no frames to filter")
    threshold = max(cfg.absolute_floor, energies.max() - cfg.dynamic_range)
    keep = energies > threshold
    if not keep.any():
        raise EmptyAfterVadError(
            f"all {energies.size} frames at or below log-energy threshold {threshold:.3f}"
        )
    return feats[keep]


def sliding_cmn(feats: np.ndarray, window_s: float = 3.0, frame_shift_s: float = 0.01):
    """Subtract a per-bin moving mean over a constant-width window.

    The window is centred on each frame and shifted (not shrunk) at the
    matrix edges; its width is ``min(window_frames, T)``.
    """
    if window_s <= 0:
        raise ConfigError(f"window_s must be positive, got {window_s}")
    T = feats.shape[0]
    if T == 0:
        raise ConfigError("empty feature matrix")
    w = min(max(1, int(round(window_s / frame_shift_s))), T)
    acc = np.concatenate(
        [np.zeros((1, feats.shape[1])), np.cumsum(feats, axis=0, dtype=np.float64)]
    )
    start = np.clip(np.arange(T) - w // 2, 0, T - w)
    means = (acc[start + w] - acc[start]) / w
    return (feats - means).astype(feats.dtype)


def extract_features(
    wav: Waveform,
    fbank_cfg: FbankConfig = FbankConfig(),
    vad_cfg: VadConfig | None = VadConfig(),
    cmn_window_s: float | None = 3.0,
    order: str = "vad-cmn",
) -> np.ndarray:
    """Full front end: fbank, then VAD and sliding CMN in the requested order."""
    if order not in ("vad-cmn", "cmn-vad"):
        raise ConfigError(f"order must be 'vad-cmn' or 'cmn-vad', got {order!r}")
    feats = compute_fbank(wav, fbank_cfg)
    energies = (
        frame_log_energy(wav, fbank_cfg, vad_cfg.energy_floor) if vad_cfg is not None else None
    )

    def vad(x):
        return apply_vad(x, energies, vad_cfg) if vad_cfg is not None else x

    def cmn(x):
        return sliding_cmn(x, cmn_window_s, fbank_cfg.frame_shift_s) if cmn_window_s else x

    if order == "vad-cmn":
        return cmn(vad(feats))
    return vad(cmn(feats))


def read_wav(path) -> Waveform:
    """Load a WAV file as a float waveform in [-1, 1]; multi-channel is averaged."""
    from scipy.io import wavfile

    sr, data = wavfile.read(path)
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        data = (data.astype(np.float64) - (info.max + info.min + 1) / 2) / (
            (info.max - info.min + 1) / 2
        )
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return Waveform(data, int(sr))


# FTR1 archive: "FTR1", u32 count, then per record
# u16 id-length, UTF-8 id, u32 T, u32 D, T*D float32 row-major (little endian)


def _ftr1_chunks(features: Mapping[str, np.ndarray]):
    yield FTR1_MAGIC + struct.pack("<I", len(features))
    for utt, mat in features.items():
        mat = np.asarray(mat)
        if mat.ndim != 2:
            raise ValueError(f"{utt}: feature matrix must be 2-D, got shape {mat.shape}")
        yield _binary.pack_text(utt) + struct.pack("<II", *mat.shape)
        yield _binary.pack_floats(mat)


def write_archive(features: Mapping[str, np.ndarray], path) -> None:
    """Write ``{utt_id: (T, D) matrix}`` as an FTR1 archive (atomically)."""
    _binary.atomic_write(path, _ftr1_chunks(features))


def encode_archive(features: Mapping[str, np.ndarray]) -> bytes:
    return b"".join(_ftr1_chunks(features))


def decode_archive(data: bytes) -> dict[str, np.ndarray]:
    r = _binary.Reader(data)
    r.magic(FTR1_MAGIC)
    count = r.u32("record count")
    out = {}
    for i in range(count):
        r.record = i
        start = r.pos
        utt = r.text("id")
        T = r.u32("frame count")
        D = r.u32("feature dim")
        if utt in out:
            raise FormatError(f"duplicate id {utt!r}", start, i)
        out[utt] = r.floats(T * D, "feature values").reshape(T, D)
    r.record = None
    r.done()
    return out


def read_archive(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_archive(fh.read())
