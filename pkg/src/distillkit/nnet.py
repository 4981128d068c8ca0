"""TDNN student embedding extractor with a hand-written reverse pass.

The network works on batches of equal-length feature matrices ``(N, T, D)``
(a single ``(T, D)`` matrix is also accepted). Parameters live in one flat
vector; each layer reads reshaped views of its slice, and ``backward``
returns a gradient vector with the same layout, which keeps the optimizer
trivial.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _binary
from .errors import ConfigError, FormatError, TooShortError, UsageError

NET1_MAGIC = b"NET1"


@dataclass(frozen=True)
class NetConfig:
    feat_dim: int = 80
    channels: tuple = (256, 256, 256, 512)
    kernels: tuple = (5, 3, 3, 1)
    dilations: tuple = (1, 2, 3, 1)
    embedding_dim: int = 256
    pooling: str = "stats"  # "stats" (mean + std) or "gap" (mean only)
    relu_after_last_conv: bool = False
    std_floor: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if not len(self.channels) == len(self.kernels) == len(self.dilations) >= 1:
            raise ConfigError("channels, kernels and dilations need equal non-zero length")
        if self.pooling not in ("stats", "gap"):
            raise ConfigError(f"pooling must be 'stats' or 'gap', got {self.pooling!r}")
        if min(self.channels + self.kernels + self.dilations) < 1 or self.feat_dim < 1:
            raise ConfigError("layer sizes must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "NetConfig":
        return cls(**json.loads(text))


STUDENT_PRESETS = {
    "tdnn-small": NetConfig(),
    # narrow variant for single-core desk-scale experiments
    "tdnn-tiny": NetConfig(channels=(64, 64, 64, 128)),
}


def student_config(name: str = "tdnn-small", pooling: str = "stats") -> NetConfig:
    if name not in STUDENT_PRESETS:
        raise ConfigError(f"unknown student {name!r}; choose from {', '.join(STUDENT_PRESETS)}")
    return NetConfig(**{**asdict(STUDENT_PRESETS[name]), "pooling": pooling})


class Conv1d:
    """Dilated 1-D convolution over time as one im2col matmul."""

    def __init__(self, in_ch, out_ch, kernel, dilation):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.dilation = kernel, dilation
        self.shapes = [(kernel * in_ch, out_ch), (out_ch,)]
        self.fan_in = kernel * in_ch

    @property
    def context(self) -> int:
        return self.dilation * (self.kernel - 1)

    def forward(self, x, W, b):
        T_out = x.shape[1] - self.context
        d, C = self.dilation, self.in_ch
        if self.kernel == 1:
            cols = x
        else:
            cols = np.concatenate([x[:, j * d : j * d + T_out] for j in range(self.kernel)], axis=2)
        return cols @ W + b, (cols, x.shape)

    def backward(self, cache, g, W, need_input_grad=True):
        cols, in_shape = cache
        kc = cols.shape[-1]
        dW = cols.reshape(-1, kc).T @ g.reshape(-1, self.out_ch)
        db = g.sum(axis=(0, 1))
        if not need_input_grad:
            return None, [dW, db]
        dcols = g @ W.T
        if self.kernel == 1:
            return dcols, [dW, db]
        T_out = g.shape[1]
        d, C = self.dilation, self.in_ch
        dx = np.zeros(in_shape, dtype=g.dtype)
        for j in range(self.kernel):
            dx[:, j * d : j * d + T_out] += dcols[..., j * C : (j + 1) * C]
        return dx, [dW, db]


class ReLU:
    shapes: list = []

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, g):
        return g * mask, []


class StatsPooling:
    """Per-channel mean (and population std for mode='stats') over time."""

    shapes: list = []

    def __init__(self, channels, mode="stats", std_floor=1e-8):
        self.channels, self.mode, self.std_floor = channels, mode, std_floor
        self.out_dim = 2 * channels if mode == "stats" else channels

    def forward(self, x):
        mean = x.mean(axis=1)
        if self.mode == "gap":
            return mean, (x.shape[1],)
        centered = x - mean[:, None, :]
        var = np.mean(centered * centered, axis=1)
        floor2 = x.dtype.type(self.std_floor**2)
        live = var > floor2
        std = np.sqrt(np.where(live, var, floor2))
        return np.concatenate([mean, std], axis=1), (x.shape[1], centered, std, live)

    def backward(self, cache, g):
        T = cache[0]
        C = self.channels
        g_mean = g[:, :C]
        dx = np.repeat((g_mean / T)[:, None, :], T, axis=1)
        if self.mode == "stats":
            _, centered, std, live = cache
            g_std = np.where(live, g[:, C:], 0) / (T * std)
            dx += centered * g_std[:, None, :]
        return dx, []


class Dense:
    def __init__(self, in_dim, out_dim):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.shapes = [(in_dim, out_dim), (out_dim,)]
        self.fan_in = in_dim

    def forward(self, x, W, b):
        return x @ W + b, x

    def backward(self, x, g, W):
        return g @ W.T, [x.T @ g, g.sum(axis=0)]


@dataclass
class ForwardTape:
    owner: int
    caches: list
    batched: bool
    consumed: bool = False
    dtype: np.dtype = field(default=np.dtype(np.float32))


def _build(config: NetConfig):
    layers = []
    in_ch = config.feat_dim
    n = len(config.channels)
    for i, (c, k, d) in enumerate(zip(config.channels, config.kernels, config.dilations)):
        layers.append(Conv1d(in_ch, c, k, d))
        if i < n - 1 or config.relu_after_last_conv:
            layers.append(ReLU())
        in_ch = c
    pool = StatsPooling(in_ch, config.pooling, config.std_floor)
    layers += [pool, Dense(pool.out_dim, config.embedding_dim)]

    slices = []
    offset = 0
    for layer in layers:
        spans = []
        for shape in layer.shapes:
            size = int(np.prod(shape))
            spans.append((offset, offset + size, shape))
            offset += size
        slices.append(spans)
    return layers, slices, offset


def param_count(config: NetConfig) -> int:
    return _build(config)[2]


class StudentNet:
    """Conv1d/ReLU stack, statistics pooling and a dense embedding layer."""

    def __init__(self, config: NetConfig = NetConfig(), params=None, seed=0, dtype=np.float32):
        self.config = config
        self.layers, self.slices, self.param_count = _build(config)
        self.pool = self.layers[-2]

        if params is None:
            params = self.init_params(np.random.default_rng(seed))
        params = np.asarray(params)
        if params.shape != (self.param_count,):
            raise ConfigError(
                f"parameter vector has shape {params.shape}, expected ({self.param_count},)"
            )
        self.params = params.astype(dtype, copy=True)

    def init_params(self, rng) -> np.ndarray:
        """He-style uniform weights scaled by fan-in; zero biases."""
        params = np.zeros(self.param_count)
        for layer, spans in zip(self.layers, self.slices):
            if spans:
                lo, hi, _ = spans[0]
                bound = np.sqrt(6.0 / layer.fan_in)
                params[lo:hi] = rng.uniform(-bound, bound, hi - lo)
        return params

    @property
    def dtype(self):
        return self.params.dtype

    @property
    def receptive_field(self) -> int:
        return 1 + sum(l.context for l in self.layers if isinstance(l, Conv1d))

    def views(self, layer_index):
        return [self.params[lo:hi].reshape(shape) for lo, hi, shape in self.slices[layer_index]]

    def astype(self, dtype) -> "StudentNet":
        return StudentNet(self.config, self.params, dtype=dtype)

    def copy(self) -> "StudentNet":
        return self.astype(self.dtype)

    def forward(self, feats):
        """Embed ``(T, D)`` or ``(N, T, D)`` features; returns ``(embedding, tape)``."""
        x = np.asarray(feats, dtype=self.dtype)
        batched = x.ndim == 3
        if not batched:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.config.feat_dim:
            raise ConfigError(
                f"expected features (..., T, {self.config.feat_dim}), got {np.shape(feats)}"
            )
        if x.shape[1] < self.receptive_field:
            raise TooShortError(
                f"{x.shape[1]} frames is shorter than the receptive field ({self.receptive_field})"
            )
        caches = []
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(x, *self.views(i))
            caches.append(cache)
        tape = ForwardTape(id(self), caches, batched, dtype=self.dtype)
        return (x if batched else x[0]), tape

    def embed(self, feats):
        return self.forward(feats)[0]

    def backward(self, tape: ForwardTape, grad_embedding):
        """Gradient of ``sum(embedding * grad_embedding)`` w.r.t. the parameters."""
        if tape.owner != id(self):
            raise UsageError("tape was recorded by a different network")
        if tape.consumed:
            raise UsageError("forward tape already consumed by a previous backward call")
        tape.consumed = True
        g = np.asarray(grad_embedding, dtype=self.dtype)
        if not tape.batched:
            g = g[None]
        grad = np.zeros(self.param_count, dtype=self.dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            layer, cache = self.layers[i], tape.caches[i]
            if isinstance(layer, Conv1d):
                g, parts = layer.backward(cache, g, self.views(i)[0], need_input_grad=i > 0)
            elif isinstance(layer, Dense):
                g, parts = layer.backward(cache, g, self.views(i)[0])
            else:
                g, parts = layer.backward(cache, g)
            for (lo, hi, _), part in zip(self.slices[i], parts):
                grad[lo:hi] = part.ravel()
        tape.caches = None
        return grad

    # NET1 checkpoint: "NET1", u32 config-json length, config json,
    # 32-byte sha256 of the config json, u64 param count, float32 params
    def to_bytes(self) -> bytes:
        cfg = self.config.to_json().encode("utf-8")
        return b"".join(
            [
                NET1_MAGIC,
                struct.pack("<I", len(cfg)),
                cfg,
                hashlib.sha256(cfg).digest(),
                struct.pack("<Q", self.param_count),
                _binary.pack_floats(self.params),
            ]
        )

    def save(self, path) -> None:
        _binary.atomic_write(path, [self.to_bytes()])

    @classmethod
    def from_bytes(cls, data: bytes, dtype=np.float32) -> "StudentNet":
        r = _binary.Reader(data)
        r.magic(NET1_MAGIC)
        n = r.u32("config length")
        cfg_at = r.pos
        cfg = r.take(n, "config")
        digest_at = r.pos
        if r.take(32, "config digest") != hashlib.sha256(cfg).digest():
            raise FormatError("config digest mismatch", digest_at)
        try:
            config = NetConfig.from_json(cfg.decode("utf-8"))
        except (ValueError, TypeError) as exc:
            raise FormatError(f"unreadable network config: {exc}", cfg_at) from exc
        count_at = r.pos
        count = r.u64("param count")
        expected = param_count(config)
        if count != expected:
            raise FormatError(f"param count {count} does not match config ({expected})", count_at)
        params = r.floats(count, "parameters")
        r.done()
        return cls(config, params=params, dtype=dtype)

    @classmethod
    def load(cls, path, dtype=np.float32) -> "StudentNet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), dtype)


def measure_params_and_rtf(net: StudentNet, seconds=10.0, runs=5, warmups=2, sample_rate=16000, fbank_cfg=None, seed=0):
    """Parameter count and real-time factor of fbank + embedding extraction.

    RTF is the median wall-clock time over ``runs`` timed extractions of a
    ``seconds``-long random waveform, divided by ``seconds``.
    """
    from .features import FbankConfig, Waveform, compute_fbank

    if runs < 1 or warmups < 0:
        raise ConfigError("runs must be >= 1 and warmups >= 0")
    fbank_cfg = fbank_cfg or FbankConfig(n_mels=net.config.feat_dim)
    rng = np.random.default_rng(seed)
    wav = Waveform(0.1 * rng.standard_normal(int(seconds * sample_rate)), sample_rate)
    times = []
    for i in range(warmups + runs):
        t0 = time.perf_counter()
        net.embed(compute_fbank(wav, fbank_cfg))
        if i >= warmups:
            times.append(time.perf_counter() - t0)
    return {"param_count": net.param_count, "rtf": float(np.median(times)) / seconds}
