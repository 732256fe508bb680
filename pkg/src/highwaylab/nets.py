"""Flat-parameter multilayer perceptrons with hand-written backprop.

Networks are small MLPs evaluated in float64. Parameters live in one flat
vector so the optimizer, the checkpoint format, and the finite-difference
checker all agree on a single canonical layout:

    for each layer from input to output:
        weight matrix, shape (n_out, n_in), C (row-major) order
        bias vector, shape (n_out,)

Hidden layers apply the configured activation; the output layer is linear.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    TrainingDivergenceError,
)

PARAMS_FORMAT_VERSION = 1

_MAGIC_NETWORK = b"HRLL"
_MAGIC_ARCHIVE = b"HRLC"
_ACTIVATION_CODES = {"relu": 0, "tanh": 1}
_ACTIVATION_NAMES = {code: name for name, code in _ACTIVATION_CODES.items()}


@dataclass(frozen=True)
class NetworkSpec:
    """Shape of an MLP: layer widths plus the hidden activation."""

    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("a network needs at least input and output layers")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation not in _ACTIVATION_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for i, o in zip(self.layer_sizes, self.layer_sizes[1:]))


@lru_cache(maxsize=None)
def _layout(spec: NetworkSpec) -> tuple[tuple[int, int, int, int, int], ...]:
    """Per-layer (w_start, b_start, end, n_out, n_in) offsets into the flat vector."""
    out = []
    offset = 0
    for n_in, n_out in zip(spec.layer_sizes, spec.layer_sizes[1:]):
        w_start = offset
        b_start = w_start + n_out * n_in
        end = b_start + n_out
        out.append((w_start, b_start, end, n_out, n_in))
        offset = end
    return tuple(out)


@dataclass(frozen=True)
class ParameterSet:
    """Immutable flat float64 parameter vector in the canonical layout."""

    values: np.ndarray
    version: int = PARAMS_FORMAT_VERSION

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("parameters must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class AdamState:
    """Adam moment accumulators; functional updates via adam_step()."""

    m: np.ndarray
    v: np.ndarray
    t: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, n_params: int, learning_rate: float) -> "AdamState":
        if learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        return cls(
            m=np.zeros(n_params, dtype=np.float64),
            v=np.zeros(n_params, dtype=np.float64),
            t=0,
            learning_rate=float(learning_rate),
        )


def init_params(spec: NetworkSpec, seed) -> ParameterSet:
    """Glorot-uniform weights, zero biases, deterministic under the seed."""
    rng = np.random.default_rng(seed)
    chunks = []
    for n_in, n_out in zip(spec.layer_sizes, spec.layer_sizes[1:]):
        limit = math.sqrt(6.0 / (n_in + n_out))
        chunks.append(rng.uniform(-limit, limit, size=n_out * n_in))
        chunks.append(np.zeros(n_out, dtype=np.float64))
    return ParameterSet(np.concatenate(chunks))


def _forward_array(spec: NetworkSpec, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    h = x
    last_hidden = len(spec.layer_sizes) - 3
    for k, (w_start, b_start, end, n_out, n_in) in enumerate(_layout(spec)):
        w = values[w_start:b_start].reshape(n_out, n_in)
        b = values[b_start:end]
        h = h @ w.T + b
        if k <= last_hidden:
            h = np.maximum(h, 0.0) if spec.activation == "relu" else np.tanh(h)
    return h


def forward(spec: NetworkSpec, params: ParameterSet, x) -> np.ndarray:
    """Evaluate the network on one input (n,) or a batch (B, n)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ValueError(f"expected input width {spec.input_dim}, got shape {x.shape}")
    out = _forward_array(spec, params.values, h)
    return out[0] if single else out


def backward(spec: NetworkSpec, params: ParameterSet, x, output_gradient) -> np.ndarray:
    """Flat parameter gradient of sum_i output_gradient_i . f(x_i).

    For a batch the per-sample contributions are summed; callers that want a
    mean scale the output gradient by 1/B themselves.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(output_gradient, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    g = g[None, :] if single else g
    if h.shape[1] != spec.input_dim:
        raise ValueError(f"expected input width {spec.input_dim}, got shape {x.shape}")
    if g.shape != (h.shape[0], spec.output_dim):
        raise ValueError(
            f"expected output gradient shape {(h.shape[0], spec.output_dim)}, got {g.shape}"
        )

    values = params.values
    layout = _layout(spec)
    last_hidden = len(spec.layer_sizes) - 3

    # Forward pass keeping the post-activation output of every layer.
    acts = [h]
    for k, (w_start, b_start, end, n_out, n_in) in enumerate(layout):
        w = values[w_start:b_start].reshape(n_out, n_in)
        b = values[b_start:end]
        z = acts[-1] @ w.T + b
        if k <= last_hidden:
            z = np.maximum(z, 0.0) if spec.activation == "relu" else np.tanh(z)
        acts.append(z)

    grad = np.empty(spec.n_params, dtype=np.float64)
    for k in range(len(layout) - 1, -1, -1):
        w_start, b_start, end, n_out, n_in = layout[k]
        a_prev = acts[k]
        grad[w_start:b_start] = (g.T @ a_prev).ravel()
        grad[b_start:end] = g.sum(axis=0)
        if k > 0:
            w = values[w_start:b_start].reshape(n_out, n_in)
            g = g @ w
            a = acts[k]
            # Derivative through the hidden activation, using its output:
            # relu' = [a > 0], tanh' = 1 - a^2.
            g = g * (a > 0.0) if spec.activation == "relu" else g * (1.0 - a * a)
    return grad


def adam_step(
    state: AdamState, params: ParameterSet, gradient
) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    g = np.asarray(gradient, dtype=np.float64).ravel()
    if g.shape != params.values.shape:
        raise ValueError(f"gradient shape {g.shape} does not match params {params.values.shape}")
    if not np.all(np.isfinite(g)):
        raise TrainingDivergenceError("non-finite entries in gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_values = params.values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return ParameterSet(new_values, version=params.version), replace(state, m=m, v=v, t=t)


Probe = Callable[[np.ndarray], tuple[float, np.ndarray]]
"""A scalar loss of the network output: returns (value, d loss / d output)."""


def gradient_check(
    spec: NetworkSpec, params: ParameterSet, x, probe: Probe, h: float = 1e-5
) -> float:
    """Max relative error between backprop and central finite differences.

    The relative error uses max(|analytic|, |numeric|, 1e-12) as denominator,
    coordinate-wise, and the maximum over all parameters is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    _, g_out = probe(forward(spec, params, x))
    analytic = backward(spec, params, x, g_out)

    theta = params.values.copy()
    x2 = x[None, :] if x.ndim == 1 else x
    numeric = np.empty_like(analytic)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        f_plus = probe(_forward_array(spec, theta, x2)[0])[0]
        theta[i] = orig - h
        f_minus = probe(_forward_array(spec, theta, x2)[0])[0]
        theta[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))


def squared_error_probe(target) -> Probe:
    target_arr = np.asarray(target, dtype=np.float64)

    def probe(output: np.ndarray) -> tuple[float, np.ndarray]:
        d = output - target_arr
        return float(d @ d), 2.0 * d

    return probe


def log_prob_probe(index: int) -> Probe:
    """Negative log softmax probability of one output index."""

    def probe(output: np.ndarray) -> tuple[float, np.ndarray]:
        logp = log_softmax(output)
        g = softmax(output)
        g = g.copy()
        g[index] -= 1.0
        return float(-logp[index]), g

    return probe


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax; outputs are strictly positive."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    np.clip(z, -700.0, None, out=z)  # keep exp() above underflow
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    s = z - z.max(axis=axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def categorical_entropy(logits, axis: int = -1) -> np.ndarray:
    """Entropy in nats of softmax(logits) along the given axis."""
    logp = log_softmax(logits, axis=axis)
    p = np.exp(logp)
    return -(p * logp).sum(axis=axis)


# ---------------------------------------------------------------------------
# Checkpoint format
#
# Single network file ("HRLL"):
#   magic "HRLL" | version u32 | layer_count u32 | sizes u32[layer_count]
#   | activation u32 | param_count u64 | params f64[param_count] | crc32 u32
# All integers and floats little-endian; the CRC32 covers every byte before it.
#
# Archive file ("HRLC") used for agent checkpoints: named binary sections.
#   magic "HRLC" | version u32 | section_count u32
#   | sections: name_len u16, name utf-8, payload_len u64, payload
#   | crc32 u32 over every byte before it
# ---------------------------------------------------------------------------


def network_to_bytes(spec: NetworkSpec, params: ParameterSet) -> bytes:
    if params.values.size != spec.n_params:
        raise ValueError(
            f"spec expects {spec.n_params} parameters, got {params.values.size}"
        )
    buf = bytearray()
    buf += _MAGIC_NETWORK
    buf += struct.pack("<I", params.version)
    buf += struct.pack("<I", len(spec.layer_sizes))
    buf += struct.pack(f"<{len(spec.layer_sizes)}I", *spec.layer_sizes)
    buf += struct.pack("<I", _ACTIVATION_CODES[spec.activation])
    buf += struct.pack("<Q", params.values.size)
    buf += params.values.astype("<f8").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.offset = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointTruncatedError(
                f"{self.what}: file ends at byte {len(self.data)}, "
                f"needed {self.offset + n}"
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _check_crc(data: bytes, reader: _Reader, what: str) -> None:
    (stored,) = reader.unpack("<I")
    actual = zlib.crc32(data[: reader.offset - 4])
    if stored != actual:
        raise CheckpointChecksumError(f"{what}: CRC32 mismatch")


def network_from_bytes(data: bytes) -> tuple[NetworkSpec, ParameterSet]:
    r = _Reader(data, "network checkpoint")
    if r.take(4) != _MAGIC_NETWORK:
        raise CheckpointFormatError("network checkpoint: bad magic")
    (version,) = r.unpack("<I")
    if version != PARAMS_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"network checkpoint: version {version}, expected {PARAMS_FORMAT_VERSION}"
        )
    (layer_count,) = r.unpack("<I")
    if layer_count < 2 or layer_count > 1024:
        raise CheckpointFormatError(f"network checkpoint: bad layer count {layer_count}")
    sizes = r.unpack(f"<{layer_count}I")
    (act_code,) = r.unpack("<I")
    if act_code not in _ACTIVATION_NAMES:
        raise CheckpointFormatError(f"network checkpoint: bad activation code {act_code}")
    (count,) = r.unpack("<Q")
    raw = r.take(count * 8)
    _check_crc(data, r, "network checkpoint")
    spec = NetworkSpec(sizes, _ACTIVATION_NAMES[act_code])
    if count != spec.n_params:
        raise CheckpointFormatError(
            f"network checkpoint: {count} parameters but spec needs {spec.n_params}"
        )
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return spec, ParameterSet(values, version=version)


def save_params(path, spec: NetworkSpec, params: ParameterSet) -> None:
    with open(path, "wb") as f:
        f.write(network_to_bytes(spec, params))


def load_params(path) -> tuple[NetworkSpec, ParameterSet]:
    with open(path, "rb") as f:
        return network_from_bytes(f.read())


def write_archive(path, sections: list[tuple[str, bytes]]) -> None:
    buf = bytearray()
    buf += _MAGIC_ARCHIVE
    buf += struct.pack("<I", PARAMS_FORMAT_VERSION)
    buf += struct.pack("<I", len(sections))
    for name, payload in sections:
        raw_name = name.encode("utf-8")
        buf += struct.pack("<H", len(raw_name))
        buf += raw_name
        buf += struct.pack("<Q", len(payload))
        buf += payload
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as f:
        f.write(bytes(buf))


def read_archive(path) -> dict[str, bytes]:
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, "checkpoint archive")
    if r.take(4) != _MAGIC_ARCHIVE:
        raise CheckpointFormatError("checkpoint archive: bad magic")
    (version,) = r.unpack("<I")
    if version != PARAMS_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint archive: version {version}, expected {PARAMS_FORMAT_VERSION}"
        )
    (count,) = r.unpack("<I")
    sections: dict[str, bytes] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (payload_len,) = r.unpack("<Q")
        sections[name] = r.take(payload_len)
    _check_crc(data, r, "checkpoint archive")
    return sections


def adam_to_bytes(state: AdamState) -> bytes:
    head = struct.pack(
        "<QddddQ",
        state.t,
        state.learning_rate,
        state.beta1,
        state.beta2,
        state.eps,
        state.m.size,
    )
    return head + state.m.astype("<f8").tobytes() + state.v.astype("<f8").tobytes()


def adam_from_bytes(data: bytes) -> AdamState:
    r = _Reader(data, "optimizer state")
    t, lr, beta1, beta2, eps, n = r.unpack("<QddddQ")
    m = np.frombuffer(r.take(n * 8), dtype="<f8").astype(np.float64)
    v = np.frombuffer(r.take(n * 8), dtype="<f8").astype(np.float64)
    return AdamState(m=m, v=v, t=int(t), learning_rate=lr, beta1=beta1, beta2=beta2, eps=eps)
