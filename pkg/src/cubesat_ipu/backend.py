"""Classifier backends for the tiling pipeline.

Two implementations share the ``infer(tiles, indices)`` interface: a lookup
of stored golden logits (on-orbit fault detection) and a small dense network
that can run in float32 or in an 8-bit affine-quantized integer mode.
"""

from __future__ import annotations

import base64
import json
import time
import zlib
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

NUM_CLASSES = 5
TILE = 224
TILE_SHAPE = (TILE, TILE, 3)
CLASS_NAMES = ("cloud", "ice", "water", "land", "snow")

Index = tuple[int, int]


class BackendFault(RuntimeError):
    """Raised by a backend that cannot produce logits for a batch."""


class ClassifierBackend(Protocol):
    input_precision: str  # "uint8" or "float"
    num_classes: int

    def infer(self, tiles: np.ndarray, indices: Sequence[Index]) -> np.ndarray: ...


# -- quantization --

@dataclass(frozen=True)
class QuantizedTensor:
    values: np.ndarray  # uint8
    scale: float
    zero_point: int
    shape: tuple[int, ...]


def quantize_affine(x, bits: int = 8) -> QuantizedTensor:
    """Per-tensor asymmetric quantization onto [0, 255].

    The quantized range always contains 0.0 so the zero point never needs
    clamping and ReLU zeros stay exact. An all-equal tensor is reproduced
    exactly: scale 1 when the constant is an integer in [-255, 255],
    otherwise scale |c| with a single quantization step.
    """
    if bits != 8:
        raise ValueError("only 8-bit quantization is supported")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize NaN or Inf")
    qmax = 2**bits - 1
    if x.size == 0:
        return QuantizedTensor(np.zeros(x.shape, np.uint8), 1.0, 0, x.shape)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return _quantize_constant(x, lo, qmax)
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    scale = (hi - lo) / qmax
    zero_point = int(np.clip(round(-lo / scale), 0, qmax))
    q = np.clip(np.rint(x / scale) + zero_point, 0, qmax).astype(np.uint8)
    return QuantizedTensor(q, scale, zero_point, x.shape)


def _quantize_constant(x, c, qmax):
    # pick q, zp with scale * (q - zp) == c; fall back to a scale fitted to c
    k = round(c)
    if k == c and abs(k) <= qmax:
        q, zp, scale = (k, 0, 1.0) if k >= 0 else (0, -k, 1.0)
    else:
        q, zp, scale = 1, 0, abs(c) if c != 0 else 1.0
        if c < 0:
            q, zp = 0, 1
    return QuantizedTensor(np.full(x.shape, q, np.uint8), float(scale), int(zp), x.shape)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.scale * (q.values.astype(np.float64) - q.zero_point)


# -- golden lookup --

@dataclass
class GoldenTable:
    """Reference logits per patch index for one test frame."""

    logits: dict[Index, np.ndarray]
    dataset_id: str = "golden"
    timestamp: float = 0.0

    @classmethod
    def from_array(cls, arr: np.ndarray, rows: int, cols: int, **kw) -> GoldenTable:
        arr = np.asarray(arr, dtype=np.float32).reshape(rows * cols, NUM_CLASSES)
        return cls({(r, c): arr[r * cols + c] for r in range(rows) for c in range(cols)}, **kw)

    def ordered(self, indices: Sequence[Index]) -> np.ndarray:
        return np.stack([self.logits[i] for i in indices]).astype(np.float32)

    def covers(self, rows: int, cols: int) -> bool:
        return all((r, c) in self.logits for r in range(rows) for c in range(cols))

    def to_json(self) -> str:
        idx = sorted(self.logits)
        rows = max(r for r, _ in idx) + 1 if idx else 0
        cols = max(c for _, c in idx) + 1 if idx else 0
        arr = self.ordered(idx).astype("<f4") if idx else np.zeros((0, NUM_CLASSES), "<f4")
        return json.dumps({
            "dataset_id": self.dataset_id,
            "timestamp": self.timestamp,
            "rows": rows,
            "cols": cols,
            "indices": [list(i) for i in idx],
            "logits_b64": base64.b64encode(arr.tobytes()).decode("ascii"),
        })

    @classmethod
    def from_json(cls, text: str) -> GoldenTable:
        obj = json.loads(text)
        arr = np.frombuffer(base64.b64decode(obj["logits_b64"]), dtype="<f4").reshape(-1, NUM_CLASSES)
        idx = [tuple(i) for i in obj["indices"]]
        return cls({i: arr[k].copy() for k, i in enumerate(idx)}, obj.get("dataset_id", "golden"),
                   obj.get("timestamp", 0.0))


def logits_digest(logits: np.ndarray) -> int:
    """CRC-32 of logits serialised as little-endian float32, row-major."""
    return zlib.crc32(np.ascontiguousarray(logits, dtype="<f4").tobytes()) & 0xFFFFFFFF


class GoldenBackend:
    input_precision = "uint8"
    num_classes = NUM_CLASSES

    def __init__(self, table: GoldenTable):
        self.table = table
        self.last_lookup_s = 0.0

    def infer(self, tiles, indices):
        t0 = time.perf_counter()
        try:
            out = self.table.ordered(indices)
        except KeyError as exc:
            raise BackendFault(f"no golden logits for patch {exc.args[0]}") from None
        self.last_lookup_s = time.perf_counter() - t0
        return out


def golden_backend(table: GoldenTable) -> GoldenBackend:
    return GoldenBackend(table)


# -- dense network --

@dataclass
class MlpWeights:
    w1: np.ndarray  # (in, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, classes)
    b2: np.ndarray  # (classes,)

    def __post_init__(self):
        self.w1, self.b1, self.w2, self.b2 = (np.asarray(a, np.float32) for a in (self.w1, self.b1, self.w2, self.b2))
        n_in, hidden = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape[0] != hidden or self.b2.shape != (self.w2.shape[1],):
            raise ValueError("inconsistent MLP weight shapes")

    @property
    def n_in(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def zeros(cls, n_in=TILE * TILE * 3, hidden=8, classes=NUM_CLASSES) -> MlpWeights:
        return cls(np.zeros((n_in, hidden)), np.zeros(hidden), np.zeros((hidden, classes)), np.zeros(classes))

    @classmethod
    def random(cls, rng: np.random.Generator, n_in=TILE * TILE * 3, hidden=8, classes=NUM_CLASSES, scale=None):
        s1 = scale if scale is not None else 1.0 / np.sqrt(n_in)
        s2 = scale if scale is not None else 1.0 / np.sqrt(hidden)
        return cls(rng.normal(0, s1, (n_in, hidden)), rng.normal(0, 0.1, hidden),
                   rng.normal(0, s2, (hidden, classes)), rng.normal(0, 0.1, classes))

    def to_json(self) -> str:
        blob = {k: {"shape": list(v.shape), "b64": base64.b64encode(v.astype("<f4").tobytes()).decode("ascii")}
                for k, v in (("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2))}
        return json.dumps(blob)

    @classmethod
    def from_json(cls, text: str) -> MlpWeights:
        obj = json.loads(text)
        arrs = {k: np.frombuffer(base64.b64decode(v["b64"]), "<f4").reshape(v["shape"]) for k, v in obj.items()}
        return cls(**arrs)


def _int_matmul(qx: QuantizedTensor, qw: QuantizedTensor) -> np.ndarray:
    # exact integer accumulation; float64 holds these sums exactly (< 2**53)
    a = qx.values.astype(np.float64) - qx.zero_point
    w = qw.values.astype(np.float64) - qw.zero_point
    return a @ w


class MlpBackend:
    """Dense -> ReLU -> dense classifier on flattened tiles scaled to [0, 1)."""

    input_precision = "float"
    num_classes = NUM_CLASSES

    def __init__(self, weights: MlpWeights, precision: str = "float32"):
        if precision not in ("float32", "int8"):
            raise ValueError("precision must be float32 or int8")
        self.weights = weights
        self.precision = precision
        if precision == "int8":
            self.qw1 = quantize_affine(weights.w1)
            self.qw2 = quantize_affine(weights.w2)

    def _flatten(self, tiles) -> np.ndarray:
        x = np.asarray(tiles)
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.weights.n_in:
            raise ValueError(f"input width {x.shape[1]} != {self.weights.n_in}")
        if x.dtype == np.uint8:
            x = x.astype(np.float32) / 256.0
        return x

    def forward_float(self, x: np.ndarray) -> np.ndarray:
        w = self.weights
        h = np.maximum(x.astype(np.float64) @ w.w1 + w.b1, 0.0)
        return h @ w.w2 + w.b2

    def forward_int8(self, x: np.ndarray) -> np.ndarray:
        w = self.weights
        qx = quantize_affine(x)
        acc = _int_matmul(qx, self.qw1)
        s1 = qx.scale * self.qw1.scale
        bias1 = np.rint(w.b1 / s1)
        h = np.maximum(s1 * (acc + bias1), 0.0)
        qh = quantize_affine(h)
        acc2 = _int_matmul(qh, self.qw2)
        s2 = qh.scale * self.qw2.scale
        bias2 = np.rint(w.b2 / s2)
        return s2 * (acc2 + bias2)

    def infer(self, tiles, indices=None):
        x = self._flatten(tiles)
        out = self.forward_int8(x) if self.precision == "int8" else self.forward_float(x)
        return out.astype(np.float32)


def mlp_backend(weights: MlpWeights, precision: str = "float32") -> MlpBackend:
    return MlpBackend(weights, precision)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def fit_mlp(x: np.ndarray, y: np.ndarray, hidden: int = 16, epochs: int = 300, lr: float = 0.05,
            momentum: float = 0.9, seed: int = 0) -> MlpWeights:
    """Full-batch gradient descent with momentum on softmax cross-entropy.

    Small by design: enough to fit synthetic tile datasets in tests and demos.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, np.float64).reshape(len(x), -1)
    n, d = x.shape
    onehot = np.eye(NUM_CLASSES)[y]
    params = [rng.normal(0, 1 / np.sqrt(d), (d, hidden)), np.zeros(hidden),
              rng.normal(0, 1 / np.sqrt(hidden), (hidden, NUM_CLASSES)), np.zeros(NUM_CLASSES)]
    velocity = [np.zeros_like(p) for p in params]
    for _ in range(epochs):
        w1, b1, w2, b2 = params
        pre = x @ w1 + b1
        h = np.maximum(pre, 0)
        g = (softmax(h @ w2 + b2) - onehot) / n
        gh = (g @ w2.T) * (pre > 0)
        grads = [x.T @ gh, gh.sum(0), h.T @ g, g.sum(0)]
        for p, v, gr in zip(params, velocity, grads):
            v *= momentum
            v -= lr * gr
            p += v
    return MlpWeights(*params)
