"""Neural building blocks on the autodiff engine: linear / layer-norm /
multi-head self-attention / feed-forward layers, sinusoidal embeddings, the
AdamW update, and the named-tensor checkpoint container.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"NTC1"


class ParamStore:
    """Named parameters plus per-parameter AdamW state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value))
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params.keys())

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {sorted(missing)[:4]}...")
        for name, t in self._params.items():
            src = np.asarray(arrays[name])
            if src.shape != t.data.shape:
                raise ValueError(
                    f"parameter {name!r} shape mismatch: checkpoint {src.shape} vs model {t.data.shape}"
                )
            t.data = src.astype(t.data.dtype).copy()

    def _moment(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in self._moments:
            z = np.zeros_like(self._params[name].data, dtype=np.float64)
            self._moments[name] = (z, z.copy())
        return self._moments[name]


def adamw_step(
    store: ParamStore,
    lr: float = 1e-4,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """Decoupled-weight-decay Adam update over every parameter in the store."""
    b1, b2 = betas
    store.step_count += 1
    t = store.step_count
    for name, p in store._params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient; run backward first")
        g = p.grad.astype(np.float64)
        m, v = store._moment(name)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        update = m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data.astype(np.float64)
        p.data = (p.data.astype(np.float64) - lr * update).astype(p.data.dtype)


def sinusoidal_embed(t: float, dim: int) -> np.ndarray:
    """Sin/cos embedding of a scalar step index, shape (dim,)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = float(t) * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Classic sinusoidal position table, shape (length, dim)."""
    return np.stack([sinusoidal_embed(i, dim) for i in range(length)])


def uniform_init(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return x @ weight + bias


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, rng, dtype=np.float32):
        self.weight = store.add(f"{name}.weight", uniform_init(rng, d_in, (d_in, d_out), dtype))
        self.bias = store.add(f"{name}.bias", np.zeros(d_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = store.add(f"{name}.gain", np.ones(dim, dtype=dtype))
        self.bias = store.add(f"{name}.bias", np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None):
    """Attention over (..., L, dh) heads; returns (context, weights)."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ ad.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))) * scale
    if mask is not None:
        scores = scores + Tensor(np.asarray(mask, dtype=scores.data.dtype))
    weights = ad.softmax(scores, axis=-1)
    return weights @ v, weights


class MultiHeadSelfAttention:
    """Standard multi-head self-attention over (B, L, d) sequences."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, rng, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q = Linear(store, f"{name}.q", dim, dim, rng, dtype)
        self.k = Linear(store, f"{name}.k", dim, dim, rng, dtype)
        self.v = Linear(store, f"{name}.v", dim, dim, rng, dtype)
        self.out = Linear(store, f"{name}.out", dim, dim, rng, dtype)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        b, length, dim = x.shape
        dh = dim // self.heads

        def split_heads(t):
            t = ad.reshape(t, (b, length, self.heads, dh))
            return ad.transpose(t, (0, 2, 1, 3))

        ctx, _ = scaled_dot_attention(split_heads(self.q(x)), split_heads(self.k(x)), split_heads(self.v(x)), mask)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, length, dim))
        return self.out(ctx)


class FeedForward:
    """Two-layer MLP with GELU and a 4x hidden width."""

    def __init__(self, store: ParamStore, name: str, dim: int, rng, dtype=np.float32):
        self.up = Linear(store, f"{name}.up", dim, 4 * dim, rng, dtype)
        self.down = Linear(store, f"{name}.down", 4 * dim, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(ad.gelu(self.up(x)))


class TransformerBlock:
    """Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, rng, dtype=np.float32):
        self.norm1 = LayerNorm(store, f"{name}.norm1", dim, dtype)
        self.attn = MultiHeadSelfAttention(store, f"{name}.attn", dim, heads, rng, dtype)
        self.norm2 = LayerNorm(store, f"{name}.norm2", dim, dtype)
        self.ffn = FeedForward(store, f"{name}.ffn", dim, rng, dtype)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        x = x + self.attn(self.norm1(x), mask)
        return x + self.ffn(self.norm2(x))


def save_checkpoint(arrays: dict[str, np.ndarray], path) -> None:
    """Named-tensor container: magic, u32 index length, JSON index, f32 payload."""
    index = []
    payload = bytearray()
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(arr.tobytes())
    blob = json.dumps(index, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (magic {magic!r})")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        index = json.loads(fh.read(blob_len).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in index:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays
