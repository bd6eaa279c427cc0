"""Parameter registry, AdamW optimizer, cosine LR schedule, serialization.

Serialized containers hold a JSON metadata header (names, shapes, arbitrary
metadata) followed by little-endian float64 payloads in header order, so a
round trip is bit-exact.
"""

import json
import math
import struct

import numpy as np

from .autodiff import ShapeError, Tensor

_MAGIC = b"CMAE"


def truncated_normal(rng, shape, std=0.02):
    """Normal(0, std) resampled until within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    while True:
        bad = np.abs(out) > 2.0 * std
        if not bad.any():
            return out
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))


class ParamStore:
    """Named trainable tensors with deterministic, seeded initialization."""

    def __init__(self, seed=0):
        self._params = {}
        self._rng = np.random.default_rng(seed)

    def add(self, name, shape, init="trunc_normal", std=0.02):
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        if isinstance(init, np.ndarray):
            if init.shape != tuple(shape):
                raise ShapeError(f"init array {init.shape} != declared {tuple(shape)}")
            data = init.astype(np.float64)
        elif init == "trunc_normal":
            data = truncated_normal(self._rng, shape, std=std)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def gradients(self):
        """name -> gradient array; zeros where no gradient has flowed."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def state_arrays(self):
        return {name: t.data for name, t in self._params.items()}

    def load_arrays(self, arrays):
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r} in loaded arrays")
            if arrays[name].shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: loaded shape {arrays[name].shape} != {t.data.shape}")
            t.data = np.ascontiguousarray(arrays[name], dtype=np.float64)

    def to_bytes(self, meta=None):
        return write_container(self.state_arrays(), meta or {})

    def load_bytes(self, blob):
        arrays, meta = read_container(blob)
        self.load_arrays(arrays)
        return meta


def write_container(arrays, meta):
    """Pack named float64 arrays behind a JSON header. Returns bytes."""
    header = {
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "meta": meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_MAGIC, struct.pack("<Q", len(header_bytes)), header_bytes]
    for v in arrays.values():
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(parts)


def read_container(blob):
    """Inverse of ``write_container``. Returns (arrays dict, meta dict)."""
    if blob[:4] != _MAGIC:
        raise ValueError("container: bad magic bytes")
    (hlen,) = struct.unpack("<Q", blob[4:12])
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        raw = blob[offset:offset + 8 * n]
        if len(raw) != 8 * n:
            raise ValueError(f"container: truncated payload for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        offset += 8 * n
    return arrays, header["meta"]


class AdamW:
    """Adam with decoupled weight decay.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p), with bias-corrected
    first/second moments. Moment buffers shape-match their parameters.
    """

    def __init__(self, store, lr=1e-3, weight_decay=0.05,
                 betas=(0.9, 0.999), eps=1e-8):
        self.store = store
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self, grads=None, lr=None):
        """Apply one update from ``grads`` (defaults to the store's .grad)."""
        if grads is None:
            grads = self.store.gradients()
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        inv_bc1 = 1.0 / (1.0 - b1 ** t)
        inv_bc2 = 1.0 / (1.0 - b2 ** t)
        for name, p in self.store.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"adamw: gradient shape {g.shape} != parameter {name!r} {p.data.shape}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            denom = np.sqrt(v * inv_bc2)
            denom += self.eps
            update = m * (lr * inv_bc1)
            update /= denom
            if self.weight_decay:
                update += (lr * self.weight_decay) * p.data
            p.data = p.data - update

    def state_arrays(self):
        out = {}
        for name in self.store.names():
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state(self, arrays, step_count):
        for name in self.store.names():
            self.m[name] = np.ascontiguousarray(arrays[f"m/{name}"])
            self.v[name] = np.ascontiguousarray(arrays[f"v/{name}"])
        self.step_count = int(step_count)


def cosine_lr(step, total_steps, lr_max, lr_min=0.0, warmup_steps=0):
    """Linear warmup 0 -> lr_max, then cosine decay lr_max -> lr_min.

    ``step`` counts from 0 to ``total_steps`` inclusive; the value at
    ``warmup_steps`` is exactly ``lr_max`` and at ``total_steps`` exactly
    ``lr_min``.
    """
    if warmup_steps >= total_steps:
        raise ValueError(
            f"cosine_lr: warmup_steps {warmup_steps} >= total_steps {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"cosine_lr: step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return lr_max * step / warmup_steps
    span = total_steps - warmup_steps
    t = (step - warmup_steps) / span
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t))
