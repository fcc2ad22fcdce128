"""Named parameter store, Adam updates, and the binary checkpoint format.

Checkpoint layout (little-endian): magic "UKPC", u32 format version,
u32 tensor count, then per tensor: u16 name length, UTF-8 name,
u8 rank, u32 per dim, row-major float32 payload. Round-trips bit-exactly
for float32 stores.
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor

MAGIC = b"UKPC"
FORMAT_VERSION = 1


class MissingGradientError(RuntimeError):
    pass


class _AdamState:
    __slots__ = ("m", "v", "step")

    def __init__(self, shape, dtype):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.step = 0


class ParameterStore:
    """name -> Tensor map with per-parameter optimizer state."""

    def __init__(self, seed=0, dtype=np.float32):
        self._params = {}
        self._state = {}
        self.dtype = dtype
        self.rng = np.random.default_rng(seed)

    def add(self, name, shape, init="uniform", fan_in=None):
        """Register a trainable tensor. init: uniform (+-1/sqrt(fan_in)), zeros, ones."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        shape = tuple(shape)
        if init == "uniform":
            fan = fan_in if fan_in is not None else shape[0]
            bound = 1.0 / np.sqrt(fan)
            data = self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        elif init == "zeros":
            data = np.zeros(shape, dtype=self.dtype)
        elif init == "ones":
            data = np.ones(shape, dtype=self.dtype)
        else:
            raise ValueError(f"unknown init: {init}")
        t = Tensor(data, requires_grad=True, dtype=self.dtype)
        self._params[name] = t
        self._state[name] = _AdamState(shape, self.dtype)
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

    def trainable(self):
        return [p for p in self._params.values() if p.requires_grad]

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def n_values(self):
        return sum(p.data.size for p in self._params.values())

    def clone(self, dtype=None):
        """Deep copy (fresh optimizer state), optionally cast."""
        dtype = dtype or self.dtype
        out = ParameterStore(dtype=dtype)
        for name, p in self._params.items():
            t = Tensor(p.data.astype(dtype, copy=True), requires_grad=p.requires_grad, dtype=dtype)
            out._params[name] = t
            out._state[name] = _AdamState(p.data.shape, dtype)
        return out

    def copy_from(self, other):
        for name, p in self._params.items():
            p.data[...] = other[name].data


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; grads are consumed (reset to None)."""
    for name, p in store.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise MissingGradientError(f"no gradient for parameter {name}")
        st = store._state[name]
        st.step += 1
        g = p.grad
        st.m = beta1 * st.m + (1.0 - beta1) * g
        st.v = beta2 * st.v + (1.0 - beta2) * (g * g)
        m_hat = st.m / (1.0 - beta1 ** st.step)
        v_hat = st.v / (1.0 - beta2 ** st.step)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None


def save_checkpoint(store, path):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(store)))
        for name, p in store.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            arr = p.data.astype("<f4", copy=False)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    """Read a checkpoint into a fresh float32 ParameterStore."""
    store = ParameterStore()
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            payload = f.read(4 * n)
            arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
            t = Tensor(arr, requires_grad=True)
            store._params[name] = t
            store._state[name] = _AdamState(arr.shape, np.float32)
    return store
