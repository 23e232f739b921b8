"""Numeric substrate: parameters, modules with pullbacks, gradient checking, model files.

Arrays are plain float64 numpy arrays. A layer is called as ``y, back = layer(x)``;
``back(dy)`` accumulates parameter gradients and returns ``dx``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

DTYPE = np.float64
MAGIC = b"ISSMMODL"
FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Raised when an array does not have the shape a layer declared."""


class NonFiniteError(ValueError):
    pass


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Convert to a contiguous float64 array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def check_shape(arr: np.ndarray, expected: tuple, name: str = "input") -> None:
    """``expected`` may contain ``None`` for free axes."""
    if arr.ndim != len(expected) or any(
        e is not None and e != s for s, e in zip(arr.shape, expected)
    ):
        raise ShapeError(f"{name}: expected shape {expected}, got {tuple(arr.shape)}")


@dataclass(eq=False)
class Parameter:
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = as_tensor(self.value, "parameter")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {self.value.shape}")
        self.grad += g

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


class Module:
    """Base class: collects Parameters, buffers and sub-modules from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    yield from m.named_parameters(f"{prefix}{key}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in vars(self).items():
            if key == "buffers":
                for bname, arr in val.items():
                    yield prefix + bname, arr
            elif isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    yield from m.named_buffers(f"{prefix}{key}.{i}.")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def zero_grads(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.value for name, p in self.named_parameters()}
        for name, arr in self.named_buffers():
            state["buffer:" + name] = arr
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name!r}")
            if state[name].shape != p.value.shape:
                raise ShapeError(f"{name}: file has {state[name].shape}, model has {p.value.shape}")
            p.value[...] = state[name]
        for name, arr in self.named_buffers():
            key = "buffer:" + name
            if key not in state:
                raise KeyError(f"missing buffer {name!r}")
            arr[...] = state[key]


class Identity(Module):
    def __call__(self, x):
        return x, lambda g: g


# --------------------------------------------------------------------------- #
# Gradient checking
# --------------------------------------------------------------------------- #


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst: str
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


class NonDeterministicLayer(RuntimeError):
    pass


def _rel_err(a: float, n: float, floor: float = 1e-5) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    fn: Callable,
    params: dict[str, Parameter],
    inputs: dict[str, np.ndarray] | None = None,
    epsilon: float = 1e-5,
    tol: float = 1e-4,
    weights: np.ndarray | None = None,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``fn(**inputs)`` must return ``(out, back)`` where ``back(dout)`` returns either
    the input gradient (single input) or a dict keyed like ``inputs``. The output is
    scalarized as ``sum(out)``, or ``sum(weights * out)`` when ``weights`` is given
    (normalization layers have identically zero gradient under a plain sum).
    ``max_coords`` subsamples coordinates per array to bound runtime.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-7, 1e-4]")
    inputs = {k: np.array(v, dtype=DTYPE) for k, v in (inputs or {}).items()}
    rng = rng if rng is not None else np.random.default_rng(0)

    def scalar() -> float:
        out, _ = fn(**inputs)
        w = np.ones_like(out) if weights is None else weights
        return float(np.sum(w * out))

    for p in params.values():
        p.zero_grad()
    out, back = fn(**inputs)
    out2, _ = fn(**inputs)
    if not np.array_equal(out, out2):
        raise NonDeterministicLayer("two forward passes differ; gradient check invalid")
    w = np.ones_like(out) if weights is None else np.asarray(weights, dtype=DTYPE)
    dx = back(w)
    if len(inputs) == 1 and not isinstance(dx, dict):
        dx = {next(iter(inputs)): dx}
    dx = dx or {}

    targets: list[tuple[str, np.ndarray, np.ndarray]] = []
    for name, p in params.items():
        targets.append((name, p.value, p.grad.copy()))
    for name, arr in inputs.items():
        if name in dx and dx[name] is not None:
            targets.append(("input:" + name, arr, np.asarray(dx[name])))

    worst, worst_name, n = 0.0, "", 0
    for name, arr, analytic in targets:
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        an = analytic.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = scalar()
            flat[i] = orig - epsilon
            fm = scalar()
            flat[i] = orig
            num = (fp - fm) / (2 * epsilon)
            err = _rel_err(an[i], num)
            n += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{int(i)}]"
    return GradCheckReport(worst, worst_name, n, tol)


# --------------------------------------------------------------------------- #
# Model file: header, JSON metadata, then (name, shape, little-endian f64) records.
# --------------------------------------------------------------------------- #


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")  # tobytes() below is C-order; keeps 0-d shapes
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a model file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model file version {version}")
    (mlen,) = struct.unpack_from("<Q", data, 16)
    off = 24
    meta = json.loads(data[off : off + mlen])
    off += mlen
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        tensors[name] = arr.astype(DTYPE)
    return tensors, meta
