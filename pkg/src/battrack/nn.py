"""Shared per-row MLPs and the binary checkpoint format."""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from battrack import tensor as T
from battrack.tensor import Tensor

MAGIC = b"BATCKPT1"


class CheckpointError(ValueError):
    pass


class MLP:
    """Stack of affine layers applied row-wise to an ``[n, d]`` tensor.

    ``final_relu`` controls whether the last layer is rectified; PointNet-style
    set encoders want it, regression heads do not.
    """

    def __init__(self, in_dim: int, widths: Iterable[int], rng: np.random.Generator,
                 final_relu: bool = True, zero_last: bool = False):
        self.widths = list(widths)
        self.final_relu = final_relu
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        fan_in = in_dim
        for i, width in enumerate(self.widths):
            bound = 1.0 / np.sqrt(fan_in)
            if zero_last and i == len(self.widths) - 1:
                w, b = np.zeros((fan_in, width)), np.zeros(width)
            else:
                w = rng.uniform(-bound, bound, size=(fan_in, width))
                b = rng.uniform(-bound, bound, size=width)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b, requires_grad=True))
            fan_in = width
        self.in_dim = in_dim
        self.out_dim = fan_in

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = T.add_bias(T.matmul(x, w), b)
            if i < last or self.final_relu:
                x = T.relu(x)
        return x

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{j}"] = w
            out[f"{prefix}.b{j}"] = b
        return out


def save_checkpoint(path, arrays: Mapping[str, "np.ndarray | Tensor"]) -> None:
    """Write named float64 arrays in the BATCKPT1 little-endian layout."""
    chunks = [MAGIC]
    for name, value in arrays.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: missing BATCKPT1 magic")
    pos, out = 8, {}

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
    return out


def assign_parameters(params: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into live parameters, checking names and shapes."""
    missing = [n for n in params if n not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {', '.join(missing[:5])}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arrays[name].shape} != model {p.shape}")
        p.data = np.array(arrays[name], dtype=np.float64)
