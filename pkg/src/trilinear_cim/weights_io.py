"""Flat binary weight files: little-endian float32, row-major, with a text sidecar.

The sidecar ``<stem>.shapes`` lists one tensor per line as
``name dim0 x dim1 [x ...]`` in file order, for example::

    layer0.w_q 2x4x8
    layer0.w_o 8x8
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .attention import LayerWeights

FIELDS = tuple(LayerWeights.__dataclass_fields__)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".shapes")


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    lines = []
    with open(path, "wb") as fh:
        for name, arr in tensors.items():
            if any(c.isspace() for c in name):
                raise ValueError(f"tensor name {name!r} contains whitespace")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(arr.tobytes(order="C"))
            lines.append(f"{name} {'x'.join(str(d) for d in arr.shape)}")
    _sidecar(path).write_text("\n".join(lines) + "\n")


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    side = _sidecar(path)
    if not side.exists():
        raise FileNotFoundError(f"missing shape sidecar {side}")
    raw = np.fromfile(path, dtype="<f4")
    out, offset = {}, 0
    for lineno, line in enumerate(side.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            name, dims = line.split()
            shape = tuple(int(d) for d in dims.split("x"))
        except ValueError:
            raise ValueError(f"{side}:{lineno}: expected 'name AxBx...', got {line!r}") from None
        size = math.prod(shape)
        if offset + size > raw.size:
            raise ValueError(f"{path} is shorter than its sidecar declares")
        out[name] = raw[offset : offset + size].reshape(shape).astype(float)
        offset += size
    if offset != raw.size:
        raise ValueError(f"{path} holds {raw.size - offset} undeclared values")
    return out


def save_weights(path: str | Path, layers: list[LayerWeights]) -> None:
    tensors = {}
    for l, w in enumerate(layers):
        for f in FIELDS:
            tensors[f"layer{l}.{f}"] = getattr(w, f)
    save_tensors(path, tensors)


def load_weights(path: str | Path) -> list[LayerWeights]:
    tensors = load_tensors(path)
    layers = []
    l = 0
    while f"layer{l}.w_q" in tensors:
        try:
            layers.append(LayerWeights(**{f: tensors.pop(f"layer{l}.{f}") for f in FIELDS}))
        except KeyError as e:
            raise ValueError(f"layer {l} is missing tensor {e.args[0]}") from None
        l += 1
    if tensors:
        raise ValueError(f"unrecognized tensors: {sorted(tensors)}")
    if not layers:
        raise ValueError("no layers found")
    return layers
