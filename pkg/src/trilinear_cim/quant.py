"""Symmetric per-tensor INT quantization and multi-bit-cell weight slicing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def qmax(bits: int) -> int:
    return (1 << (bits - 1)) - 1


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantScheme:
    """Bit widths and per-tensor scales shared by every execution mode."""

    input_bits: int = 8
    weight_bits: int = 8
    adc_bits: int = 8
    dac_bits: int = 8
    bits_per_cell: int = 2
    act_scale: float = 1.0
    weight_scale: float = 1.0

    def __post_init__(self):
        for name in ("input_bits", "weight_bits", "adc_bits", "dac_bits", "bits_per_cell"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.bits_per_cell > self.weight_bits:
            raise ValueError("bits_per_cell cannot exceed weight_bits")
        if not (self.act_scale > 0 and self.weight_scale > 0):
            raise ValueError("scales must be positive")

    @property
    def cells_per_weight(self) -> int:
        return math.ceil(self.weight_bits / self.bits_per_cell)


@dataclass
class QuantTensor:
    data: np.ndarray
    scale: float
    bits: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        m = qmax(self.bits)
        if self.data.size and np.abs(self.data).max() > m:
            raise ValueError(f"values exceed symmetric {self.bits}-bit range")

    def __len__(self):
        return len(self.data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self) -> "QuantTensor":
        return QuantTensor(self.data.T, self.scale, self.bits)

    def __getitem__(self, idx) -> "QuantTensor":
        return QuantTensor(self.data[idx], self.scale, self.bits)


@dataclass
class CellDecomposition:
    """Base-2^bits_per_cell digits of |w|, LSB first, plus the sign routing."""

    planes: list[np.ndarray]
    bits_per_cell: int
    sign_plane: np.ndarray = field(repr=False)


def calibrate_scale(samples, bits: int) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("cannot calibrate on an empty tensor")
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        return 1.0
    return peak / qmax(bits)


def quantize(x, scale: float, bits: int) -> QuantTensor:
    if not scale > 0:
        raise ValueError("scale must be positive")
    m = qmax(bits)
    q = np.clip(round_half_away(np.asarray(x, dtype=float) / scale), -m, m)
    return QuantTensor(q.astype(np.int64), float(scale), bits)


def quantize_calibrated(x, bits: int) -> QuantTensor:
    """Quantize with a scale calibrated on ``x`` itself."""
    return quantize(x, calibrate_scale(x, bits), bits)


def dequantize(q: QuantTensor) -> np.ndarray:
    return q.data.astype(float) * q.scale


def decompose_cells(w: QuantTensor, bits_per_cell: int) -> CellDecomposition:
    if bits_per_cell > w.bits:
        raise ValueError("bits_per_cell cannot exceed the tensor bit width")
    n_planes = math.ceil(w.bits / bits_per_cell)
    mag = np.abs(w.data)
    mask = (1 << bits_per_cell) - 1
    planes = [(mag >> (i * bits_per_cell)) & mask for i in range(n_planes)]
    sign = np.where(w.data < 0, -1, 1).astype(np.int64)
    return CellDecomposition(planes, bits_per_cell, sign)


def recombine(planes, sign_plane, bits_per_cell: int) -> np.ndarray:
    planes = [np.asarray(p, dtype=np.int64) for p in planes]
    if not planes:
        raise ValueError("need at least one plane")
    sign = np.asarray(sign_plane, dtype=np.int64)
    for p in planes:
        if p.shape != planes[0].shape:
            raise ValueError("plane shapes differ")
    if sign.shape != planes[0].shape:
        raise ValueError("sign plane shape does not match planes")
    total = np.zeros_like(planes[0])
    for i, p in enumerate(planes):
        total += p << (i * bits_per_cell)
    return sign * total


def map_to_conductance(plane_value, bits_per_cell: int, band_lo: float, band_hi: float):
    """Affine digit -> conductance map; digit 0 sits on the band floor."""
    v = np.asarray(plane_value)
    levels = (1 << bits_per_cell) - 1
    if np.any(v < 0) or np.any(v > levels):
        raise ValueError(f"plane value outside [0, {levels}]")
    step = (band_hi - band_lo) / levels
    out = band_lo + v * step
    return float(out) if np.ndim(out) == 0 else out
