"""Fixed-point special-function pipelines built on 256-entry lookup tables.

Formats (all configurable through the module-level builders):

* exp table: inputs in [-8, 0] sampled at 256 points, entries unsigned Q0.8
* sigmoid table: inputs in [-8, 8] sampled at 256 points, entries unsigned Q0.8
* reciprocal table: mantissa in [1, 2), entries round(2**16 / m)
* inverse-sqrt table: mantissa in [1, 4), entries round(2**15 / sqrt(m))

The mantissa tables are indexed after a leading-zero normalization shift.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .quant import qmax, round_half_away

LUT_SIZE = 256
LN_EPS = 2.0**-16


@dataclass(frozen=True)
class Lut256:
    entries: np.ndarray
    domain_lo: float
    domain_hi: float
    out_scale: float
    midpoint: bool = False  # bins centred between samples (mantissa tables)

    def __post_init__(self):
        if len(self.entries) != LUT_SIZE:
            raise ValueError("a LUT holds exactly 256 entries")

    def index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = self.domain_hi - self.domain_lo
        if self.midpoint:
            k = np.floor((x - self.domain_lo) / span * LUT_SIZE)
        else:
            k = round_half_away((x - self.domain_lo) / span * (LUT_SIZE - 1))
        return np.clip(k, 0, LUT_SIZE - 1).astype(np.int64)

    def lookup(self, x) -> np.ndarray:
        return self.entries[self.index(x)]

    def sample_points(self) -> np.ndarray:
        span = self.domain_hi - self.domain_lo
        if self.midpoint:
            return self.domain_lo + (np.arange(LUT_SIZE) + 0.5) * span / LUT_SIZE
        return np.linspace(self.domain_lo, self.domain_hi, LUT_SIZE)

    def dump(self, path: str | Path) -> None:
        xs = self.sample_points()
        lines = ["index,x,entry,value"]
        for k, (x, e) in enumerate(zip(xs, self.entries)):
            lines.append(f"{k},{x:.9g},{int(e)},{int(e) * self.out_scale:.9g}")
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class FixedVec:
    data: np.ndarray
    scale: float
    bits: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        if self.data.size and np.abs(self.data).max() > qmax(self.bits):
            raise ValueError(f"values exceed the symmetric {self.bits}-bit range")

    @classmethod
    def from_float(cls, x, scale: float, bits: int) -> "FixedVec":
        m = qmax(bits)
        return cls(np.clip(round_half_away(np.asarray(x, dtype=float) / scale), -m, m), scale, bits)

    def to_float(self) -> np.ndarray:
        return self.data * self.scale


def _build(fn, lo, hi, frac_bits, midpoint=False, cap=None) -> Lut256:
    span = hi - lo
    if midpoint:
        xs = lo + (np.arange(LUT_SIZE) + 0.5) * span / LUT_SIZE
    else:
        xs = np.linspace(lo, hi, LUT_SIZE)
    e = round_half_away(fn(xs) * 2.0**frac_bits)
    if cap is not None:
        e = np.minimum(e, cap)
    return Lut256(e.astype(np.int64), lo, hi, 2.0**-frac_bits, midpoint)


@lru_cache(maxsize=None)
def exp_lut(lo: float = -8.0, frac_bits: int = 8) -> Lut256:
    return _build(np.exp, lo, 0.0, frac_bits, cap=(1 << frac_bits) - 1)


@lru_cache(maxsize=None)
def sigmoid_lut(lim: float = 8.0, frac_bits: int = 8) -> Lut256:
    return _build(lambda x: 1.0 / (1.0 + np.exp(-x)), -lim, lim, frac_bits, cap=(1 << frac_bits) - 1)


@lru_cache(maxsize=None)
def reciprocal_lut(frac_bits: int = 16) -> Lut256:
    return _build(lambda m: 1.0 / m, 1.0, 2.0, frac_bits, midpoint=True)


@lru_cache(maxsize=None)
def inv_sqrt_lut(frac_bits: int = 15) -> Lut256:
    return _build(lambda m: 1.0 / np.sqrt(m), 1.0, 4.0, frac_bits, midpoint=True)


def _shift_round(x, sh):
    """Arithmetic right shift by ``sh`` (array allowed) with round-half-up."""
    x = np.asarray(x, dtype=np.int64)
    sh = np.asarray(sh, dtype=np.int64)
    up = np.where(sh > 0, (x + (np.int64(1) << np.maximum(sh - 1, 0))) >> np.maximum(sh, 0), x)
    return np.where(sh < 0, x << np.maximum(-sh, 0), up)


def softmax_pipeline(x: FixedVec, out_frac_bits: int = 14, counter: Counter | None = None) -> FixedVec:
    """Max, exp LUT on x - max, adder-tree sum, reciprocal LUT and multiply."""
    data = np.asarray(x.data, dtype=np.int64)
    n = data.shape[-1]
    if n == 0:
        raise ValueError("softmax needs at least one element")
    ex = exp_lut()
    diff = data - data.max(axis=-1, keepdims=True)  # integer, <= 0: shift invariant
    e = ex.lookup(diff * x.scale)
    total = e.sum(axis=-1, keepdims=True)  # >= 255: the max element maps to e^0

    rl = reciprocal_lut()
    exp2 = np.floor(np.log2(total)).astype(np.int64)
    mant = total / 2.0**exp2  # exact: leading-zero normalization of an integer
    r = rl.lookup(mant)
    # p = e / total = e * r * 2^-(16 + exp2); keep out_frac_bits
    p = _shift_round(e * r, 16 + exp2 - out_frac_bits)
    if counter is not None:
        rows = data.size // n
        counter.update(compare=rows * (n - 1), lut=rows * (n + 1), add=rows * (n - 1), mult=rows * n)
    return FixedVec(p, 2.0**-out_frac_bits, out_frac_bits + 2)


def layernorm_pipeline(
    x: FixedVec,
    gamma: FixedVec,
    beta: FixedVec,
    out_scale: float = 2.0**-10,
    out_bits: int = 16,
    guard_bits: int = 8,
    counter: Counter | None = None,
) -> FixedVec:
    """Two-pass LayerNorm: adder-tree mean, then variance, inverse-sqrt LUT and affine."""
    data = np.asarray(x.data, dtype=np.int64)
    d = data.shape[-1]
    if d < 2:
        raise ValueError("LayerNorm needs d >= 2")
    if gamma.data.shape[-1] != d or beta.data.shape[-1] != d:
        raise ValueError("gamma and beta must match the vector length")
    g = np.int64(1) << guard_bits
    total = data.sum(axis=-1, keepdims=True)
    mu = round_half_away(total * g / d).astype(np.int64)  # pass 1: fixed-point division
    r = data * g - mu
    var = round_half_away((r * r).sum(axis=-1, keepdims=True) / d).astype(np.int64)
    floor = math.ceil(LN_EPS / (x.scale * x.scale) * float(g * g))
    var = np.maximum(var, max(floor, 1))

    il = inv_sqrt_lut()
    e2 = np.floor(np.log2(var) / 2).astype(np.int64)
    mant = var / 4.0**e2
    inv = il.lookup(mant)  # 1/sqrt(var) = inv * 2^-(15 + e2)
    z_frac = 12
    z = _shift_round(r * inv, 15 + e2 - z_frac)  # normalized value, z_frac fractional bits

    y = (z * gamma.data) * (gamma.scale * 2.0**-z_frac) + beta.data * beta.scale
    if counter is not None:
        rows = data.size // d
        counter.update(add=rows * 3 * d, mult=rows * 3 * d, lut=rows)
    return FixedVec.from_float(y, out_scale, out_bits)


GELU_SHIFTS = (0, 1, 3, 4, 7)  # 1 + 1/2 + 1/8 + 1/16 + 1/128 = 1.7109375


def gelu_pipeline(x: FixedVec, shifts=GELU_SHIFTS, guard_bits: int = 8, counter: Counter | None = None) -> FixedVec:
    """x * sigmoid(1.702 x) with a shift-add scaler and a sigmoid LUT."""
    data = np.asarray(x.data, dtype=np.int64) << guard_bits
    scaled = sum(data >> s for s in shifts)  # multiplier-free 1.702 x
    sl = sigmoid_lut()
    sig = sl.lookup(scaled * (x.scale * 2.0**-guard_bits))
    y = np.asarray(x.data, dtype=np.int64) * sig
    if counter is not None:
        counter.update(add=data.size * (len(shifts) - 1), lut=data.size, mult=data.size)
    return FixedVec(y, x.scale * sl.out_scale, x.bits + 8)


def shift_add_constant(shifts=GELU_SHIFTS) -> float:
    return float(sum(2.0**-s for s in shifts))
