"""Selector-less crossbar reads: bilinear MVM, trilinear back-gate reads,
configuration (a)/(b) accumulation, bit-serial inputs, ADC and DAC models.

Currents are in uA (uS x V). A trilinear read is two analog evaluations on
the same array and row input: a modulated read with the back-gate operand
and a reference read at V_BG = 0. By default both are converted and the
codes subtracted digitally.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .device import DeviceParams, FeFETParams, OutOfBandWarning, eta_bg
from .quant import QuantScheme, QuantTensor, decompose_cells, map_to_conductance, qmax, round_half_away


class DacRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Peripherals:
    adc_bits: int = 8
    mux_ratio: int = 8
    dac_bits: int = 8
    v_read: float = 1.0
    adc_full_scale: float | None = None  # uA; None -> max achievable column current
    v_dac_max: float = 1.0
    subtract: str = "post-adc"  # or "pre-adc"
    sensing: str = "single-ended"  # or "differential" (signed column pair into one ADC)
    adc_range: str = "worst-case"  # or "calibrated": full scale = peak |current| of the batch
    debug_log: list | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.adc_bits < 1 or self.dac_bits < 1:
            raise ValueError("adc_bits and dac_bits must be >= 1")
        if self.mux_ratio < 1:
            raise ValueError("mux_ratio must be >= 1")
        if self.adc_full_scale is not None and not self.adc_full_scale > 0:
            raise ValueError("adc_full_scale must be positive")
        if not self.v_dac_max > 0:
            raise ValueError("v_dac_max must be positive")
        if self.subtract not in ("post-adc", "pre-adc"):
            raise ValueError("subtract must be 'post-adc' or 'pre-adc'")
        if self.sensing not in ("single-ended", "differential"):
            raise ValueError("sensing must be 'single-ended' or 'differential'")
        if self.adc_range not in ("worst-case", "calibrated"):
            raise ValueError("adc_range must be 'worst-case' or 'calibrated'")

    @classmethod
    def ideal(cls, bits: int = 40, **kw) -> "Peripherals":
        return cls(adc_bits=bits, dac_bits=bits, **kw)


@dataclass
class CrossbarArray:
    """One physical array of stored conductances (uS)."""

    g0: np.ndarray
    eta: float | np.ndarray = 0.157
    band: tuple[float, float] | None = (29.0, 69.0)

    def __post_init__(self):
        self.g0 = np.atleast_2d(np.asarray(self.g0, dtype=float))
        if self.g0.ndim != 2 or min(self.g0.shape) < 1:
            raise ValueError("g0 must be a non-empty 2-D matrix")
        if np.ndim(self.eta) and np.shape(self.eta) != self.g0.shape:
            raise ValueError("per-cell eta must match g0 shape")
        if self.band is not None:
            lo, hi = self.band
            if np.any((self.g0 < lo) | (self.g0 > hi)):
                warnings.warn("stored conductance outside the operating band", OutOfBandWarning, stacklevel=2)

    @property
    def rows(self) -> int:
        return self.g0.shape[0]

    @property
    def cols(self) -> int:
        return self.g0.shape[1]

    @property
    def eta_max(self) -> float:
        return float(np.max(self.eta))

    def g_max(self) -> float:
        return self.band[1] if self.band is not None else float(self.g0.max())

    def currents(self, v_in, v_bg=None) -> np.ndarray:
        """Analog column currents for row voltages ``v_in`` (..., rows)."""
        base = np.asarray(v_in, dtype=float) @ self.g0
        if v_bg is None:
            return base
        v_bg = np.asarray(v_bg, dtype=float)
        if np.ndim(self.eta) == 0:
            return base * (1.0 + self.eta * v_bg)
        return base + v_bg * (np.asarray(v_in, dtype=float) @ (self.g0 * self.eta))

    def column_trilinear(self, v_in, v_bg, periph: Peripherals) -> np.ndarray:
        """Baseline-subtracted column currents recovered from ADC codes (uA)."""
        r = trilinear_read(self, v_in, v_bg, periph)
        return r.digital_outputs * r.lsb


@dataclass
class ReadResult:
    digital_outputs: np.ndarray
    analog_currents: np.ndarray
    cycles: int
    lsb: float = 1.0
    clip_events: int = 0


def adc_quantize(current, periph: Peripherals, full_scale: float | None = None):
    fs = full_scale if full_scale is not None else periph.adc_full_scale
    if fs is None or not fs > 0:
        raise ValueError("ADC full scale must be positive")
    m = qmax(periph.adc_bits)
    codes = np.clip(round_half_away(np.asarray(current, dtype=float) / fs * m), -m, m)
    codes = codes.astype(np.int64)
    return int(codes) if codes.ndim == 0 else codes


def dac_quantize(v, dac_bits: int, v_max: float):
    """Uniform mid-rise DAC over [-v_max, v_max] with 2**dac_bits levels."""
    if not v_max > 0:
        raise ValueError("v_max must be positive")
    n = 1 << dac_bits
    step = 2.0 * v_max / n
    k = np.clip(np.floor((np.asarray(v, dtype=float) + v_max) / step), 0, n - 1)
    out = -v_max + (k + 0.5) * step
    return float(out) if np.ndim(out) == 0 else out


def mux_cycles(cols: int, periph: Peripherals) -> int:
    return math.ceil(cols / periph.mux_ratio)


def _full_scale(rows: int, g_max: float, eta_max: float, periph: Peripherals, kind: str) -> float:
    if periph.adc_full_scale is not None:
        return periph.adc_full_scale
    base = rows * g_max * periph.v_read
    if kind == "bilinear":
        return base
    if kind == "difference":
        return base * eta_max * periph.v_dac_max
    return base * (1.0 + eta_max * periph.v_dac_max)


def _log(periph: Peripherals, tag: str, currents) -> None:
    if periph.debug_log is not None:
        periph.debug_log.append((tag, np.array(currents, dtype=float, copy=True)))


def bilinear_mvm(xbar: CrossbarArray, v_in, periph: Peripherals) -> ReadResult:
    v_in = np.asarray(v_in, dtype=float)
    if v_in.shape[-1] != xbar.rows:
        raise ValueError(f"input length {v_in.shape[-1]} != rows {xbar.rows}")
    cur = xbar.currents(v_in)
    _log(periph, "bilinear", cur)
    fs = _full_scale(xbar.rows, xbar.g_max(), 0.0, periph, "bilinear")
    return ReadResult(adc_quantize(cur, periph, fs), cur, mux_cycles(xbar.cols, periph), fs / qmax(periph.adc_bits))


def _clip_bg(v_bg, periph: Peripherals):
    v = np.asarray(v_bg, dtype=float)
    clipped = np.clip(v, -periph.v_dac_max, periph.v_dac_max)
    return clipped, int(np.count_nonzero(clipped != v))


def trilinear_read(xbar: CrossbarArray, v_in, v_bg, periph: Peripherals) -> ReadResult:
    v_in = np.asarray(v_in, dtype=float)
    if v_in.shape[-1] != xbar.rows:
        raise ValueError(f"input length {v_in.shape[-1]} != rows {xbar.rows}")
    if np.ndim(v_bg) and np.shape(v_bg)[-1] not in (1, xbar.cols):
        raise ValueError(f"back-gate vector length {np.shape(v_bg)[-1]} != cols {xbar.cols}")
    v_bg, clips = _clip_bg(v_bg, periph)
    mod = xbar.currents(v_in, v_bg)
    ref = xbar.currents(v_in)
    diff = mod - ref
    _log(periph, "trilinear", diff)
    if periph.subtract == "post-adc":
        fs = _full_scale(xbar.rows, xbar.g_max(), xbar.eta_max, periph, "modulated")
        codes = adc_quantize(mod, periph, fs) - adc_quantize(ref, periph, fs)
    else:
        fs = _full_scale(xbar.rows, xbar.g_max(), xbar.eta_max, periph, "difference")
        codes = adc_quantize(diff, periph, fs)
    return ReadResult(np.asarray(codes), diff, 2 * mux_cycles(xbar.cols, periph), fs / qmax(periph.adc_bits), clips)


# ---------------------------------------------------------------------------
# accumulation configurations on physical arrays


def config_a_step(xbars: Sequence, a_rows, c_col, periph: Peripherals) -> np.ndarray:
    """One cycle of configuration (a): intra-crossbar addition.

    Crossbar i takes ``a_rows[i]`` on its rows and the shared back-gate
    column ``c_col``; its column outputs are summed digitally into o_i.
    """
    shape = _shape_of(xbars[0])
    if any(_shape_of(x) != shape for x in xbars):
        raise ValueError("all crossbars must share one shape")
    if len(a_rows) != len(xbars):
        raise ValueError("one input row per crossbar is required")
    return np.array([float(np.sum(x.column_trilinear(a, c_col, periph))) for x, a in zip(xbars, a_rows)])


def config_b_step(xbars: Sequence, b_rows, a_scalars, periph: Peripherals) -> np.ndarray:
    """One cycle of configuration (b): inter-crossbar addition.

    All crossbars hold identical weights; crossbar i takes ``b_rows[i]`` on
    its rows and broadcasts ``a_scalars[i]`` to every back gate.
    """
    if len(a_scalars) != len(xbars) or len(b_rows) != len(xbars):
        raise ValueError("one input row and one scalar per crossbar are required")
    ref = _weights_of(xbars[0])
    if any(not np.array_equal(_weights_of(x), ref) for x in xbars[1:]):
        raise ValueError("configuration (b) requires identical stored weights")
    out = None
    for x, b, a in zip(xbars, b_rows, a_scalars):
        col = x.column_trilinear(b, float(a), periph)
        out = col if out is None else out + col
    return out


def _shape_of(x):
    return x.g0.shape if isinstance(x, CrossbarArray) else (x.rows, x.cols)


def _weights_of(x):
    return x.g0 if isinstance(x, CrossbarArray) else x.weights.data


def config_a_matmul(a, bt, c, periph: Peripherals, eta: float = 0.157, band=None):
    """Full configuration-(a) loop for O = eta * A @ Bt @ C on physical arrays.

    ``bt`` is stored directly as conductance (uS); returns (O, cycles).
    """
    a, bt, c = (np.asarray(m, dtype=float) for m in (a, bt, c))
    if a.shape[1] != bt.shape[0] or bt.shape[1] != c.shape[0]:
        raise ValueError("non-conformable operands")
    xbars = [CrossbarArray(bt, eta, band) for _ in range(a.shape[0])]
    out = np.empty((a.shape[0], c.shape[1]))
    for j in range(c.shape[1]):
        out[:, j] = config_a_step(xbars, a, c[:, j], periph)
    return out, c.shape[1] * 2 * mux_cycles(bt.shape[1], periph)


def config_b_matmul(a, b, ct, periph: Peripherals, eta: float = 0.157, band=None):
    """Full configuration-(b) loop for O = eta * A @ B @ Ct; returns (O, cycles)."""
    a, b, ct = (np.asarray(m, dtype=float) for m in (a, b, ct))
    if a.shape[1] != b.shape[0] or b.shape[1] != ct.shape[0]:
        raise ValueError("non-conformable operands")
    xbars = [CrossbarArray(ct, eta, band) for _ in range(b.shape[0])]
    out = np.empty((a.shape[0], ct.shape[1]))
    for r in range(a.shape[0]):
        out[r] = config_b_step(xbars, b, a[r], periph)
    return out, a.shape[0] * 2 * mux_cycles(ct.shape[1], periph)


# ---------------------------------------------------------------------------
# signed, multi-cell, tiled weight storage


@dataclass(frozen=True)
class ReadCost:
    """Hardware events for one input vector applied to a WeightArray."""

    array_reads: int
    cell_reads: int
    adc_conversions: int
    cycles: int
    bg_lines: int

    def scaled(self, k: int) -> dict:
        return {
            "array_reads": self.array_reads * k,
            "cell_reads": self.cell_reads * k,
            "adc_conversions": self.adc_conversions * k,
            "cycles": self.cycles * k,
            "bg_lines": self.bg_lines * k,
        }


def array_read_cost(rows: int, cols: int, n_planes: int, in_bits: int, periph: Peripherals,
                    trilinear: bool, sub_rows: int = 64, sub_cols: int = 64) -> ReadCost:
    """Events for one bit-serial input vector on a tiled signed weight array (shape only)."""
    phys = cols * n_planes
    row_tiles = math.ceil(rows / sub_rows)
    col_tiles = math.ceil(phys / sub_cols)
    widest = min(sub_cols, phys)
    evals = 2 if trilinear else 1
    convs = 1 if (trilinear and periph.subtract == "pre-adc") else evals
    pairs = 1 if periph.sensing == "differential" else 2
    return ReadCost(
        array_reads=in_bits * evals * 2 * row_tiles * col_tiles,
        cell_reads=in_bits * evals * 2 * rows * phys,
        adc_conversions=in_bits * convs * pairs * row_tiles * phys,
        cycles=in_bits * evals * mux_cycles(widest, periph),
        bg_lines=2 * row_tiles * phys if trilinear else 0,
    )


class WeightArray:
    """A signed integer matrix programmed onto positive/negative arrays.

    Each weight occupies ``cells_per_weight`` adjacent physical columns
    (LSB digit first); the logical matrix is tiled into subarrays whose
    partial sums are added digitally. A zero digit is stored at the band
    floor in both arrays so the positive-minus-negative difference cancels it.
    """

    def __init__(
        self,
        weights: QuantTensor,
        bits_per_cell: int,
        g_lo: float,
        g_hi: float,
        eta: float = 0.0,
        *,
        device: DeviceParams | None = None,
        per_cell_eta: bool = False,
        sub_rows: int = 64,
        sub_cols: int = 64,
    ):
        w = np.atleast_2d(weights.data)
        self.weights = QuantTensor(w, weights.scale, weights.bits)
        self.bits_per_cell = bits_per_cell
        self.g_lo, self.g_hi = g_lo, g_hi
        self.step = (g_hi - g_lo) / ((1 << bits_per_cell) - 1)
        self.sub_rows, self.sub_cols = sub_rows, sub_cols
        self.rows, self.cols = w.shape

        dec = decompose_cells(self.weights, bits_per_cell)
        self.n_planes = len(dec.planes)
        digits = np.stack(dec.planes, axis=-1).reshape(self.rows, self.cols * self.n_planes)
        sign = np.repeat(dec.sign_plane, self.n_planes, axis=1)
        pos = map_to_conductance(np.where(sign > 0, digits, 0), bits_per_cell, g_lo, g_hi)
        neg = map_to_conductance(np.where(sign < 0, digits, 0), bits_per_cell, g_lo, g_hi)
        self.g_pos = np.asarray(pos, dtype=float).reshape(self.rows, -1)
        self.g_neg = np.asarray(neg, dtype=float).reshape(self.rows, -1)

        if per_cell_eta:
            if device is None:
                raise ValueError("per-cell eta requires device parameters")
            self.eta_pos, self.eta_neg = eta_bg(self.g_pos, device), eta_bg(self.g_neg, device)
        else:
            self.eta_pos = self.eta_neg = float(eta)
        self.eta = float(eta)
        self.eta_max = float(max(np.max(self.eta_pos), np.max(self.eta_neg)))

        self.row_tiles = [slice(r, min(r + sub_rows, self.rows)) for r in range(0, self.rows, sub_rows)]
        pc = self.phys_cols
        self.col_tiles = [slice(c, min(c + sub_cols, pc)) for c in range(0, pc, sub_cols)]

    @classmethod
    def dg_fefet(cls, weights, scheme: QuantScheme, device: DeviceParams, *, per_cell_eta=False, sub_rows=64, sub_cols=64):
        return cls(
            weights, scheme.bits_per_cell, device.band_lo, device.band_hi, device.eta,
            device=device, per_cell_eta=per_cell_eta, sub_rows=sub_rows, sub_cols=sub_cols,
        )

    @classmethod
    def single_gate(cls, weights, scheme: QuantScheme, cell: FeFETParams = FeFETParams(), *, sub_rows=64, sub_cols=64):
        return cls(weights, scheme.bits_per_cell, cell.g_off, cell.g_on, 0.0, sub_rows=sub_rows, sub_cols=sub_cols)

    @property
    def phys_cols(self) -> int:
        return self.cols * self.n_planes

    @property
    def cells(self) -> int:
        """Programmed cells, counting both signed arrays."""
        return 2 * self.rows * self.phys_cols

    @property
    def n_subarrays(self) -> int:
        return 2 * len(self.row_tiles) * len(self.col_tiles)

    def read_cost(self, in_bits: int, periph: Peripherals, trilinear: bool) -> ReadCost:
        return array_read_cost(self.rows, self.cols, self.n_planes, in_bits, periph, trilinear, self.sub_rows, self.sub_cols)

    # -- analog evaluation -------------------------------------------------

    def _bit_planes(self, q: QuantTensor, v_read: float) -> np.ndarray:
        data = np.atleast_2d(q.data)
        if data.shape[-1] != self.rows:
            raise ValueError(f"input length {data.shape[-1]} != rows {self.rows}")
        mag, sgn = np.abs(data), np.sign(data)
        return np.stack([sgn * ((mag >> b) & 1) for b in range(q.bits)]) * v_read  # (B, K, R)

    def _partials(self, volts, v_bg, periph: Peripherals) -> np.ndarray:
        """Per-step signed digit sums in units of (bit x digit), shape (B, K, phys_cols)."""
        trilinear = v_bg is not None
        out = np.zeros(volts.shape[:-1] + (self.phys_cols,))
        scale = 1.0 / (periph.v_read * self.step)
        lsb_of = lambda fs: fs / qmax(periph.adc_bits)
        for rs in self.row_tiles:
            v = volts[..., rs]
            tile_rows = rs.stop - rs.start
            for cs in self.col_tiles:
                reads = []  # (modulated, reference) per signed array
                for g, eta in ((self.g_pos, self.eta_pos), (self.g_neg, self.eta_neg)):
                    g_t = g[rs, cs]
                    base = v @ g_t
                    if not trilinear:
                        reads.append((base, None))
                        continue
                    e_t = eta if np.ndim(eta) == 0 else eta[rs, cs]
                    vb = v_bg[..., cs]
                    mod = base * (1.0 + e_t * vb) if np.ndim(e_t) == 0 else base + vb * (v @ (g_t * e_t))
                    reads.append((mod, base))
                if periph.sensing == "differential":
                    # column pair subtracted in the current domain, one conversion path
                    reads = [(reads[0][0] - reads[1][0], None if not trilinear else reads[0][1] - reads[1][1])]
                est = []
                for mod, base in reads:
                    if periph.adc_range == "calibrated" and periph.adc_full_scale is None:
                        sig = mod if (not trilinear or periph.subtract == "post-adc") else mod - base
                        fs = float(np.max(np.abs(sig))) or 1.0
                        codes = adc_quantize(sig, periph, fs)
                        if trilinear and periph.subtract == "post-adc":
                            codes = codes - adc_quantize(base, periph, fs)
                        est.append(codes * lsb_of(fs))
                        continue
                    if not trilinear:
                        fs = _full_scale(tile_rows, self.g_hi, 0.0, periph, "bilinear")
                        _log(periph, "bilinear", mod)
                        est.append(adc_quantize(mod, periph, fs) * lsb_of(fs))
                        continue
                    _log(periph, "trilinear", mod - base)
                    if periph.subtract == "post-adc":
                        fs = _full_scale(tile_rows, self.g_hi, self.eta_max, periph, "modulated")
                        codes = adc_quantize(mod, periph, fs) - adc_quantize(base, periph, fs)
                    else:
                        fs = _full_scale(tile_rows, self.g_hi, self.eta_max, periph, "difference")
                        codes = adc_quantize(mod - base, periph, fs)
                    est.append(codes * lsb_of(fs))
                part = (est[0] - est[1] if len(est) == 2 else est[0]) * scale
                if not trilinear:
                    part = round_half_away(part)  # digital adder works on integers
                out[..., cs] += part
        return out

    def _shift_add(self, partials: np.ndarray) -> np.ndarray:
        n_bits = partials.shape[0]
        p = partials.reshape(partials.shape[:-1] + (self.cols, self.n_planes))
        bit_w = (2.0 ** np.arange(n_bits)).reshape((n_bits,) + (1,) * (p.ndim - 1))
        cell_w = 2.0 ** (self.bits_per_cell * np.arange(self.n_planes))
        return np.einsum("bkcp,p->kc", p * bit_w, cell_w)

    def mvm(self, q: QuantTensor, periph: Peripherals) -> np.ndarray:
        """Bit-serial bilinear MVM for a batch of inputs; returns (K, cols) integers."""
        volts = self._bit_planes(q, periph.v_read)
        out = self._shift_add(self._partials(volts, None, periph))
        return np.rint(out).astype(np.int64)

    def trilinear(self, q: QuantTensor, v_bg, periph: Peripherals) -> np.ndarray:
        """Bit-serial trilinear read with baseline subtraction.

        ``v_bg`` is broadcast to (K, cols) logical columns. Returns the
        estimate of sum_i q_i * w_ij * eta * v_bg_j, shape (K, cols).
        """
        volts = self._bit_planes(q, periph.v_read)
        k = volts.shape[1]
        vb = np.broadcast_to(np.asarray(v_bg, dtype=float), (k, self.cols))
        vb = np.repeat(np.clip(vb, -periph.v_dac_max, periph.v_dac_max), self.n_planes, axis=-1)
        return self._shift_add(self._partials(volts, vb[None], periph))

    def column_trilinear(self, q: QuantTensor, v_bg, periph: Peripherals) -> np.ndarray:
        out = self.trilinear(q, v_bg, periph)
        return out[0] if np.ndim(q.data) == 1 else out


def bit_serial_mvm(xbar: WeightArray, q_in: QuantTensor, periph: Peripherals, scheme: QuantScheme) -> np.ndarray:
    """Integer MVM with inputs applied one bit plane per step, LSB first."""
    if q_in.bits != scheme.input_bits:
        raise ValueError("input bit width does not match the scheme")
    out = xbar.mvm(q_in, periph)
    return out[0] if np.ndim(q_in.data) == 1 else out


def bit_serial_cycles(xbar: WeightArray, scheme: QuantScheme, periph: Peripherals) -> int:
    return xbar.read_cost(scheme.input_bits, periph, trilinear=False).cycles


def dump_currents(path: str | Path, log: list) -> None:
    """Write logged pre-ADC currents as CSV rows: index, kind, values..."""
    with open(path, "w") as fh:
        fh.write("read,kind,currents_uA\n")
        for i, (tag, cur) in enumerate(log):
            vals = " ".join(f"{x:.9g}" for x in np.ravel(cur))
            fh.write(f"{i},{tag},{vals}\n")


def config_a_run(xbar: WeightArray, a_rows: QuantTensor, c_cols, periph: Peripherals, chunk: int = 64) -> np.ndarray:
    """Full configuration-(a) loop over the columns of C on one stored matrix.

    Output element (i, j) is the digital sum of crossbar i's column outputs
    while column j of C drives the back gates; replicas share ``xbar``.
    Returns an (n_a, n_c) array in units of sum(a * w * eta * v_bg).
    """
    c_cols = np.asarray(c_cols, dtype=float)
    if c_cols.shape[0] != xbar.cols:
        raise ValueError("back-gate columns must match stored columns")
    a = np.atleast_2d(a_rows.data)
    n_a, n_c = a.shape[0], c_cols.shape[1]
    out = np.empty((n_a, n_c))
    for j0 in range(0, n_c, chunk):
        js = range(j0, min(j0 + chunk, n_c))
        q = QuantTensor(np.repeat(a, len(js), axis=0), a_rows.scale, a_rows.bits)
        vb = np.tile(c_cols[:, js].T, (n_a, 1))
        vals = xbar.trilinear(q, vb, periph).sum(axis=1)
        out[:, j0 : j0 + len(js)] = vals.reshape(n_a, len(js))
    return out


def config_b_run(xbar: WeightArray, b_rows: QuantTensor, a_volts, periph: Peripherals, chunk: int = 64) -> np.ndarray:
    """Full configuration-(b) loop over the rows of A on one stored matrix.

    Crossbar i takes ``b_rows[i]`` on its rows and broadcasts a_volts[r, i]
    to its back gates; outputs are summed across crossbars per column.
    Returns an (n_r, cols) array.
    """
    a_volts = np.asarray(a_volts, dtype=float)
    b = np.atleast_2d(b_rows.data)
    n_r, n_i = a_volts.shape
    if n_i != b.shape[0]:
        raise ValueError("one back-gate scalar per crossbar is required")
    out = np.empty((n_r, xbar.cols))
    for r0 in range(0, n_r, chunk):
        rs = range(r0, min(r0 + chunk, n_r))
        q = QuantTensor(np.tile(b, (len(rs), 1)), b_rows.scale, b_rows.bits)
        vb = a_volts[r0 : r0 + len(rs)].reshape(-1, 1)
        vals = xbar.trilinear(q, vb, periph).reshape(len(rs), n_i, xbar.cols)
        out[r0 : r0 + len(rs)] = vals.sum(axis=1)
    return out
