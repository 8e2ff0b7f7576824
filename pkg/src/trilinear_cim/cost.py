"""Analytical energy, latency, area and write-volume accounting over event traces.

Units: energy in fJ, latency in ns, area in single-gate cell-area units.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

from .attention import AttentionJob, HardwareConfig, canonical_mode
from .crossbar import Peripherals, array_read_cost
from .quant import QuantScheme
from .trace import Trace

MIB = 1 << 20


@dataclass(frozen=True)
class EnergyParams:
    read_energy_per_cell: float = 1.0  # fJ
    write_energy_per_cell: float = 0.5  # pJ
    read_latency: float = 10.0  # ns per read cycle
    write_latency: float = 50.0  # ns per write phase
    dac_switch_energy: float = 2.0  # fJ per line per cycle
    driver_energy: float = 1.0  # fJ per line per cycle
    wire_cap_per_um: float = 0.2  # fF/um
    bg_line_length_per_col: float = 64.0  # um: subarray rows x 1 um pitch
    gate_cap_per_cell: float = 0.05  # fF
    v_swing: float = 1.0  # V
    adc_energy_per_conversion: float = 20.0  # fJ
    sfu_energy_per_op: float = 0.5  # fJ
    sfu_latency_per_op: float = 0.01  # ns, amortized over SIMD lanes
    buffer_energy_per_byte: float = 10.0  # fJ
    overlap: float = 0.0  # token-pipelining credit in [0, 1]

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be nonnegative")
        if not self.write_latency > self.read_latency:
            raise ValueError("write_latency must exceed read_latency")
        if self.overlap > 1:
            raise ValueError("overlap must lie in [0, 1]")


def write_volume(n_tokens: int, d_k: int, h: int, n_layers: int, value_bits: int, bits_per_cell: int) -> int:
    """Runtime-programmed cells: K and V operands, signed pair, per inference."""
    for v in (n_tokens, d_k, h, n_layers, value_bits, bits_per_cell):
        if int(v) != v or v < 1:
            raise ValueError("write_volume takes positive integers")
    cells_per_value = -(-value_bits // bits_per_cell)
    return 2 * n_tokens * d_k * h * n_layers * cells_per_value * 2


def bg_modulation_components(n_cols: int, n_rows: int, cycles: int, params: EnergyParams) -> dict:
    """The four back-gate cost terms in fJ; capacitive terms as C V^2 / 2."""
    v2 = params.v_swing**2
    wire_c = params.wire_cap_per_um * params.bg_line_length_per_col
    return {
        "dac": cycles * n_cols * params.dac_switch_energy,
        "driver": cycles * n_cols * params.driver_energy,
        "wire": cycles * n_cols * wire_c * v2 / 2,
        "gate": cycles * n_cols * n_rows * params.gate_cap_per_cell * v2 / 2,
    }


def bg_modulation_energy(n_cols: int, n_rows: int, cycles: int, params: EnergyParams) -> float:
    return float(sum(bg_modulation_components(n_cols, n_rows, cycles, params).values()))


# ---------------------------------------------------------------------------
# stage entries


ENERGY_KEYS = ("array-read", "write", "bg-modulation", "dac", "sfu", "buffer")


@dataclass
class StageEntry:
    reads: int = 0
    cell_reads: int = 0
    writes_cells: int = 0
    cycles: int = 0
    energy: dict = field(default_factory=lambda: {k: 0.0 for k in ENERGY_KEYS})
    latency: float = 0.0  # ns, array reads and writes
    sfu_latency: float = 0.0  # ns, itemized separately

    @property
    def total_energy(self) -> float:
        return float(sum(self.energy.values()))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total_energy"] = self.total_energy
        return d


def stage_cost(counts: Counter, params: EnergyParams = EnergyParams(), sub_rows: int = 64,
               parallel_crossbars: int = 1) -> StageEntry:
    """Cost of one stage's events; back-gate terms appear only when lines were driven."""
    c = Counter(counts)
    bg = bg_modulation_components(c["bg_lines"], sub_rows, 1, params)
    sfu_ops = c["sfu_compare"] + c["sfu_lut"] + c["sfu_add"] + c["sfu_mult"]
    energy = {
        "array-read": c["cell_reads"] * params.read_energy_per_cell
        + c["adc_conversions"] * params.adc_energy_per_conversion,
        "write": c["writes_cells"] * params.write_energy_per_cell * 1e3,
        "bg-modulation": bg["driver"] + bg["wire"] + bg["gate"],
        "dac": bg["dac"],
        "sfu": sfu_ops * params.sfu_energy_per_op,
        "buffer": c["buffer_bytes"] * params.buffer_energy_per_byte,
    }
    par = max(1, min(parallel_crossbars, c["replicas"] or 1))
    latency = math.ceil(c["cycles"] / par) * params.read_latency + c["write_phases"] * params.write_latency
    return StageEntry(
        reads=c["array_reads"], cell_reads=c["cell_reads"], writes_cells=c["writes_cells"], cycles=c["cycles"],
        energy=energy, latency=float(latency), sfu_latency=sfu_ops * params.sfu_latency_per_op,
    )


def aggregate_heads(entries: list[StageEntry]) -> StageEntry:
    """Heads run in parallel: latency is the max, energy and counts are sums."""
    if not entries:
        raise ValueError("need at least one head")
    out = StageEntry()
    for e in entries:
        out.reads += e.reads
        out.cell_reads += e.cell_reads
        out.writes_cells += e.writes_cells
        out.cycles += e.cycles
        for k, v in e.energy.items():
            out.energy[k] = out.energy.get(k, 0.0) + v
    out.latency = max(e.latency for e in entries)
    out.sfu_latency = max(e.sfu_latency for e in entries)
    return out


def _sum_entries(entries: list[StageEntry]) -> StageEntry:
    out = aggregate_heads(entries)
    out.latency = sum(e.latency for e in entries)
    out.sfu_latency = sum(e.sfu_latency for e in entries)
    return out


@dataclass
class CostReport:
    mode: str
    stages: dict[str, StageEntry]
    totals: StageEntry
    total_latency: float  # ns, including SFU time and the overlap credit
    head_aggregation: str = "latency: max over heads per layer; energy: sum over heads and layers"
    extra: dict = field(default_factory=dict)

    @property
    def writes_cells(self) -> int:
        return self.totals.writes_cells

    @property
    def total_energy(self) -> float:
        return self.totals.total_energy

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "head_aggregation": self.head_aggregation,
            "stages": {k: v.as_dict() for k, v in self.stages.items()},
            "totals": self.totals.as_dict(),
            "total_latency": self.total_latency,
            "writes_cells": self.writes_cells,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def csv_rows(self) -> list[dict]:
        rows = []
        for name, e in list(self.stages.items()) + [("total", self.totals)]:
            row = {"mode": self.mode, "stage": name, "reads": e.reads, "cell_reads": e.cell_reads,
                   "writes_cells": e.writes_cells, "cycles": e.cycles}
            row.update({f"energy_{k.replace('-', '_')}": e.energy.get(k, 0.0) for k in ENERGY_KEYS})
            row.update(energy_total=e.total_energy, latency=e.latency, sfu_latency=e.sfu_latency)
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        rows = self.csv_rows()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()


def build_report(trace: Trace, mode: str, params: EnergyParams = EnergyParams(),
                 hw: HardwareConfig | None = None) -> CostReport:
    """Per-stage costs: head max within a layer, then summed over layers."""
    hw = hw or HardwareConfig()
    layers = sorted({l for l, _, _ in trace.entries})
    stages: dict[str, StageEntry] = {}
    for stage in trace.stages():
        per_layer = []
        for l in layers:
            heads = [stage_cost(c, params, hw.sub_rows, hw.parallel_crossbars)
                     for (ll, _, s), c in trace.entries.items() if ll == l and s == stage]
            if heads:
                per_layer.append(aggregate_heads(heads))
        stages[stage] = _sum_entries(per_layer)
    totals = _sum_entries(list(stages.values())) if stages else StageEntry()
    serial = totals.latency + totals.sfu_latency
    longest = max((e.latency + e.sfu_latency for e in stages.values()), default=0.0)
    total_latency = (1 - params.overlap) * serial + params.overlap * longest
    return CostReport(canonical_mode(mode), stages, totals, total_latency)


# ---------------------------------------------------------------------------
# buffer, hierarchy and area


def buffer_residency(mode: str, n_tokens: int, d_model: int, bytes_per_elem: int = 1) -> int:
    """Peak intermediate bytes: X, Q, K for the conventional flow; X alone when fused."""
    if n_tokens < 0 or d_model < 0 or bytes_per_elem < 0:
        raise ValueError("dimensions must be nonnegative")
    mats = 1 if mode in ("trilinear", "cim-trilinear") else 3
    if mode not in ("trilinear", "cim-trilinear", "conventional", "bilinear", "cim-bilinear",
                    "digital", "quantized-digital"):
        raise ValueError(f"unknown mode {mode!r}")
    return mats * n_tokens * d_model * bytes_per_elem


class HierarchyError(ValueError):
    pass


@dataclass(frozen=True)
class HierarchyPlan:
    n_tiles: int
    pes_per_tile: int
    arrays_per_pe: int
    subarray_rows: int
    subarray_cols: int
    global_buffer_bytes: int

    @property
    def n_arrays(self) -> int:
        return self.n_tiles * self.pes_per_tile * self.arrays_per_pe

    @property
    def capacity_cells(self) -> int:
        return self.n_arrays * self.subarray_rows * self.subarray_cols


def _pow2_at_least(n: int) -> int:
    return 1 << max(0, math.ceil(math.log2(n))) if n > 1 else 1


def plan_hierarchy(capacity_cells: int, subarray_rows: int = 64, subarray_cols: int = 64,
                   buffer_bytes: int = 0, arrays_per_pe_max: int = 4, pes_per_tile_max: int = 4,
                   max_arrays: int = 1 << 20) -> HierarchyPlan:
    """Smallest power-of-two array count covering the cells; buffer rounded up to MiB."""
    if capacity_cells <= 0:
        raise ValueError("capacity must be positive")
    n = _pow2_at_least(math.ceil(capacity_cells / (subarray_rows * subarray_cols)))
    if n > max_arrays:
        raise HierarchyError(f"{n} arrays exceed the area ceiling of {max_arrays}")
    apes = min(n, arrays_per_pe_max)
    pes = min(n // apes, pes_per_tile_max)
    tiles = n // (apes * pes)
    buf = math.ceil(buffer_bytes / MIB) * MIB
    return HierarchyPlan(tiles, pes, apes, subarray_rows, subarray_cols, buf)


@dataclass(frozen=True)
class AreaParams:
    cell_area: float = 1.0  # single-gate cell
    dg_cell_area: float = 1.0  # double-gate cell
    col_periph: float = 8.0  # mux/ADC share per physical column, cell units
    bg_col_overhead: float = 103.874  # back-gate driver + DAC per column; see calibrate_bg_overhead


def _stored_arrays(job: AttentionJob, scheme: QuantScheme, mode: str) -> list[tuple[int, int, bool, bool]]:
    """(rows, logical cols, double-gate, needs back-gate drivers) per stored matrix, one layer."""
    d, d_k, n = job.d_model, job.d_k, job.n_tokens
    mode = canonical_mode(mode)
    out = [(d, d, False, False)]  # W_O
    if mode == "cim-trilinear":
        for _ in range(job.n_heads):
            out += [(d, d_k, True, True), (d_k, d, True, True), (d, d_k, True, True)]
    else:
        for _ in range(job.n_heads):
            out += [(d, d_k, False, False)] * 3 + [(d_k, n, False, False), (n, d_k, False, False)]
    return out


def relative_area(job: AttentionJob, scheme: QuantScheme = QuantScheme(), mode: str = "cim-trilinear",
                  params: AreaParams = AreaParams()) -> float:
    """Relative array area per inference; each stored matrix is counted once."""
    p = scheme.cells_per_weight
    total = 0.0
    for rows, cols, dg, bg in _stored_arrays(job, scheme, mode):
        phys = 2 * cols * p
        total += rows * phys * (params.dg_cell_area if dg else params.cell_area)
        total += phys * params.col_periph
        if bg:
            total += phys * params.bg_col_overhead
    return total * job.n_layers


def reference_area_job() -> AttentionJob:
    """BERT-base shape used to calibrate the back-gate column overhead."""
    import numpy as np

    return AttentionJob(128, 768, 64, 12, x_input=np.zeros((128, 768)))


def calibrate_bg_overhead(target_ratio: float = 1.373, job: AttentionJob | None = None,
                          scheme: QuantScheme = QuantScheme(), params: AreaParams = AreaParams()) -> float:
    """bg_col_overhead making trilinear/bilinear area equal ``target_ratio`` (linear solve)."""
    from dataclasses import replace

    job = job or reference_area_job()
    a0 = relative_area(job, scheme, "cim-trilinear", replace(params, bg_col_overhead=0.0))
    a1 = relative_area(job, scheme, "cim-trilinear", replace(params, bg_col_overhead=1.0))
    bil = relative_area(job, scheme, "cim-bilinear", params)
    return (target_ratio * bil - a0) / (a1 - a0)


# ---------------------------------------------------------------------------
# analytic traces (same events as the functional run, without the arithmetic)


def _softmax_ops(n_r: int, n_c: int, causal: bool) -> Counter:
    ops = Counter()
    lengths = [min(i + 1, n_c) for i in range(n_r)] if causal else [n_c] * n_r
    for m in lengths:
        ops.update(compare=m - 1, lut=m + 1, add=m - 1, mult=m)
    return ops


def analytic_trace(job: AttentionJob, scheme: QuantScheme = QuantScheme(), hw: HardwareConfig | None = None,
                   mode: str | None = None) -> Trace:
    """Event trace of ``run_mode`` computed from shapes alone."""
    hw = hw or HardwareConfig()
    mode = canonical_mode(mode or job.mode)
    periph: Peripherals = hw.peripherals(scheme)
    t = Trace()
    if mode in ("float", "quantized-digital"):
        return t
    n, d, d_k = job.n_tokens, job.d_model, job.d_k
    planes = scheme.cells_per_weight
    ib = scheme.input_bits
    bpe = math.ceil(ib / 8)

    def cost(rows, cols, tri):
        return array_read_cost(rows, cols, planes, ib, periph, tri, hw.sub_rows, hw.sub_cols)

    for l in range(job.n_layers):
        for h in range(job.n_heads):
            if mode == "cim-trilinear":
                t.add(l, h, "scaled-query", replicas=1, dac_conversions=1,
                      buffer_bytes=bpe * n * (d + d_k), **cost(d, d_k, True).scaled(n))
                t.add(l, h, "score", replicas=n, dac_conversions=n * d,
                      buffer_bytes=bpe * (n * d_k + n * d + n * n), **cost(d_k, d, True).scaled(n * n))
            else:
                for _ in range(3):
                    t.add(l, h, "projection", replicas=1, buffer_bytes=bpe * n * (d + d_k),
                          **cost(d, d_k, False).scaled(n))
        for h in range(job.n_heads):
            if mode == "cim-bilinear":
                cells = 2 * d_k * n * planes
                t.add(l, h, "k-program", writes_cells=cells, write_phases=d_k, buffer_bytes=bpe * n * d_k)
                t.add(l, h, "qk", replicas=1, buffer_bytes=bpe * (n * d_k + n * n), **cost(d_k, n, False).scaled(n))
            if hw.sfu == "fixed":
                t.add_sfu(l, h, "softmax", _softmax_ops(n, n, job.causal))
            if mode == "cim-bilinear":
                t.add(l, h, "v-program", writes_cells=cells, write_phases=n, buffer_bytes=bpe * n * d_k)
                t.add(l, h, "sv", replicas=1, buffer_bytes=bpe * (n * n + n * d_k), **cost(n, d_k, False).scaled(n))
            else:
                t.add(l, h, "value-agg", replicas=n, dac_conversions=n * n,
                      buffer_bytes=bpe * (n * n + n * d + n * d_k), **cost(d, d_k, True).scaled(n * n))
        t.add(l, None, "output-proj", replicas=1, buffer_bytes=bpe * n * 2 * d, **cost(d, d, False).scaled(n))
    return t


def cost_for_job(job: AttentionJob, scheme: QuantScheme = QuantScheme(), hw: HardwareConfig | None = None,
                 params: EnergyParams = EnergyParams(), mode: str | None = None) -> CostReport:
    mode = canonical_mode(mode or job.mode)
    return build_report(analytic_trace(job, scheme, hw, mode), mode, params, hw)


def write_energy_fraction(report: CostReport) -> float:
    total = report.total_energy
    return report.totals.energy["write"] / total if total else 0.0
