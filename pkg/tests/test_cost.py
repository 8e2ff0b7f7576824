from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trilinear_cim.attention import AttentionJob, HardwareConfig, planned_writes, run_mode
from trilinear_cim.cost import (
    AreaParams,
    EnergyParams,
    HierarchyError,
    StageEntry,
    aggregate_heads,
    analytic_trace,
    bg_modulation_components,
    bg_modulation_energy,
    buffer_residency,
    build_report,
    calibrate_bg_overhead,
    cost_for_job,
    plan_hierarchy,
    reference_area_job,
    relative_area,
    stage_cost,
    write_energy_fraction,
    write_volume,
)
from trilinear_cim.crossbar import Peripherals
from trilinear_cim.quant import QuantScheme

BERT = dict(d_k=64, h=12, n_layers=12, value_bits=8, bits_per_cell=2)


def zeros_job(n, d=16, d_k=4, h=4, **kw):
    return AttentionJob(n, d, d_k, h, x_input=np.zeros((n, d)), **kw)


class TestWriteVolume:
    def test_bert_base_counts(self):
        assert write_volume(512, **BERT) == 75_497_472
        assert write_volume(128, **BERT) == 18_874_368

    def test_unit_case(self):
        assert write_volume(1, 1, 1, 1, 8, 8) == 4

    @given(st.integers(1, 4096), st.integers(1, 128), st.integers(1, 16), st.integers(1, 24))
    def test_linear_in_tokens(self, n, d_k, h, layers):
        assert write_volume(2 * n, d_k, h, layers, 8, 2) == 2 * write_volume(n, d_k, h, layers, 8, 2)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            write_volume(0, 64, 12, 12, 8, 2)

    def test_planned_writes_agree(self):
        job = AttentionJob(128, 768, 64, 12, n_layers=12, x_input=np.zeros((128, 768)))
        assert planned_writes(job, mode="cim-bilinear").total == 18_874_368
        assert planned_writes(job, mode="cim-trilinear").total == 0


class TestBackGateEnergy:
    def test_zero_cycles(self):
        assert bg_modulation_energy(64, 64, 0, EnergyParams()) == 0

    def test_wire_term_example(self):
        p = EnergyParams(dac_switch_energy=0, driver_energy=0, gate_cap_per_cell=0,
                         wire_cap_per_um=0.2, bg_line_length_per_col=100, v_swing=1.0)
        assert bg_modulation_energy(64, 64, 1, p) == pytest.approx(640.0)

    def test_swing_scales_capacitive_terms_only(self):
        p = EnergyParams()
        a = bg_modulation_components(64, 64, 3, p)
        b = bg_modulation_components(64, 64, 3, replace(p, v_swing=2 * p.v_swing))
        assert b["wire"] == pytest.approx(4 * a["wire"]) and b["gate"] == pytest.approx(4 * a["gate"])
        assert b["dac"] == a["dac"] and b["driver"] == a["driver"]


class TestStageCost:
    def test_trilinear_stage_has_no_write_term(self):
        e = stage_cost(Counter(cell_reads=100, cycles=4, bg_lines=8))
        assert e.energy["write"] == 0 and e.writes_cells == 0

    def test_bilinear_k_program_one_head(self):
        # K^T of one head at N=128, d_k=64: 64 rows x 128 cols x 4 cells x signed pair
        job = AttentionJob(128, 768, 64, 12, x_input=np.zeros((128, 768)))
        t = analytic_trace(job, mode="cim-bilinear")
        counts = t.entries[(0, 0, "k-program")]
        assert counts["writes_cells"] == 65_536
        e = stage_cost(counts)
        assert e.latency >= counts["write_phases"] * EnergyParams().write_latency > 0

    def test_reads_scale_linearly(self):
        a = stage_cost(Counter(cell_reads=1000, adc_conversions=10))
        b = stage_cost(Counter(cell_reads=2000, adc_conversions=20))
        assert b.energy["array-read"] == 2 * a.energy["array-read"]

    def test_parallel_crossbars_divide_cycles(self):
        c = Counter(cycles=80, replicas=16)
        assert stage_cost(c, parallel_crossbars=8).latency == 10 * 10.0
        assert stage_cost(c, parallel_crossbars=1).latency == 80 * 10.0

    def test_params_validation(self):
        with pytest.raises(ValueError):
            EnergyParams(read_energy_per_cell=-1)
        with pytest.raises(ValueError):
            EnergyParams(write_latency=5.0)
        with pytest.raises(ValueError):
            EnergyParams(overlap=1.5)


class TestAggregation:
    def test_identical_heads(self):
        e = stage_cost(Counter(cell_reads=100, cycles=7, bg_lines=4))
        agg = aggregate_heads([e] * 12)
        assert agg.total_energy == pytest.approx(12 * e.total_energy)
        assert agg.latency == e.latency

    def test_slow_head_dominates(self):
        fast, slow = stage_cost(Counter(cycles=1)), stage_cost(Counter(cycles=100))
        assert aggregate_heads([fast, slow, fast]).latency == slow.latency

    def test_single_head_identity(self):
        e = stage_cost(Counter(cell_reads=5, cycles=3, buffer_bytes=8))
        agg = aggregate_heads([e])
        assert agg.as_dict() == e.as_dict()

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_heads([])


class TestBufferAndHierarchy:
    def test_residency(self):
        assert buffer_residency("trilinear", 64, 768, 1) == 49_152
        assert buffer_residency("conventional", 0, 768, 1) == 0

    @given(st.integers(1, 4096), st.integers(1, 4096), st.integers(1, 4))
    def test_ratio_three(self, n, d, b):
        assert buffer_residency("conventional", n, d, b) == 3 * buffer_residency("trilinear", n, d, b)

    def test_single_subarray(self):
        p = plan_hierarchy(64 * 64)
        assert (p.n_tiles, p.pes_per_tile, p.arrays_per_pe) == (1, 1, 1)

    def test_five_subarrays_round_to_eight(self):
        p = plan_hierarchy(5 * 64 * 64)
        assert p.n_arrays >= 8 and p.n_arrays & (p.n_arrays - 1) == 0
        assert p.capacity_cells >= 5 * 64 * 64

    def test_buffer_fits_default(self):
        p = plan_hierarchy(64 * 64, buffer_bytes=buffer_residency("trilinear", 64, 768, 1))
        assert 49_152 <= p.global_buffer_bytes <= 4 * (1 << 20)

    def test_area_ceiling(self):
        with pytest.raises(HierarchyError):
            plan_hierarchy(1 << 30, max_arrays=16)


class TestArea:
    def test_calibrated_ratio(self):
        job = reference_area_job()
        ratio = relative_area(job, mode="cim-trilinear") / relative_area(job, mode="cim-bilinear")
        assert ratio == pytest.approx(1.373, abs=1e-3)
        assert calibrate_bg_overhead() == pytest.approx(AreaParams().bg_col_overhead, abs=1e-2)

    def test_area_scales_with_layers(self):
        a = relative_area(AttentionJob(8, 16, 4, 4, x_input=np.zeros((8, 16))))
        b = relative_area(AttentionJob(8, 16, 4, 4, n_layers=3, x_input=np.zeros((8, 16))))
        assert b == pytest.approx(3 * a)


ALT_HW = [
    HardwareConfig(),
    HardwareConfig(sub_rows=16, sub_cols=32, periph=Peripherals(subtract="pre-adc", sensing="differential")),
    HardwareConfig(sfu="float", parallel_crossbars=3),
]


class TestTraces:
    @pytest.mark.parametrize("mode", ["cim-bilinear", "cim-trilinear", "quantized-digital"])
    @pytest.mark.parametrize("causal", [False, True])
    @pytest.mark.parametrize("hw_index", range(len(ALT_HW)))
    def test_analytic_equals_functional(self, mode, causal, hw_index):
        hw = ALT_HW[hw_index]
        job = AttentionJob(6, 12, 4, 3, n_layers=2, seed=1, causal=causal)
        scheme = QuantScheme(bits_per_cell=3)
        assert analytic_trace(job, scheme, hw, mode) == run_mode(job, None, scheme, hw, mode).trace

    def test_report_totals_and_serialization(self):
        rep = cost_for_job(zeros_job(8), mode="cim-bilinear")
        assert rep.writes_cells == planned_writes(zeros_job(8), mode="cim-bilinear").total
        assert rep.total_energy == pytest.approx(sum(e.total_energy for e in rep.stages.values()))
        rows = rep.csv_rows()
        assert rows[-1]["stage"] == "total" and len(rows) == len(rep.stages) + 1
        assert rep.to_csv().splitlines()[0].startswith("mode,stage,")
        assert '"writes_cells"' in rep.to_json()

    def test_overlap_credit(self):
        job = zeros_job(8)
        t = analytic_trace(job, mode="cim-trilinear")
        serial = build_report(t, "cim-trilinear", EnergyParams())
        piped = build_report(t, "cim-trilinear", EnergyParams(overlap=1.0))
        longest = max(e.latency + e.sfu_latency for e in serial.stages.values())
        assert piped.total_latency == pytest.approx(longest)
        assert serial.total_latency >= piped.total_latency

    def test_scaling_laws(self):
        reps = {n: {m: cost_for_job(zeros_job(n), mode=m) for m in ("cim-bilinear", "cim-trilinear")}
                for n in (64, 128)}
        tri = [reps[n]["cim-trilinear"].stages["score"] for n in (64, 128)]
        assert tri[1].cycles == 4 * tri[0].cycles and tri[1].reads == 4 * tri[0].reads
        assert reps[128]["cim-bilinear"].writes_cells == 2 * reps[64]["cim-bilinear"].writes_cells
        assert write_energy_fraction(reps[128]["cim-bilinear"]) < write_energy_fraction(reps[64]["cim-bilinear"])

    def test_trilinear_score_cycles_quadratic(self):
        c = [cost_for_job(zeros_job(n), mode="cim-trilinear").stages["score"].cycles for n in (8, 16, 32)]
        assert c[1] == 4 * c[0] and c[2] == 4 * c[1]

    def test_empty_report_for_digital(self):
        rep = cost_for_job(zeros_job(4), mode="quantized-digital")
        assert rep.total_energy == 0 and rep.stages == {}


def test_stage_entry_defaults():
    assert StageEntry().total_energy == 0.0
