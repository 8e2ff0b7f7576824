import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trilinear_cim.crossbar import (
    CrossbarArray,
    Peripherals,
    WeightArray,
    adc_quantize,
    array_read_cost,
    bilinear_mvm,
    bit_serial_cycles,
    bit_serial_mvm,
    config_a_matmul,
    config_a_run,
    config_a_step,
    config_b_matmul,
    config_b_run,
    config_b_step,
    dac_quantize,
    dump_currents,
    trilinear_read,
)
from trilinear_cim.device import DeviceParams, OutOfBandWarning
from trilinear_cim.quant import QuantScheme, QuantTensor

IDEAL = Peripherals.ideal()


class TestReads:
    def test_unit_cell(self):
        r = bilinear_mvm(CrossbarArray([[1.0]], band=None), [1.0], Peripherals())
        assert r.analog_currents[0] == pytest.approx(1.0)

    def test_column_sums(self):
        r = bilinear_mvm(CrossbarArray([[1.0, 2.0], [3.0, 4.0]], band=None), [1.0, 1.0], Peripherals())
        assert np.allclose(r.analog_currents, [4.0, 6.0])
        assert r.cycles >= 1

    def test_zero_input(self):
        r = bilinear_mvm(CrossbarArray(np.full((3, 2), 40.0)), np.zeros(3), Peripherals())
        assert np.all(r.analog_currents == 0) and np.all(r.digital_outputs == 0)

    def test_trilinear_difference_current(self):
        r = trilinear_read(CrossbarArray([[50.0]], eta=0.157), [1.0], [1.0], IDEAL)
        assert r.analog_currents[0] == pytest.approx(7.85)
        assert r.digital_outputs[0] * r.lsb == pytest.approx(7.85, rel=1e-9)

    @pytest.mark.parametrize("subtract", ["post-adc", "pre-adc"])
    def test_zero_back_gate_cancels(self, subtract, rng):
        xbar = CrossbarArray(rng.uniform(29, 69, (5, 4)))
        r = trilinear_read(xbar, rng.uniform(0, 1, 5), 0.0, Peripherals(subtract=subtract))
        assert not np.any(r.digital_outputs) and not np.any(r.analog_currents)

    @given(st.integers(0, 10_000), st.floats(0.05, 0.5))
    def test_difference_linear_in_back_gate(self, seed, v):
        rng = np.random.default_rng(seed)
        xbar = CrossbarArray(rng.uniform(29, 69, (2, 2)))
        vin = rng.uniform(0, 1, 2)
        d1 = trilinear_read(xbar, vin, v, IDEAL).analog_currents
        d2 = trilinear_read(xbar, vin, 2 * v, IDEAL).analog_currents
        assert np.allclose(d2, 2 * d1, rtol=1e-12)

    def test_shape_errors(self):
        xbar = CrossbarArray(np.full((2, 3), 40.0))
        with pytest.raises(ValueError):
            bilinear_mvm(xbar, [1.0, 1.0, 1.0], IDEAL)
        with pytest.raises(ValueError):
            trilinear_read(xbar, [1.0, 1.0], [0.1, 0.2], IDEAL)

    def test_out_of_band_warns(self):
        with pytest.warns(OutOfBandWarning):
            CrossbarArray([[10.0]])

    def test_back_gate_clipping_counted(self):
        r = trilinear_read(CrossbarArray([[50.0]]), [1.0], [3.0], Peripherals(v_dac_max=1.0))
        assert r.clip_events == 1
        assert r.analog_currents[0] == pytest.approx(50 * 0.157)


class TestConverters:
    def test_adc_examples(self):
        p = Peripherals(adc_bits=8)
        assert adc_quantize(0.0, p, 10.0) == 0
        assert adc_quantize(10.0, p, 10.0) == 127
        assert adc_quantize(50.0, p, 10.0) == 127
        assert adc_quantize(5.0, p, 10.0) == 64

    def test_dac_examples(self):
        assert dac_quantize(0.3, 1, 1.0) == 0.5
        assert dac_quantize(-0.3, 1, 1.0) == -0.5
        assert dac_quantize(2.0, 4, 1.0) == pytest.approx(1.0 - 1 / 16)
        assert abs(dac_quantize(0.0, 8, 1.0)) <= 1 / 256

    @given(st.floats(-1, 1), st.integers(1, 16))
    def test_dac_error_within_half_step(self, v, bits):
        assert abs(dac_quantize(v, bits, 1.0) - v) <= 1.0 / (1 << bits) + 1e-12


class TestConfigurations:
    def test_config_a_unit(self):
        out = config_a_step([CrossbarArray([[50.0]])], [[1.0]], [1.0], IDEAL)
        assert out[0] == pytest.approx(7.85)

    def test_config_a_triple_product(self):
        rng = np.random.default_rng(5)
        a, bt, c = rng.uniform(0, 1, (2, 3)), rng.uniform(29, 69, (3, 2)), rng.uniform(-1, 1, (2, 2))
        out, cycles = config_a_matmul(a, bt, c, IDEAL)
        assert np.allclose(out, 0.157 * a @ bt @ c, rtol=1e-9)
        assert cycles == 2 * 2

    def test_config_a_one_hot(self):
        rng = np.random.default_rng(6)
        a, bt = rng.uniform(0, 1, (3, 4)), rng.uniform(29, 69, (4, 3))
        out, _ = config_a_matmul(a, bt, np.eye(3), IDEAL)
        assert np.allclose(out, 0.157 * a @ bt, rtol=1e-9)

    def test_config_b_triple_product(self):
        rng = np.random.default_rng(7)
        a, b, ct = rng.uniform(-1, 1, (2, 2)), rng.uniform(0, 1, (2, 3)), rng.uniform(29, 69, (3, 2))
        out, _ = config_b_matmul(a, b, ct, IDEAL)
        assert np.allclose(out, 0.157 * a @ b @ ct, rtol=1e-9)

    def test_config_b_single_term_and_zero(self):
        g = np.array([[40.0, 50.0], [60.0, 30.0]])
        row = np.array([0.2, 0.7])
        out = config_b_step([CrossbarArray(g)], [row], [1.0], IDEAL)
        assert np.allclose(out, 0.157 * row @ g)
        out = config_b_step([CrossbarArray(g)] * 2, [row, row], [0.0, 0.0], Peripherals())
        assert not np.any(out)

    def test_config_b_requires_identical_weights(self):
        with pytest.raises(ValueError):
            config_b_step([CrossbarArray([[40.0]]), CrossbarArray([[50.0]])], [[1.0], [1.0]], [1.0, 1.0], IDEAL)


def _int_array(rng, shape, bits=8):
    m = (1 << (bits - 1)) - 1
    return QuantTensor(rng.integers(-m, m + 1, shape), 1.0, bits)


class TestWeightArray:
    def test_bit_serial_exact(self, rng):
        w, x = _int_array(rng, (4, 4)), _int_array(rng, (4,))
        arr = WeightArray.dg_fefet(w, QuantScheme(), DeviceParams())
        out = bit_serial_mvm(arr, x, Peripherals.ideal(), QuantScheme())
        assert np.array_equal(out, x.data @ w.data)

    def test_one_bit_input_is_single_read(self, rng):
        w = _int_array(rng, (3, 2))
        arr = WeightArray.single_gate(w, QuantScheme())
        x = QuantTensor([1, 0, -1], 1.0, 2)
        assert np.array_equal(arr.mvm(x, Peripherals.ideal())[0], x.data @ w.data)

    def test_all_ones_gives_column_sums(self, rng):
        w = _int_array(rng, (5, 3))
        arr = WeightArray.single_gate(w, QuantScheme())
        out = bit_serial_mvm(arr, QuantTensor(np.ones(5), 1.0, 8), Peripherals.ideal(), QuantScheme())
        assert np.array_equal(out, w.data.sum(axis=0))

    @given(st.integers(0, 10_000), st.integers(1, 70), st.integers(1, 20), st.sampled_from([1, 2, 4]))
    def test_tiled_mvm_matches_integer_product(self, seed, rows, cols, bpc):
        rng = np.random.default_rng(seed)
        w, x = _int_array(rng, (rows, cols)), _int_array(rng, (3, rows))
        arr = WeightArray.single_gate(w, QuantScheme(bits_per_cell=bpc), sub_rows=16, sub_cols=16)
        assert np.array_equal(arr.mvm(x, Peripherals.ideal()), x.data @ w.data)

    @given(st.integers(0, 10_000))
    def test_trilinear_matches_scaled_product(self, seed):
        rng = np.random.default_rng(seed)
        w, x = _int_array(rng, (6, 5)), _int_array(rng, (2, 6))
        vbg = rng.uniform(-1, 1, (2, 5))
        arr = WeightArray.dg_fefet(w, QuantScheme(), DeviceParams(), sub_rows=4, sub_cols=4)
        out = arr.trilinear(x, vbg, Peripherals.ideal())
        assert np.allclose(out, (x.data @ w.data) * 0.157 * vbg, rtol=1e-8, atol=1e-6)

    def test_cells_counted_on_both_signed_arrays(self, rng):
        arr = WeightArray.single_gate(_int_array(rng, (64, 64)), QuantScheme())
        assert arr.cells == 2 * 64 * 64 * 4

    def test_config_runs_match_products(self, rng):
        w = _int_array(rng, (4, 3))
        arr = WeightArray.dg_fefet(w, QuantScheme(), DeviceParams())
        a = _int_array(rng, (2, 4))
        c = rng.uniform(-1, 1, (3, 5))
        out = config_a_run(arr, a, c, Peripherals.ideal(), chunk=2)
        assert np.allclose(out, 0.157 * a.data @ w.data @ c, rtol=1e-8)
        b = _int_array(rng, (4, 4))
        av = rng.uniform(0, 1, (3, 4))
        out = config_b_run(arr, b, av, Peripherals.ideal(), chunk=2)
        assert np.allclose(out, 0.157 * av @ b.data @ w.data, rtol=1e-8)

    def test_opt_in_sensing_improves_low_precision_error(self, rng):
        w, x = _int_array(rng, (64, 16)), _int_array(rng, (4, 64))
        vbg = rng.uniform(0, 1, (4, 16))
        arr = WeightArray.dg_fefet(w, QuantScheme(), DeviceParams())
        exact = (x.data @ w.data) * 0.157 * vbg
        errs = {}
        for name, p in {
            "default": Peripherals(),
            "tuned": Peripherals(sensing="differential", subtract="pre-adc", adc_range="calibrated"),
        }.items():
            errs[name] = np.abs(arr.trilinear(x, vbg, p) - exact).max() / np.abs(exact).max()
        assert errs["tuned"] < errs["default"]

    def test_read_cost_from_shape(self):
        p = Peripherals()
        c = array_read_cost(128, 64, 4, 8, p, trilinear=True)
        assert c.array_reads == 8 * 2 * 2 * 2 * 4
        assert c.cell_reads == 8 * 2 * 2 * 128 * 256
        assert c.cycles == 8 * 2 * 8
        assert c.bg_lines == 2 * 2 * 256
        assert array_read_cost(128, 64, 4, 8, p, trilinear=False).bg_lines == 0

    def test_bit_serial_cycles(self):
        arr = WeightArray.single_gate(QuantTensor(np.ones((8, 16)), 1.0, 8), QuantScheme())
        assert bit_serial_cycles(arr, QuantScheme(), Peripherals()) == 8 * 8


def test_debug_current_dump(tmp_path):
    log = []
    p = Peripherals(debug_log=log)
    trilinear_read(CrossbarArray([[50.0, 40.0]]), [1.0], 0.5, p)
    dump_currents(tmp_path / "c.csv", log)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "read,kind,currents_uA" and lines[1].startswith("0,trilinear,")


def test_peripheral_validation():
    with pytest.raises(ValueError):
        Peripherals(subtract="never")
    with pytest.raises(ValueError):
        Peripherals(sensing="quad")
    with pytest.raises(ValueError):
        Peripherals(adc_bits=0)
