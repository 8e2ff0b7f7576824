import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trilinear_cim.attention import AttentionJob, generate_weights
from trilinear_cim.config import ConfigError, ExperimentConfig, default_config_text
from trilinear_cim.rng import stream
from trilinear_cim.trace import BufferTracker, Trace, WriteLog
from trilinear_cim.weights_io import load_tensors, load_weights, save_tensors, save_weights


def load_text(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return ExperimentConfig.load(p)


class TestConfig:
    def test_defaults_mirror_system_table(self):
        cfg = ExperimentConfig.load(None)
        assert cfg["quant.input_bits"] == cfg["quant.weight_bits"] == cfg["crossbar.adc_bits"] == 8
        assert cfg["quant.bits_per_cell"] == 2
        assert (cfg["crossbar.sub_rows"], cfg["crossbar.sub_cols"], cfg["crossbar.mux_ratio"]) == (64, 64, 8)
        assert cfg.energy().write_latency == 50.0
        assert cfg.device().alpha == 0.137 and cfg.device().m_coeff == 1.54

    def test_dotted_keys(self, tmp_path):
        cfg = load_text(tmp_path, 'job.n_tokens = 16\njob.mode = ["bilinear", "trilinear"]\ncrossbar.adc_bits = 10\n')
        assert cfg.job().n_tokens == 16
        assert cfg.modes() == ["cim-bilinear", "cim-trilinear"]
        assert cfg.scheme().adc_bits == 10

    @pytest.mark.parametrize("text,key", [
        ("job.bogus = 1", "job.bogus"),
        ("nosuch.key = 1", "nosuch"),
        ('crossbar.adc_bits = "eight"', "crossbar.adc_bits"),
        ('crossbar.subtract = "sometimes"', "crossbar"),
        ('job.mode = ["analog"]', "job.mode"),
        ("job.d_model = 10", "job"),
        ('job.execute = "maybe"', "job.execute"),
        ("sweep.bitcell_adc = [[2]]", "sweep.bitcell_adc"),
        ("energy.write_latency = 1.0", "energy"),
        ("job.n_tokens = ", "c.toml"),
    ])
    def test_invalid_keys_are_named(self, tmp_path, text, key):
        with pytest.raises(ConfigError) as e:
            load_text(tmp_path, text + "\n")
        assert e.value.key.endswith(key)

    def test_default_text_round_trips(self, tmp_path):
        cfg = load_text(tmp_path, default_config_text())
        assert cfg.hash() == ExperimentConfig.load(None).hash()

    def test_hash_tracks_content(self, tmp_path):
        a = load_text(tmp_path, "job.seed = 1\n")
        b = load_text(tmp_path, "job.seed = 2\n")
        assert a.hash() != b.hash()
        assert a.with_overrides(**{"job.seed": 2}).hash() == b.hash()

    def test_execute_policy(self, tmp_path):
        cfg = ExperimentConfig.load(None)
        assert cfg.should_execute(cfg.job())
        big = AttentionJob(128, 768, 64, 12, x_input=np.zeros((128, 768)))
        assert not cfg.should_execute(big)
        assert load_text(tmp_path, 'job.execute = "no"\n').should_execute(cfg.job()) is False

    def test_subarray_sets_line_length_unless_energy_given(self, tmp_path):
        assert ExperimentConfig.load(None).energy(32).bg_line_length_per_col == 32
        cfg = load_text(tmp_path, "energy.bg_line_length_per_col = 100.0\n")
        assert cfg.energy(32).bg_line_length_per_col == 100


class TestWeightsIO:
    def test_round_trip(self, tmp_path):
        job = AttentionJob(4, 8, 4, 2, n_layers=2, seed=3)
        ws = generate_weights(job)
        save_weights(tmp_path / "w.bin", ws)
        back = load_weights(tmp_path / "w.bin")
        assert len(back) == 2
        for a, b in zip(ws, back):
            for f in a.__dataclass_fields__:
                assert np.array_equal(getattr(b, f), getattr(a, f).astype(np.float32))

    def test_layout(self, tmp_path):
        save_tensors(tmp_path / "t.bin", {"a": np.arange(6).reshape(2, 3), "b": np.ones(2)})
        assert (tmp_path / "t.shapes").read_text() == "a 2x3\nb 2\n"
        raw = np.fromfile(tmp_path / "t.bin", dtype="<f4")
        assert list(raw) == [0, 1, 2, 3, 4, 5, 1, 1]

    @given(st.lists(st.integers(1, 5), min_size=1, max_size=3))
    def test_tensor_round_trip(self, tmp_path_factory, shape):
        d = tmp_path_factory.mktemp("rt")
        arr = np.random.default_rng(len(shape)).normal(size=shape).astype(np.float32)
        save_tensors(d / "x.bin", {"x": arr})
        assert np.array_equal(load_tensors(d / "x.bin")["x"], arr)

    def test_size_mismatch(self, tmp_path):
        save_tensors(tmp_path / "t.bin", {"a": np.ones(4)})
        (tmp_path / "t.shapes").write_text("a 3\n")
        with pytest.raises(ValueError):
            load_tensors(tmp_path / "t.bin")
        (tmp_path / "t.shapes").write_text("a 5\n")
        with pytest.raises(ValueError):
            load_tensors(tmp_path / "t.bin")

    def test_missing_sidecar(self, tmp_path):
        (tmp_path / "t.bin").write_bytes(b"")
        with pytest.raises(FileNotFoundError):
            load_tensors(tmp_path / "t.bin")


class TestTraceAndRng:
    def test_trace_rejects_unknown_counts(self):
        with pytest.raises(KeyError):
            Trace().add(0, 0, "score", bogus=1)

    def test_trace_equality_ignores_zeros(self):
        a, b = Trace(), Trace()
        a.add(0, 0, "score", cycles=3)
        b.add(0, 0, "score", cycles=3, writes_cells=0)
        assert a == b and a.total("cycles") == 3

    def test_write_log(self):
        log = WriteLog()
        log.record(0, 1, "K", 10)
        log.record(0, 1, "V", 5)
        assert log.total == int(log) == 15

    def test_buffer_peak(self):
        b = BufferTracker()
        b.store("X", 10)
        b.store("Q", 10)
        b.free("Q")
        b.store("K", 5)
        assert b.peak_elems == 20 and b.peak_matrices == 2

    def test_named_streams_are_independent(self):
        a = stream(7, "weights").normal(size=4)
        assert np.array_equal(a, stream(7, "weights").normal(size=4))
        assert not np.array_equal(a, stream(7, "inputs").normal(size=4))
        assert not np.array_equal(a, stream(8, "weights").normal(size=4))
