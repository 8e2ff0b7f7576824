"""Multi-head attention in the reference, digital, bilinear-CIM and trilinear-CIM modes.

Weight layout: per-head projections are (d_k, d) so Q = X W_Q^T; the output
projection is applied as concat(heads) @ W_O. Every CIM stage output is
requantized to ``input_bits`` with a scale calibrated on that tensor.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .crossbar import DacRangeError, Peripherals, WeightArray, config_a_run, config_b_run, dac_quantize
from .device import DeviceParams, FeFETParams
from .quant import QuantScheme, QuantTensor, dequantize, qmax, quantize_calibrated
from .rng import stream
from .sfu import FixedVec, gelu_pipeline, layernorm_pipeline, softmax_pipeline
from .trace import BufferTracker, Trace, WriteLog

MODES = ("quantized-digital", "cim-bilinear", "cim-trilinear")
MODE_ALIASES = {"digital": "quantized-digital", "bilinear": "cim-bilinear", "trilinear": "cim-trilinear"}


def canonical_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES + ("float",):
        raise ValueError(f"unknown mode {mode!r}")
    return mode


@dataclass
class AttentionJob:
    n_tokens: int
    d_model: int
    d_k: int
    n_heads: int
    n_layers: int = 1
    mode: str = "cim-trilinear"
    seed: int = 0
    x_input: np.ndarray | None = None
    causal: bool = False

    def __post_init__(self):
        for name in ("n_tokens", "d_model", "d_k", "n_heads", "n_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model != self.n_heads * self.d_k:
            raise ValueError(f"d_model {self.d_model} != n_heads {self.n_heads} x d_k {self.d_k}")
        self.mode = canonical_mode(self.mode)
        if self.x_input is None:
            self.x_input = stream(self.seed, "inputs").standard_normal((self.n_tokens, self.d_model))
        self.x_input = np.asarray(self.x_input, dtype=float)
        if self.x_input.shape != (self.n_tokens, self.d_model):
            raise ValueError(f"x_input shape {self.x_input.shape} != {(self.n_tokens, self.d_model)}")


@dataclass(frozen=True)
class StagePlan:
    stage: str
    row_operand: str
    stored_operand: str
    bg_operand: str
    bg_kind: str
    xbar_config: str


STAGE_PLANS = (
    StagePlan("scaled-query", "X", "W_Q^T", "1/sqrt(d_k)", "static", "either"),
    StagePlan("score", "R1", "W_K", "X^T", "dynamic", "a"),
    StagePlan("value-agg", "X", "W_V^T", "Score", "dynamic", "b"),
)


@dataclass
class LayerWeights:
    w_q: np.ndarray  # (h, d_k, d)
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray  # (d, d)
    w_ffn1: np.ndarray  # (d, 4d)
    w_ffn2: np.ndarray  # (4d, d)
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        h, d_k, d = self.w_q.shape
        if self.w_k.shape != (h, d_k, d) or self.w_v.shape != (h, d_k, d):
            raise ValueError("w_q, w_k and w_v must share one (h, d_k, d) shape")
        expect = {
            "w_o": (d, d), "w_ffn1": (d, 4 * d), "w_ffn2": (4 * d, d),
            "ln1_gamma": (d,), "ln1_beta": (d,), "ln2_gamma": (d,), "ln2_beta": (d,),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n_heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_k(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_model(self) -> int:
        return self.w_q.shape[2]

    def check(self, job: AttentionJob) -> None:
        if (self.n_heads, self.d_k, self.d_model) != (job.n_heads, job.d_k, job.d_model):
            raise ValueError("weights do not match the job dimensions")

    @classmethod
    def random(cls, d_model: int, n_heads: int, rng: np.random.Generator) -> "LayerWeights":
        d, d_k = d_model, d_model // n_heads
        s = 1.0 / math.sqrt(d)
        return cls(
            w_q=rng.standard_normal((n_heads, d_k, d)) * s,
            w_k=rng.standard_normal((n_heads, d_k, d)) * s,
            w_v=rng.standard_normal((n_heads, d_k, d)) * s,
            w_o=rng.standard_normal((d, d)) * s,
            w_ffn1=rng.standard_normal((d, 4 * d)) * s,
            w_ffn2=rng.standard_normal((4 * d, d)) * (0.5 * s),
            ln1_gamma=1.0 + 0.1 * rng.standard_normal(d),
            ln1_beta=0.1 * rng.standard_normal(d),
            ln2_gamma=1.0 + 0.1 * rng.standard_normal(d),
            ln2_beta=0.1 * rng.standard_normal(d),
        )


def generate_weights(job: AttentionJob) -> list[LayerWeights]:
    rng = stream(job.seed, "weights")
    return [LayerWeights.random(job.d_model, job.n_heads, rng) for _ in range(job.n_layers)]


@dataclass
class HardwareConfig:
    device: DeviceParams = field(default_factory=DeviceParams)
    cell: FeFETParams = field(default_factory=FeFETParams)
    periph: Peripherals = field(default_factory=Peripherals)
    sub_rows: int = 64
    sub_cols: int = 64
    per_cell_eta: bool = False
    sfu: str = "fixed"  # or "float"
    strict_dac: bool = False
    parallel_crossbars: int = 8
    eta_error: float = 1.0  # physical / assumed sensitivity; 1 means a calibrated array

    def __post_init__(self):
        if self.sfu not in ("fixed", "float"):
            raise ValueError("sfu must be 'fixed' or 'float'")
        if self.sub_rows < 1 or self.sub_cols < 1 or self.parallel_crossbars < 1:
            raise ValueError("array sizes and parallelism must be >= 1")

    @classmethod
    def ideal(cls, **kw) -> "HardwareConfig":
        kw.setdefault("periph", Peripherals.ideal())
        kw.setdefault("sfu", "float")
        return cls(**kw)

    def peripherals(self, scheme: QuantScheme) -> Peripherals:
        """Scheme bit widths take precedence over the peripheral defaults."""
        return replace(self.periph, adc_bits=scheme.adc_bits, dac_bits=scheme.dac_bits)


def ideal_scheme() -> QuantScheme:
    return QuantScheme(input_bits=28, weight_bits=28, adc_bits=40, dac_bits=40, bits_per_cell=2)


@dataclass
class RunContext:
    """Bookkeeping shared by the stages of one run."""

    scheme: QuantScheme
    hw: HardwareConfig
    trace: Trace = field(default_factory=Trace)
    writes: WriteLog = field(default_factory=WriteLog)
    buffer: BufferTracker = field(default_factory=BufferTracker)
    observer: dict | None = None
    layer: int = 0
    head: int | None = None

    @property
    def periph(self) -> Peripherals:
        return self.hw.peripherals(self.scheme)

    def observe(self, name: str, q: QuantTensor) -> QuantTensor:
        if self.observer is not None:
            self.observer[name] = q
        return q

    def record(self, stage: str, **counts) -> None:
        self.trace.add(self.layer, self.head, stage, **counts)

    def buffer_bytes(self, elems: int) -> int:
        return elems * math.ceil(self.scheme.input_bits / 8)


@dataclass
class RunResult:
    output: np.ndarray
    writes: WriteLog
    trace: Trace
    buffer: BufferTracker
    pre_output: list[np.ndarray] = field(default_factory=list)  # concat before W_O, per layer


# ---------------------------------------------------------------------------
# float reference


def float_softmax_rows(s: np.ndarray, causal: bool = False) -> np.ndarray:
    s = np.array(s, dtype=float)
    if causal:
        s[np.triu_indices(s.shape[0], 1, s.shape[1])] = -np.inf
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def reference_mhsa(x: np.ndarray, w: LayerWeights, causal: bool = False, return_concat: bool = False):
    d_k = w.d_k
    heads = []
    for h in range(w.n_heads):
        q, k, v = x @ w.w_q[h].T, x @ w.w_k[h].T, x @ w.w_v[h].T
        heads.append(float_softmax_rows(q @ k.T / math.sqrt(d_k), causal) @ v)
    concat = np.concatenate(heads, axis=1)
    out = concat @ w.w_o
    return (out, concat) if return_concat else out


def run_reference_attention(job: AttentionJob, weights: list[LayerWeights] | LayerWeights | None = None) -> np.ndarray:
    """Float multi-head attention; layers chain x_{l+1} = MHSA_l(x_l)."""
    weights = _weights_for(job, weights)
    x = job.x_input
    for w in weights:
        x = reference_mhsa(x, w, job.causal)
    return x


def _weights_for(job: AttentionJob, weights) -> list[LayerWeights]:
    if weights is None:
        weights = generate_weights(job)
    if isinstance(weights, LayerWeights):
        weights = [weights]
    if len(weights) != job.n_layers:
        raise ValueError(f"{len(weights)} weight layers for a {job.n_layers}-layer job")
    for w in weights:
        w.check(job)
    return list(weights)


# ---------------------------------------------------------------------------
# helpers shared by the CIM modes


def _as_q(x, bits: int) -> QuantTensor:
    return x if isinstance(x, QuantTensor) else quantize_calibrated(x, bits)


def _x_volts(xq: QuantTensor, periph: Peripherals) -> np.ndarray:
    """Quantized activations mapped onto the back-gate DAC range."""
    v = xq.data * (periph.v_dac_max / qmax(xq.bits))
    return dac_quantize(v, periph.dac_bits, periph.v_dac_max)


def _softmax(scores: np.ndarray, ctx: RunContext, causal: bool) -> np.ndarray:
    n_r, n_c = scores.shape
    if ctx.hw.sfu == "float":
        return float_softmax_rows(scores, causal)
    ops = Counter()
    bits = ctx.scheme.input_bits
    fv = FixedVec.from_float(scores, quantize_calibrated(scores, bits).scale, bits)
    if not causal:
        p = softmax_pipeline(fv, counter=ops).to_float()
    else:
        p = np.zeros((n_r, n_c))
        for i in range(n_r):
            m = min(i + 1, n_c)
            row = FixedVec(fv.data[i, :m], fv.scale, fv.bits)
            p[i, :m] = softmax_pipeline(row, counter=ops).to_float()
    ctx.trace.add_sfu(ctx.layer, ctx.head, "softmax", ops)
    return p


def _causal_mask(n_r: int, n_c: int) -> np.ndarray:
    return np.triu(np.ones((n_r, n_c), dtype=bool), 1)


def _static_array(w: QuantTensor, ctx: RunContext) -> WeightArray:
    return WeightArray.single_gate(w, ctx.scheme, ctx.hw.cell, sub_rows=ctx.hw.sub_rows, sub_cols=ctx.hw.sub_cols)


def _dg_array(w: QuantTensor, ctx: RunContext) -> WeightArray:
    hw = ctx.hw
    arr = WeightArray.dg_fefet(
        w, ctx.scheme, hw.device, per_cell_eta=hw.per_cell_eta, sub_rows=hw.sub_rows, sub_cols=hw.sub_cols
    )
    if hw.eta_error != 1.0:
        arr.eta_pos = arr.eta_pos * hw.eta_error
        arr.eta_neg = arr.eta_neg * hw.eta_error
        arr.eta_max *= hw.eta_error
    return arr


def _static_matmul(xq: QuantTensor, wq: QuantTensor, ctx: RunContext, stage: str) -> np.ndarray:
    """Bit-serial bilinear product xq @ wq on single-gate arrays, dequantized."""
    arr = _static_array(wq, ctx)
    periph = ctx.periph
    out = arr.mvm(xq, periph)
    cost = arr.read_cost(xq.bits, periph, trilinear=False)
    n = len(np.atleast_2d(xq.data))
    ctx.record(stage, replicas=1, buffer_bytes=ctx.buffer_bytes(n * (arr.rows + arr.cols)), **cost.scaled(n))
    return out * (xq.scale * wq.scale)


# ---------------------------------------------------------------------------
# trilinear stages


def stage1_scaled_query(x, w_q, scheme: QuantScheme, device: DeviceParams | None = None, ctx: RunContext | None = None):
    """X W_Q^T / sqrt(d_k) with the scale carried by a static back-gate voltage.

    ``w_q`` is (d_k, d); the array stores W_Q^T and X drives the rows.
    """
    ctx = ctx or RunContext(scheme, HardwareConfig(device=device or DeviceParams()))
    device = device or ctx.hw.device
    periph = ctx.periph
    xq = _as_q(x, scheme.input_bits)
    wq = w_q.T if isinstance(w_q, QuantTensor) else quantize_calibrated(np.asarray(w_q).T, scheme.weight_bits)
    d_k = wq.shape[1]
    if wq.shape[0] != xq.shape[-1]:
        raise ValueError("x and w_q disagree on d_model")
    eta = device.eta
    target = 1.0 / (math.sqrt(d_k) * eta)
    if target > periph.v_dac_max and ctx.hw.strict_dac:
        raise DacRangeError(
            f"stage-1 back-gate voltage {target:.4g} V exceeds the DAC range {periph.v_dac_max} V; "
            "raise v_dac_max or fold the scale digitally (strict_dac=False)"
        )
    v_applied = dac_quantize(min(target, periph.v_dac_max), periph.dac_bits, periph.v_dac_max)
    arr = _dg_array(wq, ctx)
    out = arr.trilinear(xq, v_applied, periph)
    # any part of 1/sqrt(d_k) not carried by the back gate is applied after the ADC
    r1 = out * (xq.scale * wq.scale) / (eta * v_applied * math.sqrt(d_k))
    n = len(np.atleast_2d(xq.data))
    cost = arr.read_cost(xq.bits, periph, trilinear=True)
    ctx.record("scaled-query", replicas=1, dac_conversions=1,
               buffer_bytes=ctx.buffer_bytes(n * (arr.rows + arr.cols)), **cost.scaled(n))
    return r1


def stage2_score(r1, w_k, x, scheme: QuantScheme, device: DeviceParams | None = None,
                 ctx: RunContext | None = None, causal: bool = False):
    """R1 W_K X^T by configuration (a): W_K stored, R1 on rows, X^T on back gates."""
    ctx = ctx or RunContext(scheme, HardwareConfig(device=device or DeviceParams()))
    device = device or ctx.hw.device
    periph = ctx.periph
    r1q = _as_q(r1, scheme.input_bits)
    wq = _as_q(w_k, scheme.weight_bits)
    xq = _as_q(x, scheme.input_bits)
    if wq.shape != (r1q.shape[-1], xq.shape[-1]):
        raise ValueError("r1, w_k and x shapes are not conformable")
    arr = _dg_array(wq, ctx)
    vx = _x_volts(xq, periph)  # (n, d)
    out = config_a_run(arr, r1q, vx.T, periph)
    n_a, n_c = out.shape
    if causal:
        out[_causal_mask(n_a, n_c)] = 0.0  # masked cycles run with the back gates held at 0 V
    eta = device.eta
    r2 = out * (r1q.scale * wq.scale * xq.scale * qmax(xq.bits) / (periph.v_dac_max * eta))
    cost = arr.read_cost(r1q.bits, periph, trilinear=True)
    reads = n_a * n_c
    ctx.record("score", replicas=n_a, dac_conversions=n_c * arr.cols,
               buffer_bytes=ctx.buffer_bytes(n_a * arr.rows + n_c * arr.cols + reads), **cost.scaled(reads))
    return r2


def stage3_value_agg(score, x, w_v, scheme: QuantScheme, device: DeviceParams | None = None,
                     ctx: RunContext | None = None, causal: bool = False):
    """Score X W_V^T by configuration (b): W_V^T in every crossbar, X rows in, scores broadcast."""
    ctx = ctx or RunContext(scheme, HardwareConfig(device=device or DeviceParams()))
    device = device or ctx.hw.device
    periph = ctx.periph
    score = np.asarray(score, dtype=float)
    xq = _as_q(x, scheme.input_bits)
    wq = w_v.T if isinstance(w_v, QuantTensor) else _as_q(np.asarray(w_v).T, scheme.weight_bits)
    if wq.shape[0] != xq.shape[-1] or score.shape[1] != xq.shape[0]:
        raise ValueError("score, x and w_v shapes are not conformable")
    arr = _dg_array(wq, ctx)
    vs = dac_quantize(score * periph.v_dac_max, periph.dac_bits, periph.v_dac_max)
    if causal:
        vs[_causal_mask(*score.shape)] = 0.0
    out = config_b_run(arr, xq, vs, periph)
    eta = device.eta
    res = out * (xq.scale * wq.scale / (periph.v_dac_max * eta))
    n_r, n_i = score.shape
    cost = arr.read_cost(xq.bits, periph, trilinear=True)
    ctx.record("value-agg", replicas=n_i, dac_conversions=n_r * n_i,
               buffer_bytes=ctx.buffer_bytes(n_r * n_i + n_i * arr.rows + n_r * arr.cols), **cost.scaled(n_r * n_i))
    return res


# ---------------------------------------------------------------------------
# per-layer MHSA in each mode


def _quant_layer(x, w: LayerWeights, ctx: RunContext) -> tuple[QuantTensor, list]:
    """Quantize X and the projection weights; every mode sees the same tensors."""
    s = ctx.scheme
    l = ctx.layer
    xq = ctx.observe(f"L{l}.x", quantize_calibrated(x, s.input_bits))
    heads = []
    for h in range(w.n_heads):
        heads.append(tuple(
            ctx.observe(f"L{l}.h{h}.{name}", quantize_calibrated(getattr(w, name)[h], s.weight_bits))
            for name in ("w_q", "w_k", "w_v")
        ))
    return xq, heads


def _output_projection(concat: np.ndarray, w: LayerWeights, ctx: RunContext, cim: bool) -> np.ndarray:
    s = ctx.scheme
    l = ctx.layer
    cq = quantize_calibrated(concat, s.input_bits)
    woq = ctx.observe(f"L{l}.w_o", quantize_calibrated(w.w_o, s.weight_bits))
    ctx.head = None
    if cim:
        return _static_matmul(cq, woq, ctx, "output-proj")
    return dequantize(cq) @ dequantize(woq)


def trilinear_mhsa(x, w: LayerWeights, ctx: RunContext, causal: bool = False):
    s = ctx.scheme
    n = len(x)
    xq, heads = _quant_layer(x, w, ctx)
    ctx.buffer.store("X", n * w.d_model)
    outs = []
    for h, (wq, wk, wv) in enumerate(heads):
        ctx.head = h
        r1 = stage1_scaled_query(xq, wq, s, ctx.hw.device, ctx)
        r2 = stage2_score(r1, wk, xq, s, ctx.hw.device, ctx, causal)
        p = _softmax(r2, ctx, causal)
        outs.append(stage3_value_agg(p, xq, wv, s, ctx.hw.device, ctx, causal))
    concat = np.concatenate(outs, axis=1)
    out = _output_projection(concat, w, ctx, cim=True)
    ctx.buffer.free("X")
    return out, concat


def bilinear_mhsa(x, w: LayerWeights, ctx: RunContext, causal: bool = False):
    """Project on static arrays, program K^T and V into scratch arrays, then compute."""
    s = ctx.scheme
    n, d_k = len(x), w.d_k
    xq, heads = _quant_layer(x, w, ctx)
    ctx.buffer.store("X", n * w.d_model)
    qs, ks, vs = [], [], []
    for h, (wq, wk, wv) in enumerate(heads):
        ctx.head = h
        qs.append(_static_matmul(xq, wq.T, ctx, "projection"))
        ks.append(_static_matmul(xq, wk.T, ctx, "projection"))
        vs.append(_static_matmul(xq, wv.T, ctx, "projection"))
    ctx.buffer.store("Q", n * w.d_model)
    ctx.buffer.store("K", n * w.d_model)
    outs = []
    for h in range(w.n_heads):
        ctx.head = h
        kq = quantize_calibrated(ks[h].T, s.weight_bits)  # (d_k, n) scratch array
        k_arr = _static_array(kq, ctx)
        ctx.writes.record(ctx.layer, h, "K", k_arr.cells)
        ctx.record("k-program", writes_cells=k_arr.cells, write_phases=k_arr.rows,
                   buffer_bytes=ctx.buffer_bytes(n * d_k))
        qq = quantize_calibrated(qs[h], s.input_bits)
        scores = k_arr.mvm(qq, ctx.periph) * (qq.scale * kq.scale / math.sqrt(d_k))
        ctx.record("qk", replicas=1, buffer_bytes=ctx.buffer_bytes(n * d_k + n * n),
                   **k_arr.read_cost(qq.bits, ctx.periph, False).scaled(n))
        p = _softmax(scores, ctx, causal)
        vq = quantize_calibrated(vs[h], s.weight_bits)  # (n, d_k) scratch array
        v_arr = _static_array(vq, ctx)
        ctx.writes.record(ctx.layer, h, "V", v_arr.cells)
        ctx.record("v-program", writes_cells=v_arr.cells, write_phases=v_arr.rows,
                   buffer_bytes=ctx.buffer_bytes(n * d_k))
        pq = quantize_calibrated(p, s.input_bits)
        outs.append(v_arr.mvm(pq, ctx.periph) * (pq.scale * vq.scale))
        ctx.record("sv", replicas=1, buffer_bytes=ctx.buffer_bytes(n * n + n * d_k),
                   **v_arr.read_cost(pq.bits, ctx.periph, False).scaled(n))
    concat = np.concatenate(outs, axis=1)
    out = _output_projection(concat, w, ctx, cim=True)
    for name in ("X", "Q", "K"):
        ctx.buffer.free(name)
    return out, concat


def digital_mhsa(x, w: LayerWeights, ctx: RunContext, causal: bool = False):
    """Quantized operands with full-precision accumulation; no ADC/DAC."""
    xq, heads = _quant_layer(x, w, ctx)
    xf = dequantize(xq)
    outs = []
    for wq, wk, wv in heads:
        q, k, v = xf @ dequantize(wq).T, xf @ dequantize(wk).T, xf @ dequantize(wv).T
        outs.append(float_softmax_rows(q @ k.T / math.sqrt(w.d_k), causal) @ v)
    concat = np.concatenate(outs, axis=1)
    return _output_projection(concat, w, ctx, cim=False), concat


_MHSA = {"cim-trilinear": trilinear_mhsa, "cim-bilinear": bilinear_mhsa, "quantized-digital": digital_mhsa}


def run_mode(job: AttentionJob, weights=None, scheme: QuantScheme | None = None,
             hw: HardwareConfig | None = None, mode: str | None = None, observer: dict | None = None) -> RunResult:
    """Run stacked MHSA layers in ``mode`` (default: the job's mode)."""
    mode = canonical_mode(mode or job.mode)
    weights = _weights_for(job, weights)
    scheme = scheme or QuantScheme()
    hw = hw or HardwareConfig()
    if mode == "float":
        return RunResult(run_reference_attention(job, weights), WriteLog(), Trace(), BufferTracker())
    ctx = RunContext(scheme, hw, observer=observer)
    x = job.x_input
    pre = []
    for l, w in enumerate(weights):
        ctx.layer = l
        x, concat = _MHSA[mode](x, w, ctx, job.causal)
        pre.append(concat)
    return RunResult(x, ctx.writes, ctx.trace, ctx.buffer, pre)


def run_trilinear_mode(job, weights=None, scheme=None, device=None, hw=None, observer=None):
    hw = hw or HardwareConfig(device=device or DeviceParams())
    r = run_mode(job, weights, scheme, hw, "cim-trilinear", observer)
    return r.output, r.writes


def run_bilinear_mode(job, weights=None, scheme=None, device=None, hw=None, observer=None):
    hw = hw or HardwareConfig(device=device or DeviceParams())
    r = run_mode(job, weights, scheme, hw, "cim-bilinear", observer)
    return r.output, r.writes


def run_digital_mode(job, weights=None, scheme=None, observer=None):
    return run_mode(job, weights, scheme, None, "quantized-digital", observer).output


# ---------------------------------------------------------------------------
# analytic write plan (no arithmetic; same counting as the functional run)


def planned_writes(job: AttentionJob, scheme: QuantScheme | None = None, mode: str | None = None) -> WriteLog:
    scheme = scheme or QuantScheme()
    mode = canonical_mode(mode or job.mode)
    log = WriteLog()
    if mode != "cim-bilinear":
        return log
    cells = 2 * job.n_tokens * job.d_k * scheme.cells_per_weight
    for l in range(job.n_layers):
        for h in range(job.n_heads):
            log.record(l, h, "K", cells)
            log.record(l, h, "V", cells)
    return log


# ---------------------------------------------------------------------------
# encoder block


def _layernorm(x, gamma, beta, ctx: RunContext | None, stage: str):
    if ctx is None or ctx.hw.sfu == "float":
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var) * gamma + beta
    bits = 16
    fx = FixedVec.from_float(x, quantize_calibrated(x, bits).scale, bits)
    fg = FixedVec.from_float(gamma, quantize_calibrated(gamma, bits).scale, bits)
    fb = FixedVec.from_float(beta, quantize_calibrated(beta, bits).scale, bits)
    ops = Counter()
    y = layernorm_pipeline(fx, fg, fb, counter=ops).to_float()
    ctx.trace.add_sfu(ctx.layer, None, stage, ops)
    return y


def _gelu(x, ctx: RunContext | None):
    if ctx is None or ctx.hw.sfu == "float":
        return x / (1.0 + np.exp(-1.702 * x))
    bits = ctx.scheme.input_bits
    fx = FixedVec.from_float(x, quantize_calibrated(x, bits).scale, bits)
    ops = Counter()
    y = gelu_pipeline(fx, counter=ops).to_float()
    ctx.trace.add_sfu(ctx.layer, None, "gelu", ops)
    return y


def _ffn_matmul(x, w, ctx: RunContext | None, mode: str, stage: str):
    if ctx is None:
        return x @ w
    xq = quantize_calibrated(x, ctx.scheme.input_bits)
    wq = quantize_calibrated(w, ctx.scheme.weight_bits)
    ctx.head = None
    if mode == "quantized-digital":
        return dequantize(xq) @ dequantize(wq)
    return _static_matmul(xq, wq, ctx, stage)


def encoder_layer(x, w: LayerWeights, mode: str, ctx: RunContext | None, causal: bool = False):
    """Z = LN(X + MHSA(X)); Y = LN(Z + FFN(Z)) with a GELU between the FFN matrices."""
    if mode == "float":
        attn = reference_mhsa(x, w, causal)
    else:
        attn, _ = _MHSA[mode](x, w, ctx, causal)
    z = _layernorm(x + attn, w.ln1_gamma, w.ln1_beta, ctx, "layernorm")
    hdn = _gelu(_ffn_matmul(z, w.w_ffn1, ctx, mode, "ffn"), ctx)
    f = _ffn_matmul(hdn, w.w_ffn2, ctx, mode, "ffn")
    return _layernorm(z + f, w.ln2_gamma, w.ln2_beta, ctx, "layernorm")


def run_encoder_block(job: AttentionJob, weights=None, mode: str | None = None,
                      scheme: QuantScheme | None = None, hw: HardwareConfig | None = None) -> np.ndarray:
    """Stack of ``job.n_layers`` encoder blocks in ``mode`` (``"float"`` allowed)."""
    mode = canonical_mode(mode or job.mode)
    weights = _weights_for(job, weights)
    ctx = None if mode == "float" else RunContext(scheme or QuantScheme(), hw or HardwareConfig())
    x = job.x_input
    for l, w in enumerate(weights):
        if ctx is not None:
            ctx.layer = l
        x = encoder_layer(x, w, mode, ctx, job.causal)
    return x
