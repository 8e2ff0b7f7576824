"""Experiment configuration: dotted ``section.key = value`` lines, parsed as TOML.

Every key is validated against ``SCHEMA`` before anything runs; unknown
sections or keys raise ``ConfigError`` naming the offending key.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attention import AttentionJob, HardwareConfig, canonical_mode
from .cost import EnergyParams
from .crossbar import Peripherals
from .device import DeviceParams
from .quant import QuantScheme


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _energy_defaults() -> dict:
    return {f.name: (float, f.default) for f in fields(EnergyParams)}


# section -> key -> (type, default); defaults are the reference system configuration
SCHEMA: dict[str, dict[str, tuple]] = {
    "device": {
        "alpha": (float, 0.137),
        "m_coeff": (float, 1.54),
        "gamma_tg": (float, 0.5),
        "band_lo": (float, 29.0),
        "band_hi": (float, 69.0),
        "eta_bar": (float, 0.157),
        "eta_method": (str, "fixed-constant"),
        "per_cell_eta": (bool, False),
        "eta_error": (float, 1.0),
    },
    "quant": {
        "input_bits": (int, 8),
        "weight_bits": (int, 8),
        "bits_per_cell": (int, 2),
    },
    "crossbar": {
        "sub_rows": (int, 64),
        "sub_cols": (int, 64),
        "mux_ratio": (int, 8),
        "adc_bits": (int, 8),
        "dac_bits": (int, 8),
        "v_read": (float, 1.0),
        "v_dac_max": (float, 1.0),
        "subtract": (str, "post-adc"),
        "sensing": (str, "single-ended"),
        "adc_range": (str, "worst-case"),
        "sfu": (str, "fixed"),
        "strict_dac": (bool, False),
        "parallel_crossbars": (int, 8),
        "global_buffer_mb": (float, 4.0),
    },
    "energy": _energy_defaults(),
    "job": {
        "n_tokens": (int, 8),
        "d_model": (int, 16),
        "d_k": (int, 4),
        "n_heads": (int, 4),
        "n_layers": (int, 1),
        "mode": (list, ["cim-trilinear"]),
        "seed": (int, 0),
        "causal": (bool, False),
        "execute": (str, "auto"),  # "auto", "yes" or "no"
        "weights": (str, ""),  # optional .bin path; empty = generate from seed
    },
    "sweep": {
        "seq_len": (list, []),
        "subarray": (list, []),
        "bitcell_adc": (list, []),  # [[bits_per_cell, adc_bits], ...]
        "modes": (list, ["cim-bilinear", "cim-trilinear"]),
    },
    "output": {
        "dir": (str, "out"),
        "formats": (list, ["json", "csv"]),
    },
}

EXECUTE_LIMIT = 1 << 16  # auto mode executes when n_tokens * d_model * n_layers is at most this


def _coerce(key: str, typ, value):
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is list and isinstance(value, (str, int)):
        return [value]
    if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
        raise ConfigError(key, f"expected {typ.__name__}, got {type(value).__name__}")
    return value


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    sections_present: set = field(default_factory=set)

    def __getitem__(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
        present = set()
        for sec, body in raw.items():
            if sec not in SCHEMA:
                raise ConfigError(sec, "unknown section")
            if not isinstance(body, dict):
                raise ConfigError(sec, "expected a section of dotted keys")
            present.add(sec)
            for key, value in body.items():
                dotted = f"{sec}.{key}"
                if key not in SCHEMA[sec]:
                    raise ConfigError(dotted, "unknown key")
                values[sec][key] = _coerce(dotted, SCHEMA[sec][key][0], value)
        cfg = cls(values, present)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "ExperimentConfig":
        if path is None:
            return cls.from_dict({})
        try:
            raw = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(str(path), f"parse error: {e}") from None
        return cls.from_dict(raw)

    def validate(self) -> None:
        """Build every object once so range errors surface as ConfigError."""
        for key, build in (("device", self.device), ("quant", self.scheme), ("crossbar", self.hardware),
                           ("energy", self.energy)):
            try:
                build()
            except (ValueError, TypeError) as e:
                raise ConfigError(key, str(e)) from None
        for m in self["job.mode"] + self["sweep.modes"]:
            try:
                canonical_mode(m)
            except ValueError as e:
                raise ConfigError("job.mode", str(e)) from None
        if self["job.execute"] not in ("auto", "yes", "no"):
            raise ConfigError("job.execute", "expected 'auto', 'yes' or 'no'")
        bad = set(self["output.formats"]) - {"json", "csv"}
        if bad:
            raise ConfigError("output.formats", f"unsupported {sorted(bad)}")
        try:
            self.job(self["job.seed"], self.modes()[0])
        except ValueError as e:
            raise ConfigError("job", str(e)) from None
        for pair in self["sweep.bitcell_adc"]:
            if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, int) for v in pair)):
                raise ConfigError("sweep.bitcell_adc", "expected [bits_per_cell, adc_bits] integer pairs")

    # -- object builders ------------------------------------------------------

    def device(self) -> DeviceParams:
        d = self.values["device"]
        return DeviceParams(
            alpha=d["alpha"], m_coeff=d["m_coeff"], gamma_tg=d["gamma_tg"], band_lo=d["band_lo"],
            band_hi=d["band_hi"], eta_bar=d["eta_bar"], eta_method=d["eta_method"],
        )

    def scheme(self, bits_per_cell: int | None = None, adc_bits: int | None = None) -> QuantScheme:
        q, c = self.values["quant"], self.values["crossbar"]
        return QuantScheme(
            input_bits=q["input_bits"], weight_bits=q["weight_bits"],
            adc_bits=adc_bits or c["adc_bits"], dac_bits=c["dac_bits"],
            bits_per_cell=bits_per_cell or q["bits_per_cell"],
        )

    def hardware(self, sub: int | None = None, debug_log: list | None = None) -> HardwareConfig:
        c, d = self.values["crossbar"], self.values["device"]
        periph = Peripherals(
            adc_bits=c["adc_bits"], mux_ratio=c["mux_ratio"], dac_bits=c["dac_bits"], v_read=c["v_read"],
            v_dac_max=c["v_dac_max"], subtract=c["subtract"], sensing=c["sensing"], adc_range=c["adc_range"],
            debug_log=debug_log,
        )
        return HardwareConfig(
            device=self.device(), periph=periph, sub_rows=sub or c["sub_rows"], sub_cols=sub or c["sub_cols"],
            per_cell_eta=d["per_cell_eta"], sfu=c["sfu"], strict_dac=c["strict_dac"],
            parallel_crossbars=c["parallel_crossbars"], eta_error=d["eta_error"],
        )

    def energy(self, sub_rows: int | None = None) -> EnergyParams:
        e = dict(self.values["energy"])
        if sub_rows is not None and "energy" not in self.sections_present:
            e["bg_line_length_per_col"] = float(sub_rows)  # 1 um pitch per row
        return EnergyParams(**e)

    def modes(self) -> list[str]:
        return [canonical_mode(m) for m in self["job.mode"]]

    def job(self, seed: int | None = None, mode: str | None = None, n_tokens: int | None = None) -> AttentionJob:
        j = self.values["job"]
        return AttentionJob(
            n_tokens=n_tokens or j["n_tokens"], d_model=j["d_model"], d_k=j["d_k"], n_heads=j["n_heads"],
            n_layers=j["n_layers"], mode=mode or self.modes()[0], seed=j["seed"] if seed is None else seed,
            causal=j["causal"],
        )

    def should_execute(self, job: AttentionJob) -> bool:
        ex = self["job.execute"]
        if ex != "auto":
            return ex == "yes"
        return job.n_tokens * job.d_model * job.n_layers <= EXECUTE_LIMIT

    def canonical(self) -> dict:
        return {sec: dict(sorted(body.items())) for sec, body in sorted(self.values.items())}

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **dotted) -> "ExperimentConfig":
        raw = {sec: dict(body) for sec, body in self.values.items()}
        for k, v in dotted.items():
            sec, key = k.split(".", 1)
            raw[sec][key] = v
        cfg = ExperimentConfig.from_dict(raw)
        cfg.sections_present = self.sections_present | {k.split(".")[0] for k in dotted}
        return cfg


def default_config_text() -> str:
    """The full default configuration as dotted key lines."""
    lines = []
    for sec, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            lines.append(f"{sec}.{key} = {json.dumps(default)}")
        lines.append("")
    return "\n".join(lines)
