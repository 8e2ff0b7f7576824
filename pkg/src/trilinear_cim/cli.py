"""Command-line runner: ``run``, ``sweep``, ``verify`` and ``fit``.

Exit codes: 0 success, 1 verification failure, 2 invalid input or config,
3 simulation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, oracle
from .acceptance import run_all
from .attention import canonical_mode, generate_weights, run_mode, run_reference_attention
from .config import ConfigError, ExperimentConfig, default_config_text
from .cost import (
    AreaParams,
    HierarchyError,
    analytic_trace,
    buffer_residency,
    build_report,
    plan_hierarchy,
    relative_area,
)
from .crossbar import dump_currents
from .device import FitError, fit_alpha_m, fit_residual_norm, load_gv_samples
from .weights_io import load_weights

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SIM = 0, 1, 2, 3
CELLS_ONLY = AreaParams(col_periph=0.0, bg_col_overhead=0.0)
SHORT = {"quantized-digital": "digital", "cim-bilinear": "bilinear", "cim-trilinear": "trilinear", "float": "float"}


class SimulationError(RuntimeError):
    pass


def _fmt(x):
    """Stable text for report cells."""
    if isinstance(x, float):
        return repr(x)
    return x


def _rows_to_csv(rows: list[dict]) -> str:
    fields = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _oracle_output(job, weights) -> np.ndarray | None:
    if max(job.n_tokens, job.d_model, job.d_k, job.n_heads) > 32:
        return None
    x = job.x_input.tolist()
    for w in weights:
        heads = [(w.w_q[h], w.w_k[h], w.w_v[h]) for h in range(w.n_heads)]
        x = oracle.naive_multihead(x, heads, w.w_o.tolist(), causal=job.causal)
    return np.asarray(x)


def _rel_inf(a, b) -> float:
    scale = float(np.abs(b).max())
    err = float(np.abs(np.asarray(a) - b).max())
    return err / scale if scale > 0 else err


def _job_weights(cfg: ExperimentConfig, job):
    if not cfg["job.weights"]:
        return generate_weights(job)
    try:
        weights = load_weights(cfg["job.weights"])
        if len(weights) != job.n_layers:
            raise ValueError(f"file holds {len(weights)} layers, job.n_layers is {job.n_layers}")
        for w in weights:
            w.check(job)
    except (OSError, ValueError) as e:
        raise ConfigError("job.weights", str(e)) from None
    return weights


def simulate(cfg: ExperimentConfig, mode: str, seed: int, debug_log: list | None = None,
             n_tokens: int | None = None, sub: int | None = None, bits_per_cell: int | None = None,
             adc_bits: int | None = None):
    """One (mode, point) evaluation; returns (CostReport, numerics dict)."""
    job = cfg.job(seed, mode, n_tokens)
    scheme = cfg.scheme(bits_per_cell, adc_bits)
    hw = cfg.hardware(sub, debug_log)
    energy = cfg.energy(hw.sub_rows)
    numerics = {"executed": False}
    execute = cfg.should_execute(job)
    weights = _job_weights(cfg, job) if execute else None
    try:
        if execute:
            res = run_mode(job, weights, scheme, hw, mode)
            trace = res.trace
            ref = run_reference_attention(job, weights)
            numerics = {"executed": True, "rel_err_vs_reference": _rel_inf(res.output, ref)}
            naive = _oracle_output(job, weights)
            if naive is not None:
                numerics["rel_err_vs_oracle"] = _rel_inf(res.output, naive)
        else:
            trace = analytic_trace(job, scheme, hw, mode)
    except (ValueError, ArithmeticError) as e:
        raise SimulationError(f"mode {mode}: {e}") from e
    report = build_report(trace, mode, energy, hw)
    bpe = math.ceil(scheme.input_bits / 8)
    peak = buffer_residency(mode, job.n_tokens, job.d_model, bpe)
    cells = int(relative_area(job, scheme, mode, CELLS_ONLY))
    try:
        plan = plan_hierarchy(cells, hw.sub_rows, hw.sub_cols, peak)
    except HierarchyError as e:
        raise SimulationError(f"mode {mode}, hierarchy sizing: {e}") from e
    report.extra = {
        "job": {"n_tokens": job.n_tokens, "d_model": job.d_model, "d_k": job.d_k, "n_heads": job.n_heads,
                "n_layers": job.n_layers, "seed": seed, "causal": job.causal},
        "numerics": numerics,
        "buffer_peak_bytes": peak,
        "buffer_fits": peak <= cfg["crossbar.global_buffer_mb"] * (1 << 20),
        "relative_area": relative_area(job, scheme, mode),
        "hierarchy": plan.__dict__ | {"n_arrays": plan.n_arrays},
    }
    if mode not in ("cim-bilinear", "cim-trilinear"):
        report.extra["cost_note"] = "array and SFU costs are modeled for the CIM modes only"
    return report, numerics


def _write_outputs(out: Path, cfg: ExperimentConfig, seed: int, payload: dict, rows: list[dict], command: str):
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if "json" in cfg["output.formats"]:
        (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        files.append("report.json")
    if "csv" in cfg["output.formats"]:
        (out / "report.csv").write_text(_rows_to_csv(rows))
        files.append("report.csv")
    manifest = {
        "command": command,
        "config_hash": cfg.hash(),
        "seed": seed,
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "outputs": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return files


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "mode", None):
        cfg = cfg.with_overrides(**{"job.mode": [canonical_mode(args.mode)]})
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    seed = cfg["job.seed"] if args.seed is None else args.seed
    out = Path(args.out or cfg["output.dir"])
    runs, rows = {}, []
    for mode in cfg.modes():
        log = [] if args.debug_currents else None
        report, numerics = simulate(cfg, mode, seed, log)
        runs[mode] = report.as_dict()
        for r in report.csv_rows():
            r.update({k: v for k, v in numerics.items() if k != "executed"})
            rows.append(r)
        if log is not None:
            out.mkdir(parents=True, exist_ok=True)
            dump_currents(out / f"currents_{SHORT[mode]}.csv", log)
        print(f"{mode}: energy {report.total_energy:.6g} fJ, latency {report.total_latency:.6g} ns, "
              f"writes {report.writes_cells:,} cells" + (
                  f", rel err {numerics['rel_err_vs_reference']:.3e}" if numerics["executed"] else ""))
    payload = {"config_hash": cfg.hash(), "seed": seed, "runs": runs}
    files = _write_outputs(out, cfg, seed, payload, rows, "run")
    print(f"wrote {', '.join(files)} and manifest.json to {out}")
    return EXIT_OK


def sweep_points(cfg: ExperimentConfig) -> list[dict]:
    axes = {
        "seq_len": cfg["sweep.seq_len"],
        "subarray": cfg["sweep.subarray"],
        "bitcell_adc": [tuple(p) for p in cfg["sweep.bitcell_adc"]],
    }
    if not any(axes.values()):
        raise ConfigError("sweep", "empty sweep: give at least one of seq_len, subarray, bitcell_adc")
    if not cfg["sweep.modes"]:
        raise ConfigError("sweep.modes", "empty sweep: no modes")
    axes["seq_len"] = axes["seq_len"] or [cfg["job.n_tokens"]]
    axes["subarray"] = axes["subarray"] or [None]  # keep the configured sub_rows x sub_cols
    axes["bitcell_adc"] = axes["bitcell_adc"] or [(cfg["quant.bits_per_cell"], cfg["crossbar.adc_bits"])]
    for key in ("seq_len", "subarray"):
        if any(v is not None and (not isinstance(v, int) or v < 1) for v in axes[key]):
            raise ConfigError(f"sweep.{key}", "expected positive integers")
    return [
        {"index": i, "seq_len": n, "subarray": s or f'{cfg["crossbar.sub_rows"]}x{cfg["crossbar.sub_cols"]}',
         "bits_per_cell": b, "adc_bits": a, "_sub": s}
        for i, (n, s, (b, a)) in enumerate(itertools.product(axes["seq_len"], axes["subarray"], axes["bitcell_adc"]))
    ]


def row_point(pt: dict) -> dict:
    return {k: v for k, v in pt.items() if not k.startswith("_")}


def cmd_sweep(args) -> int:
    cfg = _load(args)
    seed = cfg["job.seed"] if args.seed is None else args.seed
    out = Path(args.out or cfg["output.dir"])
    modes = [canonical_mode(m) for m in cfg["sweep.modes"]]
    rows, points = [], []
    for pt in sweep_points(cfg):
        row = row_point(pt)
        reps = {}
        for mode in modes:
            rep, numerics = simulate(cfg, mode, seed, None, pt["seq_len"], pt["_sub"],
                                     pt["bits_per_cell"], pt["adc_bits"])
            reps[mode] = rep
            p = SHORT[mode]
            row[f"{p}_energy"] = rep.total_energy
            row[f"{p}_latency"] = rep.total_latency
            row[f"{p}_writes_cells"] = rep.writes_cells
            row[f"{p}_relative_area"] = rep.extra["relative_area"]
            if "score" in rep.stages:
                row[f"{p}_score_cycles"] = rep.stages["score"].cycles
                row[f"{p}_score_reads"] = rep.stages["score"].reads
            if numerics["executed"]:
                row[f"{p}_rel_err"] = numerics["rel_err_vs_reference"]
        if "cim-bilinear" in reps and "cim-trilinear" in reps:
            b, t = reps["cim-bilinear"], reps["cim-trilinear"]
            row["energy_ratio_tri_vs_bil"] = t.total_energy / b.total_energy if b.total_energy else float("nan")
            row["latency_ratio_tri_vs_bil"] = t.total_latency / b.total_latency if b.total_latency else float("nan")
            row["area_ratio_tri_vs_bil"] = t.extra["relative_area"] / b.extra["relative_area"]
            row["bilinear_write_energy_share"] = b.totals.energy["write"] / b.total_energy if b.total_energy else 0.0
        rows.append(row)
        points.append({"point": row_point(pt), "runs": {m: r.as_dict() for m, r in reps.items()}})
    payload = {"config_hash": cfg.hash(), "seed": seed, "points": points}
    files = _write_outputs(out, cfg, seed, payload, rows, "sweep")
    print(f"{len(rows)} sweep points; wrote {', '.join(files)} and manifest.json to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_all(eta_error=args.perturb_eta)
    failed = [r for r in results if not r.passed]
    if failed:
        names = ", ".join(f"{r.number} ({r.name})" for r in failed)
        print(f"verification failed: criterion {names}", file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(results)} criteria passed")
    return EXIT_OK


def _g0_from_header(path: Path) -> float | None:
    for line in path.read_text().splitlines():
        s = line.strip()
        if s.startswith("#") and "g0" in s and "=" in s:
            try:
                return float(s.split("=", 1)[1].split()[0])
            except (ValueError, IndexError):
                return None
    return None


def cmd_fit(args) -> int:
    path = Path(args.gv_data)
    if not path.exists():
        raise ConfigError(str(path), "file not found")
    g0 = args.g0 if args.g0 is not None else _g0_from_header(path)
    if g0 is None:
        raise ConfigError("g0", "pass --g0 or add a '# g0 = <uS>' header line")
    try:
        samples = load_gv_samples(path)
    except ValueError as e:
        raise ConfigError(str(path), str(e)) from None
    try:
        alpha, m = fit_alpha_m(samples, g0)
    except FitError as e:
        code = EXIT_CONFIG if "distinct" in str(e) or "positive" in str(e) else EXIT_SIM
        print(f"fit failed: {e}", file=sys.stderr)
        return code
    resid = fit_residual_norm(samples, g0, alpha, m)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    frag = (
        f"# fitted from {path.name} at g0 = {g0!r} uS, {len(samples)} samples\n"
        f"# residual_norm = {resid!r}\n"
        f"device.alpha = {alpha!r}\n"
        f"device.m_coeff = {m!r}\n"
    )
    (out / "fitted_device.toml").write_text(frag)
    print(f"alpha = {alpha:.6g} 1/V, M = {m:.6g} uS/V, residual norm = {resid:.3e}")
    print(f"wrote {out / 'fitted_device.toml'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="dotted key = value config file")
    common.add_argument("--out", metavar="DIR", help="output directory (default: output.dir)")
    common.add_argument("--seed", type=int, help="override job.seed")
    common.add_argument("--mode", choices=["digital", "bilinear", "trilinear"], help="override job.mode")
    common.add_argument("--debug-currents", action="store_true", help="dump pre-ADC currents as CSV")

    p = argparse.ArgumentParser(prog="trilinear-cim", description="Trilinear CIM attention simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate the configured job")
    sub.add_parser("sweep", parents=[common], help="cross-product sweep over the sweep.* axes")
    v = sub.add_parser("verify", parents=[common], help="run the built-in acceptance checks")
    v.add_argument("--perturb-eta", type=float, default=1.0, help=argparse.SUPPRESS)
    f = sub.add_parser("fit", parents=[common], help="fit alpha and M to a G-V file")
    f.add_argument("gv_data", metavar="GV_FILE")
    f.add_argument("--g0", type=float, help="programmed conductance of the measured cell (uS)")
    sub.add_parser("defaults", help="print the default configuration")
    return p


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "fit": cmd_fit}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "defaults":
        print(default_config_text(), end="")
        return EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
