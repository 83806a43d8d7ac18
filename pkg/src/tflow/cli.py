"""Command-line front end.

    python -m tflow run --config run.toml [--out DIR]
    python -m tflow validate --config run.toml
    python -m tflow dump-kernel --input sigma.npy --T 0.1 --out sigma.tflk
    python -m tflow load-kernel sigma.tflk [--npy out.npy]

``--threads N`` (before the command) caps the FFT worker threads.
Exit codes: 0 success, 1 validation failure, 2 configuration or I/O error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import sys
import warnings
from importlib import metadata

import numpy as np

from . import observables as obs
from . import perturbation as pt
from ._core import HAVE_COMPILED
from .config import RunConfig, load_config
from .errors import (BadTemperature, FlowStalled, FormatError, IoError, NonPhysical, ParseError,
                     TFlowError, ValidationError)
from .flow import FlowResult, flow_run
from .kernel_io import dump_kernel, load_kernel
from .timegrid import dyson, set_workers

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
CSV_COLUMNS = ("T", "t", "n_up", "n_down", "n_corr", "fluct", "I_L", "I_R", "choi_min", "trace_err")
CP_TOL = 1e-8
ORACLE_TOL = 1e-2
ORACLE_OCC_TOL = 1e-3
SHORT_TIME = 0.05
SHORT_TIME_TOL = 1e-4
FIXED_POINT_RATIO = 1e-3


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.1.0"


def _fmt(x) -> str:
    return repr(float(x))


# ------------------------------------------------------------------ running

def run_flow(cfg: RunConfig, extra_records=()) -> FlowResult:
    record_at = tuple(sorted(set(cfg.record_temperatures) | set(extra_records), reverse=True))
    with warnings.catch_warnings():
        warnings.simplefilter("error", NonPhysical)
        return flow_run(cfg.model, cfg.grid, T_inf=cfg.T_inf, T_target=cfg.T_target, record_at=record_at,
                        config=cfg.stepper, options=cfg.options)


def record_rows(cfg: RunConfig, rec):
    """CSV rows ``(T, t, ...)`` for one flow record."""
    rho = obs.propagate(rec.Pi, cfg.rho0)
    n_up, n_dn, n_corr, fluct = obs.local_observables(rho)
    cur = obs.current_series(cfg.model, rec.Pi, rec.current_sigma, rec.grid.dt, cfg.rho0)
    I_L = cur[0]
    I_R = cur[1] if cur.shape[0] > 1 else np.full_like(I_L, np.nan)
    rows = []
    for k, t in enumerate(rec.grid.t):
        chk = obs.cp_trace_hermiticity(rec.Pi[k])
        rows.append((rec.T, t, n_up[k], n_dn[k], n_corr[k], fluct[k], I_L[k], I_R[k],
                     chk["choi_min"], chk["trace_err"]))
    return rows


def observables_csv(cfg: RunConfig, result: FlowResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in result.records:
        for row in record_rows(cfg, rec):
            w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def u0_oracle(cfg: RunConfig, rec):
    """Deviation of a flowed record from the closed-form ``U = 0`` kernel."""
    exact = pt.u0_exact_kernel(cfg.model, rec.temps, cfg.grid).values
    kernel_dev = float(np.max(np.abs(rec.sigma - exact)) / np.max(np.abs(exact)))
    ctx = pt.context(cfg.model, cfg.grid)
    Pi_exact = dyson(-1j * exact, ctx.pi_inf_dense, cfg.grid.dt)
    occ_flow = obs.local_observables(obs.propagate(rec.Pi, cfg.rho0))[:2]
    occ_exact = obs.local_observables(obs.propagate(Pi_exact, cfg.rho0))[:2]
    occ_dev = float(max(np.max(np.abs(a - b)) for a, b in zip(occ_flow, occ_exact)))
    return {"T": rec.T, "kernel_rel_dev": kernel_dev, "occupation_dev": occ_dev,
            "kernel_tol": ORACLE_TOL, "occupation_tol": ORACLE_OCC_TOL,
            "passed": kernel_dev <= ORACLE_TOL and occ_dev <= ORACLE_OCC_TOL}


def manifest(cfg: RunConfig, result: FlowResult, dumps):
    stats = {k: v for k, v in result.stats.items() if k != "seconds"}
    out = {
        "config_sha256": cfg.digest(),
        "grid": {"t_max": cfg.grid.t_max, "n_points": cfg.grid.n_points, "dt": cfg.grid.dt},
        "vertex_grid": {"n_points": cfg.n_vertex},
        "path": {"T_inf": cfg.T_inf, "T_target": cfg.T_target},
        "records": [rec.T for rec in result.records],
        "kernel_dumps": dumps,
        "stepper_stats": stats,
        "versions": {"tflow": _version(), "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": metadata.version("scipy"),
                     "compiled_core": HAVE_COMPILED},
    }
    if cfg.model.U == 0:
        out["u0_oracle"] = u0_oracle(cfg, result.records[-1])
    return out


def cmd_run(cfg: RunConfig, out_dir=None, result: FlowResult | None = None) -> int:
    out_dir = out_dir or cfg.directory
    result = result or run_flow(cfg)
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "observables.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(observables_csv(cfg, result))
        dumps = []
        wanted = set(cfg.record_temperatures)
        for rec in result.records:
            if not any(abs(rec.T - T) <= 1e-9 * max(1.0, T) for T in wanted):
                continue
            name = f"kernel_T{rec.T:.6g}.tflk"
            dump_kernel(os.path.join(out_dir, name), rec.sigma, rec.T)
            dumps.append(name)
        man = manifest(cfg, result, dumps)
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(man, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write to {out_dir}: {exc.strerror}") from None
    if "u0_oracle" in man:
        o = man["u0_oracle"]
        print(f"U=0 oracle at T={o['T']:.6g}: kernel deviation {o['kernel_rel_dev']:.3e}, "
              f"occupation deviation {o['occupation_dev']:.3e}")
    print(f"wrote {len(result.records)} records to {out_dir}")
    return EXIT_OK


# ------------------------------------------------------------------ validation

def _check(name, passed, measured, tol, note=""):
    return {"name": name, "status": "pass" if passed else "fail", "measured": measured, "tol": tol, "note": note}


def validation_checks(cfg: RunConfig, result: FlowResult | None = None):
    """Checks feasible for this configuration, as a list of dicts."""
    gamma_ref = max(r.gamma_up for r in cfg.model.reservoirs)
    need_fp = cfg.T_target <= 0.05 * gamma_ref and cfg.T_inf > gamma_ref
    if result is None:
        result = run_flow(cfg, extra_records=(gamma_ref,) if need_fp else ())
    checks = []

    diag = [obs.cp_trace_hermiticity(rec.Pi) for rec in result.records]
    choi = min(d["choi_min"] for d in diag)
    trace = max(d["trace_err"] for d in diag)
    checks.append(_check("complete positivity", choi >= -CP_TOL, choi, -CP_TOL))
    checks.append(_check("trace preservation", trace <= CP_TOL, trace, CP_TOL))
    herm = max(d["herm_err"] for d in diag)
    checks.append(_check("hermiticity preservation", herm <= CP_TOL, herm, CP_TOL))

    if need_fp:
        low = result.records[-1]
        ref = result.at(gamma_ref)
        ratio = float(np.max(np.abs(low.dsigma_dT)) / np.max(np.abs(ref.dsigma_dT)))
        checks.append(_check("fixed point", ratio <= FIXED_POINT_RATIO, ratio, FIXED_POINT_RATIO,
                             f"|dSigma/dT| at T={low.T:.3g} relative to T={ref.T:.3g}"))
    else:
        checks.append({"name": "fixed point", "status": "skipped", "measured": None, "tol": FIXED_POINT_RATIO,
                       "note": f"T_target = {cfg.T_target:.3g} is too high"})

    mask = cfg.grid.t <= SHORT_TIME + 1e-12
    base = result.records[0].Pi[mask]
    spread = max(float(np.max(np.abs(rec.Pi[mask] - base))) for rec in result.records)
    checks.append(_check("short-time universality", spread <= SHORT_TIME_TOL, spread, SHORT_TIME_TOL,
                         f"propagators for t <= {SHORT_TIME}"))
    if cfg.model.is_uniform():
        z = pt.zero_time_kernel(cfg.model)
        dev = max(float(np.max(np.abs(rec.sigma[0] - z))) for rec in result.records)
        checks.append(_check("zero-time kernel", dev <= 1e-10, dev, 1e-10))

    if cfg.model.U == 0:
        o = u0_oracle(cfg, result.records[-1])
        checks.append(_check("U=0 oracle (kernel)", o["kernel_rel_dev"] <= ORACLE_TOL, o["kernel_rel_dev"], ORACLE_TOL))
        checks.append(_check("U=0 oracle (occupations)", o["occupation_dev"] <= ORACLE_OCC_TOL,
                             o["occupation_dev"], ORACLE_OCC_TOL))
    return checks


def cmd_validate(cfg: RunConfig, result: FlowResult | None = None) -> int:
    checks = validation_checks(cfg, result)
    for c in checks:
        if c["status"] == "skipped":
            print(f"SKIPPED {c['name']}: {c['note']}")
        else:
            extra = f" ({c['note']})" if c["note"] else ""
            print(f"{c['status'].upper()} {c['name']}: measured {c['measured']:.3e}, tolerance {c['tol']:.1e}{extra}")
    return EXIT_OK if all(c["status"] != "fail" for c in checks) else EXIT_VALIDATION


# ------------------------------------------------------------------ kernel files

def cmd_dump_kernel(args) -> int:
    try:
        values = np.load(args.input, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read {args.input}: {exc}") from None
    dump_kernel(args.out, values, args.T)
    print(f"wrote {args.out}: shape {values.shape}, T={args.T!r}")
    return EXIT_OK


def cmd_load_kernel(args) -> int:
    k = load_kernel(args.path)
    print(f"{args.path}: shape {k.values.shape}, T={k.T!r}, max |entry| {np.max(np.abs(k.values), initial=0.0):.6g}")
    if args.npy:
        try:
            np.save(args.npy, k.values)
        except OSError as exc:
            raise IoError(f"cannot write {args.npy}: {exc.strerror}") from None
    return EXIT_OK


# ------------------------------------------------------------------ entry point

def build_parser():
    p = argparse.ArgumentParser(prog="tflow", description="T-flow renormalization group for the Anderson dot.")
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="flow a configuration and write observables, kernels and a manifest")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (overrides the config)")
    v = sub.add_parser("validate", help="run the checks feasible for a configuration")
    v.add_argument("--config", required=True)
    d = sub.add_parser("dump-kernel", help="convert a complex .npy array into a kernel dump")
    d.add_argument("--input", required=True)
    d.add_argument("--T", type=float, required=True, help="temperature tag")
    d.add_argument("--out", required=True)
    ld = sub.add_parser("load-kernel", help="inspect a kernel dump")
    ld.add_argument("path")
    ld.add_argument("--npy", default=None, help="also export the values as .npy")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        set_workers(args.threads)
    try:
        if args.command == "run":
            return cmd_run(load_config(args.config), args.out)
        if args.command == "validate":
            return cmd_validate(load_config(args.config))
        if args.command == "dump-kernel":
            return cmd_dump_kernel(args)
        return cmd_load_kernel(args)
    except ParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, IoError, FormatError, BadTemperature) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlowStalled, NonPhysical, FloatingPointError, TFlowError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
