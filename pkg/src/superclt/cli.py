"""Command-line front end: spectrum / limits / simulate / verify / report.

Exit codes: 0 success, 1 validation error, 2 numerical or convergence
error, 3 verification failure (some test outside its budget), 64 usage.

Every run writes a manifest sidecar (config hash, tool version, seed,
subcommand, timestamps, output list); timestamps live only there, so the
result files themselves are byte-reproducible for a fixed (seed, config).
All randomness flows from --seed; the worker count comes from --threads or
the SUPERCLT_THREADS environment variable and never changes results.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    DomainError,
    ManifestMismatch,
    NoConvergence,
    NotSupercritical,
    NumericalError,
    ParseError,
    SimulationDiverged,
    SupercltError,
    ValidationError,
)
from .limits import limit_covariance_matrix
from .model import (
    REFERENCE_NAMES,
    derive_coefficients,
    load_config,
    reference_config_text,
)
from .simulate import SimConfig, simulate_ensemble
from .spectral import EigenFunction, classify, decompose
from .verify import default_functions, default_resolvent_shift, run_verification

_VALIDATION_ERRORS = (
    ParseError,
    ValidationError,
    ConfigError,
    DomainError,
    NotSupercritical,
    ManifestMismatch,
    FileNotFoundError,
)
_NUMERICAL_ERRORS = (NumericalError, SimulationDiverged, NoConvergence)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _read_config(spec: str) -> tuple[str, str]:
    """Return (config_text, source_label); spec is a path or a reference name."""
    if spec in REFERENCE_NAMES:
        return reference_config_text(spec), f"builtin:{spec}"
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {spec}")
    return path.read_text(), str(path)


def _floats(text: str) -> tuple[float, ...]:
    if not text.strip():
        return ()
    return tuple(float(x) for x in text.split(","))


def _manifest(config_text: str, seed, subcommand: str, outputs: list[str]) -> dict:
    return {
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "tool_version": __version__,
        "seed": seed,
        "subcommand": subcommand,
        "created_unix": time.time(),
        "outputs": sorted(outputs),
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_function(decomp, spec: str | None, basis: str) -> EigenFunction | None:
    if spec is None:
        return None
    vals = np.array(_floats(spec))
    if basis == "eigen":
        return EigenFunction.from_coeffs(decomp, vals)
    return EigenFunction.from_values(decomp, vals)


def _cmd_spectrum(args) -> int:
    config_text, _ = _read_config(args.config)
    parsed = load_config(config_text)
    decomp = decompose(parsed.model)
    classification = classify(decomp, tol=args.tol)
    payload = {
        "rates": decomp.rates.tolist(),
        "multiplicity": decomp.multiplicity.tolist(),
        "principal_rate": decomp.principal_rate,
        "principal_vector": decomp.principal_vector.tolist(),
        "supercritical": decomp.supercritical,
        "classification": {
            "small": [k + 1 for k in classification.small],
            "critical": [k + 1 for k in classification.critical],
            "large": [k + 1 for k in classification.large],
            "tolerance": classification.tolerance,
        },
    }
    print(f"{'k':>3s} {'rate':>12s} {'mult':>5s} {'class':>9s}")
    for k in range(decomp.n_groups):
        print(
            f"{k + 1:3d} {decomp.rates[k]:12.6g} {decomp.multiplicity[k]:5d} "
            f"{classification.regime_of(k):>9s}"
        )
    print(f"principal vector: {np.array2string(decomp.principal_vector, precision=6)}")
    print(f"supercritical: {decomp.supercritical}")
    print(json.dumps(payload, sort_keys=True))
    if args.out:
        out = Path(args.out)
        _write_json(out, payload)
        _write_json(out.with_suffix(out.suffix + ".manifest.json"),
                    _manifest(config_text, None, "spectrum", [str(out)]))
    return 0


def _cmd_limits(args) -> int:
    config_text, _ = _read_config(args.config)
    parsed = load_config(config_text)
    decomp = decompose(parsed.model)
    classification = classify(decomp)
    der = derive_coefficients(parsed.model)
    q = args.q if args.q is not None else default_resolvent_shift(parsed.model, decomp)
    f_def, h_def, g_def = default_functions(decomp, classification)
    f = _parse_function(decomp, args.f, args.basis) or f_def
    h = _parse_function(decomp, args.h, args.basis) or h_def
    g = _parse_function(decomp, args.g, args.basis) or g_def
    taus = _floats(args.tau_grid)
    cov = limit_covariance_matrix(
        decomp, der.var_rate, f, h, g, taus, q, der.bound, classification
    )
    payload = {
        "tau_grid": list(cov.tau_grid),
        "q": q,
        "sigma": {f"{k:g}": v for k, v in sorted(cov.sigma.items())},
        "beta": {f"{k:g}": v for k, v in sorted(cov.beta.items())},
        "eta": {f"{k[0]:g},{k[1]:g}": v for k, v in sorted(cov.eta.items())},
        "rho_sq": cov.rho_sq,
        "grid_matrix": cov.grid_matrix.tolist(),
    }
    print(json.dumps(payload, sort_keys=True))
    if args.out:
        out = Path(args.out)
        json_path = out.with_suffix(".json")
        csv_path = out.with_suffix(".csv")
        _write_json(json_path, payload)
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["block", "tau1", "tau2", "value", "provenance"])
            for (i, t1) in enumerate(cov.tau_grid):
                for (j, t2) in enumerate(cov.tau_grid):
                    writer.writerow(["sigma", t1, t2, repr(cov.sigma_block[i, j]), "closed-form"])
                    writer.writerow(["beta", t1, t2, repr(cov.beta_block[i, j]), "closed-form"])
                    writer.writerow(["eta", t1, t2, repr(cov.cross_block[i, j]), "closed-form"])
            writer.writerow(["rho_sq", "", "", repr(cov.rho_sq), "closed-form"])
        _write_json(out.with_suffix(".manifest.json"),
                    _manifest(config_text, None, "limits", [str(json_path), str(csv_path)]))
    return 0


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("SUPERCLT_THREADS", "1"))


def _cmd_simulate(args) -> int:
    config_text, _ = _read_config(args.config)
    parsed = load_config(config_text)
    grid = _floats(args.grid)
    horizon = args.horizon if args.horizon is not None else (grid[-1] if grid else 0.0)
    cfg = SimConfig(
        scheme=args.scheme, h=args.h, horizon=horizon, grid=grid,
        seed=args.seed, mu0=parsed.mu0,
    )
    ensemble = simulate_ensemble(
        parsed.model, cfg, args.replicas, threads=_threads(args)
    )
    out = Path(args.out)
    csv_path = out.with_suffix(".csv")
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        n = parsed.model.n_types
        writer.writerow(["replica", "time"] + [f"X_{i + 1}" for i in range(n)] + ["extinct"])
        extinct = ensemble.extinct
        for r in range(ensemble.n_replicas):
            for ti, t in enumerate(ensemble.times):
                writer.writerow(
                    [r, f"{t:g}"]
                    + [repr(v) for v in ensemble.paths[r, ti]]
                    + [int(extinct[r, ti])]
                )
    meta_path = out.with_suffix(".meta.json")
    _write_json(meta_path, {
        "tool_version": __version__,
        "scheme": cfg.scheme, "h": cfg.h, "horizon": cfg.horizon,
        "grid": list(cfg.grid), "seed": cfg.seed, "replicas": args.replicas,
        "mu0": parsed.mu0.tolist(),
    })
    _write_json(out.with_suffix(".manifest.json"),
                _manifest(config_text, args.seed, "simulate", [str(csv_path), str(meta_path)]))
    print(f"wrote {csv_path} ({args.replicas} replicas x {len(cfg.grid)} times)")
    return 0


def _report_table(report_dict: dict) -> str:
    lines = [
        f"{'test':22s} {'label':36s} {'predicted':>12s} {'estimate':>12s} "
        f"{'se':>10s} {'pass':>5s}"
    ]
    for row in report_dict["rows"]:
        lines.append(
            f"{row['test']:22s} {row['label']:36s} {row['predicted']:12.6g} "
            f"{row['estimate']:12.6g} {row['se']:10.3g} "
            f"{'ok' if row['pass'] else 'FAIL':>5s}"
        )
    return "\n".join(lines)


def _cmd_verify(args) -> int:
    config_text, _ = _read_config(args.config)
    parsed = load_config(config_text)
    tests = args.tests.split(",") if args.tests else None
    report = run_verification(
        parsed.model,
        t=args.t,
        taus=_floats(args.taus),
        q=args.q,
        replicas=args.replicas,
        seed=args.seed,
        level=args.level,
        scheme=args.scheme,
        h=args.h,
        mu0=parsed.mu0,
        threads=_threads(args),
        tests=tests,
    )
    payload = {
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "report": report.to_dict(),
    }
    print(_report_table(payload["report"]))
    for note in report.notes:
        print(f"note: {note}")
    if args.out:
        out = Path(args.out)
        json_path = out.with_suffix(".json")
        csv_path = out.with_suffix(".csv")
        _write_json(json_path, payload)
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["test", "label", "predicted", "estimate", "se", "level", "bias_budget", "pass"]
            )
            for row in report.rows:
                writer.writerow([
                    row.test, row.label, repr(row.predicted), repr(row.estimate),
                    repr(row.se), row.level, repr(row.bias_budget), int(row.passed),
                ])
        _write_json(out.with_suffix(".manifest.json"),
                    _manifest(config_text, args.seed, "verify", [str(json_path), str(csv_path)]))
    if report.n_failed:
        print(f"{report.n_failed} test(s) FAILED")
        return 3
    return 0


def _cmd_report(args) -> int:
    inputs = [json.loads(Path(p).read_text()) for p in args.inputs]
    if not inputs:
        print(json.dumps({"rows": [], "sources": 0}))
        return 0
    hashes = {doc.get("config_sha256") for doc in inputs}
    if len(hashes) != 1:
        raise ManifestMismatch(f"inputs come from different configs: {sorted(map(str, hashes))}")
    seeds = [doc["report"]["seed"] for doc in inputs]
    notes = []
    if len(set(seeds)) != len(seeds):
        notes.append("duplicate seeds among inputs; pooled SEs double-count those runs")

    pooled: dict[tuple[str, str], dict] = {}
    for doc in inputs:
        r_count = doc["report"]["replicas"]
        for row in doc["report"]["rows"]:
            key = (row["test"], row["label"])
            slot = pooled.setdefault(key, {
                "test": row["test"], "label": row["label"],
                "predicted": row["predicted"], "level": row["level"],
                "bias_budget": row["bias_budget"],
                "weighted_est": 0.0, "var_sum": 0.0, "replicas": 0,
            })
            if abs(slot["predicted"] - row["predicted"]) > 1e-12 * max(1.0, abs(slot["predicted"])):
                raise ManifestMismatch(f"prediction mismatch for {key}")
            slot["weighted_est"] += r_count * row["estimate"]
            slot["var_sum"] += (r_count * row["se"]) ** 2
            slot["replicas"] += r_count
    rows = []
    for slot in pooled.values():
        total = slot["replicas"]
        est = slot["weighted_est"] / total
        se = slot["var_sum"] ** 0.5 / total
        rows.append({
            "test": slot["test"], "label": slot["label"],
            "predicted": slot["predicted"], "estimate": est, "se": se,
            "level": slot["level"], "bias_budget": slot["bias_budget"],
            "pass": abs(est - slot["predicted"]) <= slot["level"] * se + slot["bias_budget"],
            "replicas": total,
        })
    merged = {
        "sources": len(inputs),
        "seeds": seeds,
        "config_sha256": next(iter(hashes)),
        "notes": notes,
        "rows": rows,
    }
    print(_report_table(merged))
    if args.out:
        _write_json(Path(args.out), merged)
    return 3 if any(not row["pass"] for row in rows) else 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="superclt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="eigenvalues, multiplicities, classification")
    p.add_argument("--config", required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("limits", help="closed-form limit covariances on a lag grid")
    p.add_argument("--config", required=True)
    p.add_argument("--f", dest="f")
    p.add_argument("--h", dest="h")
    p.add_argument("--g", dest="g")
    p.add_argument("--basis", choices=("eigen", "pointwise"), default="eigen")
    p.add_argument("--tau-grid", default="0,1")
    p.add_argument("--q", type=float)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_limits)

    p = sub.add_parser("simulate", help="sample replica paths to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--scheme", choices=("strang_exact", "euler_full_truncation"),
                   default="strang_exact")
    p.add_argument("--h", type=float, default=0.05)
    p.add_argument("--horizon", type=float)
    p.add_argument("--grid", required=True)
    p.add_argument("--replicas", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("verify", help="Monte Carlo verification of the limit theorem")
    p.add_argument("--config", required=True)
    p.add_argument("--t", type=float, default=12.0)
    p.add_argument("--taus", default="0,1")
    p.add_argument("--q", type=float)
    p.add_argument("--replicas", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=float, default=3.0)
    p.add_argument("--tests")
    p.add_argument("--scheme", choices=("strang_exact", "euler_full_truncation"),
                   default="strang_exact")
    p.add_argument("--h", type=float, default=0.05)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("report", help="merge verify outputs (recomputes nothing)")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)
    return parser


def dispatch(argv) -> int:
    """Run one subcommand and translate errors to exit codes."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 64
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except SupercltError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
