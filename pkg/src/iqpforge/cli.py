"""Command-line entry point for the toolkit.

Subcommands: train, sample, diagnose, complexity, oracle, verify. Every
run writes a manifest (subcommand, config digest, version, seed,
timestamps, output list) to the output directory, even when it fails.

Exit codes: 0 success, 1 configuration or input error, 2 training
divergence, 3 capacity (register too wide for the dense oracle).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

from . import __version__
from .circuits import CircuitFamily, random_ensemble_instance
from .diagnostics import (DEFAULT_EPS_GRID, DEFAULT_TV_BINS, _trial_stats,
                          run_trial)
from .rng import derive_rng
from .statevector import (CapacityError, dqgm_sampling_distribution,
                          full_distribution, sample_table, simulate,
                          write_probability_table)
from .tncomplexity import complexity_sweep
from .training import (TrainingDivergence, config_from_dict, load_checkpoint,
                       model_circuit, save_checkpoint, train_dqgm)
from .verify import run_suite

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2
EXIT_CAPACITY = 3


class CliError(ValueError):
    """Bad command line or config; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


@dataclass
class RunManifest:
    subcommand: str
    config_digest: str
    version: str
    seed: int | None
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _file_digest(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _args_digest(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _write_manifest(out_dir: str, manifest: RunManifest) -> None:
    manifest.finished = _timestamp()
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(asdict(manifest), fh, indent=2)
            fh.write("\n")
    except OSError as exc:  # manifest is best-effort on broken out dirs
        print(f"warning: could not write manifest: {exc}", file=sys.stderr)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: float) -> str:
    return repr(float(value))


def resolve_workers(args) -> int:
    if getattr(args, "workers", None):
        return max(int(args.workers), 1)
    env = os.environ.get("IQPFORGE_WORKERS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError as exc:
            raise CliError(f"bad IQPFORGE_WORKERS value {env!r}") from exc
    return os.cpu_count() or 1


def _load_json_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {path}: {exc}") from exc


def _parse_plain_config(doc: dict, allowed: dict, label: str) -> dict:
    """Fail-closed parse of a flat JSON config against allowed defaults."""
    doc = dict(doc)
    version = doc.pop("schema_version", 1)
    if version != 1:
        raise CliError(f"unsupported {label} config schema version {version}")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise CliError(f"unknown {label} config fields: {sorted(unknown)}")
    merged = dict(allowed)
    merged.update(doc)
    return merged


# ---------------------------------------------------------------------------
# Subcommands


def cmd_train(args, manifest: RunManifest) -> int:
    doc = _load_json_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        config = config_from_dict(doc)
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad training config: {exc}") from exc
    manifest.config_digest = config.digest()
    manifest.seed = config.seed

    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)

    out_path = args.out or os.path.join(args.out_dir, "checkpoint.json")
    log_path = args.log or os.path.join(args.out_dir, "loss.csv")
    log_rows: list = []
    try:
        ckpt = train_dqgm(config, resume=resume, log_rows=log_rows)
    except TrainingDivergence:
        _write_log_csv(log_path, log_rows)
        manifest.outputs.append(log_path)
        raise
    save_checkpoint(out_path, ckpt)
    _write_log_csv(log_path, log_rows)
    manifest.outputs += [out_path, log_path]
    print(f"trained {config.steps} steps; final loss "
          f"{ckpt.loss_history[-1]:.6e}; checkpoint {out_path}")
    return EXIT_OK


def _write_log_csv(path: str, rows) -> None:
    _write_csv(path, ["step", "loss", "grad_norm", "wall_ms"],
               ([step, _fmt(loss), _fmt(gn), f"{ms:.3f}"]
                for step, loss, gn, ms in rows))


def cmd_sample(args, manifest: RunManifest) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest.config_digest = ckpt.config_digest
    seed = args.seed if args.seed is not None else ckpt.config.seed
    manifest.seed = seed
    circuit = model_circuit(ckpt.config)
    try:
        table = dqgm_sampling_distribution(circuit, ckpt.theta,
                                           cap=ckpt.config.oracle_cap)
    except CapacityError as exc:
        raise CapacityError(
            f"{exc}; sampling a register this wide is the quantum device's "
            "job, the dense oracle only demonstrates small registers") from exc

    counts = sample_table(table, args.shots, derive_rng(seed, "cli", "sample"))
    out_path = args.out or os.path.join(args.out_dir, "counts.csv")
    rows = [[bits, count, _fmt(count / args.shots)]
            for bits, count in sorted(counts.counts.items())]
    _write_csv(out_path, ["bitstring", "count", "frequency"], rows)
    manifest.outputs.append(out_path)
    print(f"wrote {len(rows)} outcome rows ({args.shots} shots) to {out_path}")
    return EXIT_OK


_DIAGNOSE_DEFAULTS = {
    "families": [CircuitFamily.IQP, CircuitFamily.EXTENDED_IQP],
    "ns": [10, 12, 14, 16],
    "trials": 10,
    "seed": 0,
    "alpha": 1.0,
    "bins": DEFAULT_TV_BINS,
    "eps_values": [float(e) for e in DEFAULT_EPS_GRID],
    "xeb_shots": 2000,
}


def cmd_diagnose(args, manifest: RunManifest) -> int:
    doc = _load_json_config(args.config) if args.config else {}
    cfg = _parse_plain_config(doc, _DIAGNOSE_DEFAULTS, "diagnose")
    if args.seed is not None:
        cfg["seed"] = args.seed
    manifest.config_digest = _args_digest(cfg)
    manifest.seed = cfg["seed"]
    workers = resolve_workers(args)

    jobs = [(family, n, cfg["seed"], trial, cfg["alpha"], cfg["bins"],
             tuple(cfg["eps_values"]), cfg["xeb_shots"])
            for family in cfg["families"]
            for n in cfg["ns"]
            for trial in range(cfg["trials"])]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_stats, jobs))
    else:
        results = [run_trial(*job) for job in jobs]

    scalar_path = os.path.join(args.out_dir, "diagnostics.csv")
    _write_csv(scalar_path,
               ["family", "n", "trial", "anti_concentration", "tv",
                "delta_h", "delta_h_stderr"],
               ([r.family, r.n, r.trial, _fmt(r.anti_concentration),
                 _fmt(r.tv), _fmt(r.delta_h), _fmt(r.delta_h_stderr)]
                for r in results))
    curve_path = os.path.join(args.out_dir, "tsparse.csv")
    _write_csv(curve_path,
               ["family", "n", "trial", "inv_eps", "f"],
               ([r.family, r.n, r.trial, _fmt(inv_eps), _fmt(f)]
                for r in results for inv_eps, f in r.tsparse_curve))
    manifest.outputs += [scalar_path, curve_path]
    print(f"wrote {len(results)} trial rows to {scalar_path}")
    return EXIT_OK


_COMPLEXITY_DEFAULTS = {
    "families": list(CircuitFamily.ALL),
    "ns": list(range(4, 41, 4)),
    "closed": True,
}


def cmd_complexity(args, manifest: RunManifest) -> int:
    doc = _load_json_config(args.config) if args.config else {}
    cfg = _parse_plain_config(doc, _COMPLEXITY_DEFAULTS, "complexity")
    manifest.config_digest = _args_digest(cfg)
    rows = complexity_sweep(cfg["families"], cfg["ns"], closed=cfg["closed"])
    out_path = os.path.join(args.out_dir, "complexity.csv")
    _write_csv(out_path, ["family", "n", "max_rank", "est_log2_cost"],
               ([r.family, r.n, r.max_rank, r.est_log2_cost] for r in rows))
    manifest.outputs.append(out_path)
    print(f"wrote {len(rows)} sweep rows to {out_path}")
    return EXIT_OK


def cmd_oracle(args, manifest: RunManifest) -> int:
    seed = args.seed if args.seed is not None else 0
    manifest.seed = seed
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        manifest.config_digest = ckpt.config_digest
        circuit = model_circuit(ckpt.config)
        table = dqgm_sampling_distribution(circuit, ckpt.theta,
                                           cap=ckpt.config.oracle_cap)
    elif args.family and args.n:
        manifest.config_digest = _args_digest(
            {"family": args.family, "n": args.n, "seed": seed})
        inst = random_ensemble_instance(
            args.family, args.n, derive_rng(seed, "cli", "oracle"))
        table = full_distribution(simulate(inst))
    else:
        raise CliError("oracle needs --checkpoint or both --family and --n")
    out_path = args.out or os.path.join(args.out_dir, "table.bin")
    write_probability_table(out_path, table)
    manifest.outputs.append(out_path)
    print(f"wrote {table.probs.size}-entry probability table to {out_path}")
    return EXIT_OK


def cmd_verify(args, manifest: RunManifest) -> int:
    seed = args.seed if args.seed is not None else 2024
    manifest.seed = seed
    manifest.config_digest = _args_digest({"level": args.level, "seed": seed})
    report = run_suite(args.level, seed=seed)
    out_path = os.path.join(args.out_dir, "verify.json")
    with open(out_path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    manifest.outputs.append(out_path)
    for check in report["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status} {check['name']}: {check['detail']}")
    print(f"suite {'passed' if report['passed'] else 'FAILED'} "
          f"in {report['elapsed_s']:.1f} s")
    return EXIT_OK if report["passed"] else EXIT_CONFIG


# ---------------------------------------------------------------------------
# Parser and dispatch


def _build_parser() -> _Parser:
    parser = _Parser(prog="iqpforge",
                     description="Classical training and analysis of "
                                 "IQP-family generative models.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="override the config/default seed")
        p.add_argument("--workers", type=int, default=None,
                       help="parallel worker cap (default: IQPFORGE_WORKERS "
                            "env or all cores)")
        p.add_argument("--out-dir", default=".",
                       help="directory for outputs and the run manifest")

    p = sub.add_parser("train", help="optimize a model from a JSON config")
    common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="checkpoint path (default out-dir/checkpoint.json)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log", help="loss CSV path (default out-dir/loss.csv)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sample", help="draw oracle shots from a trained model")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shots", type=int, default=20_000)
    p.add_argument("--out", help="counts CSV path (default out-dir/counts.csv)")
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("diagnose", help="sampling-hardness diagnostics sweep")
    common(p)
    p.add_argument("--config", help="JSON config (defaults used if omitted)")
    p.set_defaults(handler=cmd_diagnose)

    p = sub.add_parser("complexity", help="contraction-cost sweep")
    common(p)
    p.add_argument("--config", help="JSON config (defaults used if omitted)")
    p.set_defaults(handler=cmd_complexity)

    p = sub.add_parser("oracle", help="dump a dense probability table")
    common(p)
    p.add_argument("--checkpoint", help="trained model to tabulate")
    p.add_argument("--family", choices=CircuitFamily.ALL,
                   help="random instance family (with --n)")
    p.add_argument("--n", type=int, help="register width for --family")
    p.add_argument("--out", help="binary table path (default out-dir/table.bin)")
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("verify", help="run the oracle cross-check suite")
    common(p)
    p.add_argument("--level", choices=("quick", "standard", "extended"),
                   default="quick")
    p.set_defaults(handler=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _write_manifest(".", RunManifest(
            "unknown", "", __version__, None, _timestamp()))
        return EXIT_CONFIG

    manifest = RunManifest(subcommand=args.command, config_digest="",
                           version=__version__, seed=args.seed,
                           started=_timestamp())
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        code = args.handler(args, manifest)
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        code = EXIT_DIVERGENCE
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        code = EXIT_CAPACITY
    except (CliError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    finally:
        _write_manifest(args.out_dir, manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
