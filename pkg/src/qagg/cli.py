"""Command-line front end: aggregate user data, run experiments, validate families.

Subcommands
    aggregate  solve the aggregation program on a design/response pair
    bench      run config-driven Monte Carlo experiments (optionally sweeps)
    validate   check the ordered-smoother axioms on a file of matrices

Exit codes: 0 success, 1 validation failure, 2 malformed input or
config, 3 solver non-convergence (partial output is still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

import qagg
from qagg.aggregate import cp_values, solve_q_aggregation
from qagg.bench import (
    ConfigError,
    ExperimentConfig,
    regret_vs_M_sweep,
    regret_vs_q_sweep,
    run_experiment,
    write_report_json,
    write_reports_csv,
)
from qagg.smoother import check_ordered
from qagg.spectral import DesignProblem, build_tikhonov_family, recover_coefficients

__all__ = ["InputError", "RunManifest", "main", "entry"]


class InputError(Exception):
    """Malformed user input; the message names the offending field."""


@dataclass(frozen=True)
class RunManifest:
    """Inventory of one bench invocation: inputs, outputs and checksums."""

    config_path: str
    output_dir: str
    tool_version: str
    seed: int
    started_at: str
    finished_at: str
    files: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "config_path": self.config_path,
            "output_dir": self.output_dir,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "files": dict(self.files),
        }


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# input parsing


def _read_rows(path: Path, field: str) -> tuple[np.ndarray, tuple[int, ...] | None]:
    """Load a CSV (optional '# shape ...' comment header) or .npy array."""
    if not path.exists():
        raise InputError(f"{field}: file not found: {path}")
    if path.suffix == ".npy":
        return np.load(path), None
    declared = None
    try:
        with open(path) as fh:
            first = fh.readline().strip()
        if first.startswith("#"):
            tokens = first.lstrip("#").replace(",", " ").split()
            if tokens and all(t.lstrip("-").isdigit() for t in tokens):
                declared = tuple(int(t) for t in tokens)
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise InputError(f"{field}: could not parse {path}: {exc}") from exc
    return data, declared


def _load_matrix(path: Path, field: str) -> np.ndarray:
    data, declared = _read_rows(path, field)
    if data.ndim != 2:
        raise InputError(f"{field}: expected a 2-d matrix in {path}, got shape {data.shape}")
    if declared is not None and tuple(declared) != data.shape:
        raise InputError(
            f"{field}: shape header {declared} does not match data shape {data.shape}"
        )
    return data


def _load_vector(path: Path, field: str) -> np.ndarray:
    data, _ = _read_rows(path, field)
    data = np.asarray(data, dtype=float)
    if data.ndim == 2 and 1 in data.shape:
        data = data.ravel()
    if data.ndim != 1:
        raise InputError(f"{field}: expected a vector in {path}, got shape {data.shape}")
    return data


def _load_matrix_list(path: Path, field: str) -> list[np.ndarray]:
    """A stack of k square n x n blocks: k*n CSV rows of n columns, or a 3-d .npy."""
    data, declared = _read_rows(path, field)
    if data.ndim == 3:
        return [np.asarray(m, dtype=float) for m in data]
    if data.ndim != 2:
        raise InputError(f"{field}: expected stacked square matrices, got shape {data.shape}")
    n = data.shape[1]
    if declared is not None:
        if len(declared) != 3 or declared[1] != declared[2]:
            raise InputError(f"{field}: shape header must read 'count n n', got {declared}")
        count, size = declared[0], declared[1]
        if data.shape != (count * size, size):
            raise InputError(
                f"{field}: shape header {declared} does not match {data.shape[0]} rows "
                f"of {n} columns"
            )
        n = size
    if data.shape[0] % n != 0:
        raise InputError(
            f"{field}: {data.shape[0]} rows of {n} columns do not stack into square matrices"
        )
    return [data[i : i + n] for i in range(0, data.shape[0], n)]


def _parse_lambdas(text: str) -> np.ndarray:
    """A comma list of values or 'geom:min:max:count'."""
    if text.startswith("geom:"):
        parts = text.split(":")
        if len(parts) != 4:
            raise InputError(f"--lambdas: expected geom:min:max:count, got {text!r}")
        try:
            lo, hi, count = float(parts[1]), float(parts[2]), int(parts[3])
        except ValueError as exc:
            raise InputError(f"--lambdas: could not parse {text!r}: {exc}") from exc
        if count < 1 or lo <= 0 or hi < lo:
            raise InputError(
                f"--lambdas: geometric grid needs 0 < min <= max and count >= 1, got {text!r}"
            )
        return np.geomspace(lo, hi, count)
    try:
        values = np.array([float(tok) for tok in text.split(",") if tok.strip() != ""])
    except ValueError as exc:
        raise InputError(f"--lambdas: could not parse {text!r}: {exc}") from exc
    if values.size == 0:
        raise InputError("--lambdas: the grid is empty")
    return values


def _write_column_csv(path: Path, values: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        for v in values:
            fh.write(f"{v!r}\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_aggregate(args) -> int:
    X = _load_matrix(Path(args.design), "--design")
    y = _load_vector(Path(args.response), "--response")
    if y.size != X.shape[0]:
        raise InputError(
            f"--response: length {y.size} does not match design rows {X.shape[0]}"
        )
    if args.penalty == "identity":
        K = np.eye(X.shape[1])
    else:
        K = _load_matrix(Path(args.penalty), "--penalty")
    lambdas = _parse_lambdas(args.lambdas)
    if not args.sigma > 0:
        raise InputError(f"--sigma: must be positive, got {args.sigma}")
    try:
        problem = DesignProblem(X=X, K=K, lambdas=lambdas)
    except ValueError as exc:
        raise InputError(f"--penalty/--lambdas: {exc}") from exc
    family = build_tikhonov_family(problem)

    report = solve_q_aggregation(family, y, args.sigma)
    df = family.alphas.sum(axis=1)
    cp = cp_values(family, y, args.sigma)
    coefficients = recover_coefficients(family, report.weights)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "tool_version": qagg.__version__,
        "sigma": args.sigma,
        "lambdas": problem.lambdas.tolist(),
        "theta": report.weights.theta.tolist(),
        "objective": report.objective,
        "kkt_residual": report.kkt_residual,
        "iterations": report.iterations,
        "converged": report.converged,
        "df": df.tolist(),
        "cp": cp.tolist(),
        "coefficients": coefficients.tolist(),
        "fitted": report.weights.fitted.tolist(),
    }
    with open(out / "aggregate.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "weights.csv", "w", newline="") as fh:
        fh.write("member,lambda,theta,df,cp\n")
        for j in range(family.member_count):
            fh.write(
                f"{j},{problem.lambdas[j]!r},{report.weights.theta[j]!r},{df[j]!r},{cp[j]!r}\n"
            )
    _write_column_csv(out / "coefficients.csv", coefficients)
    _write_column_csv(out / "fitted.csv", report.weights.fitted)

    print(
        f"aggregated {family.member_count} members: objective {report.objective:.6g}, "
        f"kkt residual {report.kkt_residual:.3e}, converged {report.converged}"
    )
    if not report.converged:
        print("warning: solver did not converge; outputs hold the best iterate", file=sys.stderr)
        return 3
    return 0


def _load_config(path: Path) -> dict:
    if not path.exists():
        raise InputError(f"--config: file not found: {path}")
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError as exc:
            raise InputError(
                "--config: TOML configs need Python >= 3.11; use JSON instead"
            ) from exc
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"--config: invalid TOML in {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(
            f"--config: invalid JSON in {path} at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}"
        ) from exc


def cmd_bench(args) -> int:
    started = _utcnow()
    config_path = Path(args.config)
    try:
        config = ExperimentConfig.from_dict(_load_config(config_path))
    except ConfigError as exc:
        raise InputError(f"--config: {exc}") from exc
    if args.seed is not None:
        config = replace(config, seed=args.seed)

    if args.sweep == "M":
        if config.sweep_m is None:
            raise InputError("--sweep M: the config has no 'sweep.M' values")
        reports = regret_vs_M_sweep(config, config.sweep_m, threads=args.threads)
    elif args.sweep == "q":
        if config.sweep_q is None:
            raise InputError("--sweep q: the config has no 'sweep.q' values")
        reports = regret_vs_q_sweep(config, config.sweep_q, threads=args.threads)
    else:
        reports = [run_experiment(config, threads=args.threads)]

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for report in reports:
        name = f"report_{report.label}.json"
        write_report_json(report, out / name)
        written.append(name)
    write_reports_csv(reports, out / "reports.csv")
    written.append("reports.csv")

    manifest = RunManifest(
        config_path=str(config_path),
        output_dir=str(out),
        tool_version=qagg.__version__,
        seed=config.seed,
        started_at=started,
        finished_at=_utcnow(),
        files={name: _sha256(out / name) for name in written},
    )
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    for report in reports:
        for name, s in report.stats.items():
            print(
                f"{report.label}: {name:11s} regret {s.regret:9.4f} "
                f"± {s.ci_half_width:.4f} (R* = {report.oracle_risk:.4f}, "
                f"M = {report.member_total}, q = {report.family_total})"
            )
    return 0


def cmd_validate(args) -> int:
    matrices = _load_matrix_list(Path(args.matrices), "--matrices")
    if not args.tol > 0:
        raise InputError(f"--tol: must be positive, got {args.tol}")
    report = check_ordered(matrices, tol=args.tol)
    axioms = (
        ("axiom (i) symmetric with spectrum in [0, 1]", report.shrinkage_ok),
        ("axiom (ii) pairwise commutation", report.commute_ok),
        ("axiom (iii) pairwise semidefinite ordering", report.comparable_ok),
    )
    for label, ok in axioms:
        print(f"{label}: {'PASS' if ok else 'FAIL'}")
    for failure in report.failures:
        print(f"  {failure}", file=sys.stderr)
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qagg",
        description="Aggregation of ordered linear smoothers: solve, benchmark, validate.",
    )
    parser.add_argument("--version", action="version", version=f"qagg {qagg.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_agg = sub.add_parser("aggregate", help="aggregate a Tikhonov family on user data")
    p_agg.add_argument("--design", required=True, help="n x p design matrix (CSV or .npy)")
    p_agg.add_argument("--response", required=True, help="length-n response vector")
    p_agg.add_argument(
        "--penalty", default="identity", help="penalty matrix file or 'identity'"
    )
    p_agg.add_argument(
        "--lambdas", required=True, help="comma list of values or geom:min:max:count"
    )
    p_agg.add_argument("--sigma", type=float, required=True, help="noise standard deviation")
    p_agg.add_argument("--output", required=True, help="output directory")
    p_agg.set_defaults(func=cmd_aggregate)

    p_bench = sub.add_parser("bench", help="run Monte Carlo experiments from a config")
    p_bench.add_argument("--config", required=True, help="experiment config (JSON)")
    p_bench.add_argument("--output", required=True, help="output directory")
    p_bench.add_argument(
        "--sweep", choices=("M", "q"), default=None, help="sweep grid sizes or family counts"
    )
    p_bench.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_bench.add_argument(
        "--threads", type=int, default=1, help="max worker processes for replicates"
    )
    p_bench.set_defaults(func=cmd_bench)

    p_val = sub.add_parser("validate", help="check ordered-smoother axioms on matrices")
    p_val.add_argument(
        "--matrices", required=True, help="stacked square matrices (CSV or 3-d .npy)"
    )
    p_val.add_argument("--tol", type=float, default=1e-8, help="axiom tolerance")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:  # console-script wrapper
    sys.exit(main())


if __name__ == "__main__":
    entry()
