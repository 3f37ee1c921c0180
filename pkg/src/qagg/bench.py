"""Seeded Monte Carlo harness for risk and regret experiments.

A config describes a ground-truth scenario (mean shape, noise level,
dimension), one or more Tikhonov families (penalty + tuning grid), the
methods to compare, a replicate count and a seed.  Each replicate draws
y = mu + eps with its own generator derived from (seed, replicate
index), runs every configured method, and records the realized loss
||fit - mu||^2 together with the per-draw excess over the exact oracle
member.  Regrets are reported against the analytic oracle risk R*, not
a simulated one.

All randomness flows from the config seed: the design matrix uses the
(seed, 0) stream and replicate i the (seed, 1, i) stream, so serial and
parallel executions agree bit for bit.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from qagg.aggregate import (
    excess_bound_gap,
    exponential_weights,
    select_cp,
    select_gcv,
    solve_q_aggregation,
)
from qagg.smoother import FamilyUnion, GroundTruth, member_risks, oracle_index
from qagg.spectral import DesignProblem, SpectralFamily, apply_member, build_tikhonov_family

__all__ = [
    "ConfigError",
    "MeanSpec",
    "PenaltySpec",
    "GridSpec",
    "FamilySpec",
    "ScenarioSpec",
    "ExperimentConfig",
    "Instance",
    "MethodStats",
    "RegretReport",
    "METHODS",
    "build_instance",
    "run_experiment",
    "regret_vs_M_sweep",
    "regret_vs_q_sweep",
    "write_report_json",
    "write_reports_csv",
]

METHODS = ("q_agg", "cp_select", "gcv", "exp_weights", "oracle")

MEAN_SHAPES = ("zero", "spectral-decay", "single-spike", "explicit")

EXCESS_QUANTILES = (0.5, 0.9, 0.99)

# z-value for the >= 95% confidence half-widths in the reports
CI_Z = 1.96


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


def _require(mapping: dict, key: str, kind, where: str):
    if key not in mapping:
        raise ConfigError(f"missing key '{where}.{key}'")
    value = mapping[key]
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key '{where}.{key}' has invalid value {value!r}") from exc


def _known_keys(mapping: dict, allowed: tuple, where: str):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key '{where}.{sorted(unknown)[0]}'")


@dataclass(frozen=True)
class MeanSpec:
    """Ground-truth mean generator.

    Spectral shapes place coefficients directly on the eigenbasis of
    the first family: 'spectral-decay' uses coefficients i^(-rate),
    'single-spike' a unit coefficient on one coordinate.  When
    target_risk is set the coefficients are rescaled so the oracle risk
    of the candidate set matches it.
    """

    shape: str = "zero"
    rate: float = 1.0
    coordinate: int = 0
    scale: float = 1.0
    target_risk: float | None = None
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.shape not in MEAN_SHAPES:
            raise ConfigError(
                f"key 'scenario.mean.shape' must be one of {MEAN_SHAPES}, got {self.shape!r}"
            )
        if self.shape == "explicit" and self.values is None:
            raise ConfigError("key 'scenario.mean.values' is required for explicit means")
        if self.target_risk is not None and self.shape in ("zero", "explicit"):
            raise ConfigError(
                "key 'scenario.mean.target_risk' needs a spectral mean shape"
            )

    @classmethod
    def from_dict(cls, data, where="scenario.mean") -> "MeanSpec":
        if isinstance(data, str):
            data = {"shape": data}
        _known_keys(data, ("shape", "rate", "coordinate", "scale", "target_risk", "values"), where)
        values = data.get("values")
        return cls(
            shape=str(data.get("shape", "zero")),
            rate=float(data.get("rate", 1.0)),
            coordinate=int(data.get("coordinate", 0)),
            scale=float(data.get("scale", 1.0)),
            target_risk=None if data.get("target_risk") is None else float(data["target_risk"]),
            values=None if values is None else tuple(float(v) for v in values),
        )

    def to_dict(self) -> dict:
        out = {"shape": self.shape}
        if self.shape == "spectral-decay":
            out["rate"] = self.rate
        if self.shape == "single-spike":
            out["coordinate"] = self.coordinate
        if self.shape == "explicit":
            out["values"] = list(self.values)
        if self.target_risk is not None:
            out["target_risk"] = self.target_risk
        elif self.shape not in ("zero", "explicit"):
            out["scale"] = self.scale
        return out


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty matrix generator: identity or diag(i^exponent), i = 1..p."""

    kind: str = "identity"
    exponent: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "diag-power"):
            raise ConfigError(
                f"key 'penalty.kind' must be 'identity' or 'diag-power', got {self.kind!r}"
            )

    def build(self, p: int) -> np.ndarray:
        if self.kind == "identity" or self.exponent == 0.0:
            return np.eye(p)
        return np.diag(np.arange(1.0, p + 1.0) ** self.exponent)

    @classmethod
    def from_dict(cls, data, where="penalty") -> "PenaltySpec":
        if isinstance(data, str):
            return cls(kind=data)
        _known_keys(data, ("kind", "exponent"), where)
        return cls(kind=str(data.get("kind", "identity")), exponent=float(data.get("exponent", 0.0)))

    def to_dict(self):
        if self.kind == "identity":
            return "identity"
        return {"kind": self.kind, "exponent": self.exponent}


@dataclass(frozen=True)
class GridSpec:
    """Geometric tuning grid.

    Bounds are multiples of the mean squared singular value of the
    whitened design unless ``absolute`` is set, so the default range
    [1e-3, 1e3] covers near-interpolation through near-zero fits.
    """

    min: float = 1e-3
    max: float = 1e3
    count: int = 20
    absolute: bool = False

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"key 'grid.count' must be >= 1, got {self.count}")
        if not 0 < self.min <= self.max:
            raise ConfigError(
                f"key 'grid.min'/'grid.max' must satisfy 0 < min <= max, "
                f"got ({self.min}, {self.max})"
            )
        if self.count > 1 and self.min == self.max:
            raise ConfigError("key 'grid.count' > 1 needs grid.min < grid.max")

    def build(self, scale: float) -> np.ndarray:
        factor = 1.0 if self.absolute else scale
        return factor * np.geomspace(self.min, self.max, self.count)

    @classmethod
    def from_dict(cls, data, where="grid") -> "GridSpec":
        _known_keys(data, ("min", "max", "count", "absolute"), where)
        return cls(
            min=float(data.get("min", 1e-3)),
            max=float(data.get("max", 1e3)),
            count=_require(data, "count", int, where),
            absolute=bool(data.get("absolute", False)),
        )

    def to_dict(self):
        return {"min": self.min, "max": self.max, "count": self.count, "absolute": self.absolute}


@dataclass(frozen=True)
class FamilySpec:
    """One Tikhonov family: coefficient dimension, penalty and grid."""

    p: int
    penalty: PenaltySpec = PenaltySpec()
    grid: GridSpec = GridSpec()

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError(f"key 'families[].p' must be >= 1, got {self.p}")

    @classmethod
    def from_dict(cls, data, where="families[]") -> "FamilySpec":
        _known_keys(data, ("p", "penalty", "grid"), where)
        return cls(
            p=_require(data, "p", int, where),
            penalty=PenaltySpec.from_dict(data.get("penalty", "identity"), f"{where}.penalty"),
            grid=GridSpec.from_dict(data.get("grid", {"count": 20}), f"{where}.grid"),
        )

    def to_dict(self):
        return {"p": self.p, "penalty": self.penalty.to_dict(), "grid": self.grid.to_dict()}


@dataclass(frozen=True)
class ScenarioSpec:
    """Gaussian mean model parameters for simulation."""

    n: int
    sigma: float = 1.0
    mean: MeanSpec = MeanSpec()

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"key 'scenario.n' must be >= 1, got {self.n}")
        if not self.sigma > 0:
            raise ConfigError(f"key 'scenario.sigma' must be positive, got {self.sigma}")

    @classmethod
    def from_dict(cls, data, where="scenario") -> "ScenarioSpec":
        _known_keys(data, ("n", "sigma", "mean"), where)
        return cls(
            n=_require(data, "n", int, where),
            sigma=float(data.get("sigma", 1.0)),
            mean=MeanSpec.from_dict(data.get("mean", {"shape": "zero"})),
        )

    def to_dict(self):
        return {"n": self.n, "sigma": self.sigma, "mean": self.mean.to_dict()}


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one Monte Carlo experiment."""

    scenario: ScenarioSpec
    families: tuple[FamilySpec, ...]
    replicates: int
    seed: int
    methods: tuple[str, ...] = METHODS
    lemma_check: bool = False
    label: str = "experiment"
    sweep_m: tuple[int, ...] | None = None
    sweep_q: tuple[int, ...] | None = None
    members_per_family: int = 16

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError(f"key 'replicates' must be >= 1, got {self.replicates}")
        if not self.families:
            raise ConfigError("key 'families' must list at least one family")
        p0 = self.families[0].p
        if any(f.p != p0 for f in self.families):
            raise ConfigError("key 'families[].p' must be equal across families (shared design)")
        for name in self.methods:
            if name not in METHODS:
                raise ConfigError(f"key 'methods' contains unknown method {name!r}")
        if not self.methods:
            raise ConfigError("key 'methods' must name at least one method")
        if self.lemma_check and "q_agg" not in self.methods:
            raise ConfigError("key 'lemma_check' requires the 'q_agg' method")
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "methods", tuple(self.methods))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        _known_keys(
            data,
            (
                "scenario",
                "families",
                "replicates",
                "seed",
                "methods",
                "lemma_check",
                "label",
                "sweep",
            ),
            "config",
        )
        if "scenario" not in data:
            raise ConfigError("missing key 'config.scenario'")
        fams = data.get("families")
        if not isinstance(fams, (list, tuple)) or not fams:
            raise ConfigError("key 'config.families' must be a nonempty list")
        sweep = data.get("sweep", {}) or {}
        _known_keys(sweep, ("M", "q", "members_per_family"), "config.sweep")
        return cls(
            scenario=ScenarioSpec.from_dict(data["scenario"]),
            families=tuple(
                FamilySpec.from_dict(f, f"families[{i}]") for i, f in enumerate(fams)
            ),
            replicates=_require(data, "replicates", int, "config"),
            seed=_require(data, "seed", int, "config"),
            methods=tuple(data.get("methods", METHODS)),
            lemma_check=bool(data.get("lemma_check", False)),
            label=str(data.get("label", "experiment")),
            sweep_m=tuple(int(v) for v in sweep["M"]) if "M" in sweep else None,
            sweep_q=tuple(int(v) for v in sweep["q"]) if "q" in sweep else None,
            members_per_family=int(sweep.get("members_per_family", 16)),
        )

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "scenario": self.scenario.to_dict(),
            "families": [f.to_dict() for f in self.families],
            "replicates": self.replicates,
            "seed": self.seed,
            "methods": list(self.methods),
            "lemma_check": self.lemma_check,
        }
        sweep = {}
        if self.sweep_m is not None:
            sweep["M"] = list(self.sweep_m)
        if self.sweep_q is not None:
            sweep["q"] = list(self.sweep_q)
        if sweep:
            sweep["members_per_family"] = self.members_per_family
            out["sweep"] = sweep
        return out


@dataclass(frozen=True)
class Instance:
    """Realized candidate set and ground truth for one experiment."""

    candidates: SpectralFamily | FamilyUnion
    truth: GroundTruth
    oracle_member: int
    oracle_risk: float

    @property
    def member_total(self) -> int:
        return self.candidates.member_count

    @property
    def family_total(self) -> int:
        return self.candidates.q if isinstance(self.candidates, FamilyUnion) else 1


def _design_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def _replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, index)))


def _build_families(config: ExperimentConfig) -> list[SpectralFamily]:
    n, p = config.scenario.n, config.families[0].p
    X = _design_rng(config.seed).standard_normal((n, p))
    families = []
    for idx, spec in enumerate(config.families):
        K = spec.penalty.build(p)
        if spec.grid.absolute:
            scale = 1.0
        else:
            w, Q = np.linalg.eigh(0.5 * (K + K.T))
            s = np.linalg.svd(X @ ((Q / np.sqrt(w)) @ Q.T), compute_uv=False)
            scale = float(np.mean(s**2))
        problem = DesignProblem(X=X, K=K, lambdas=spec.grid.build(scale))
        families.append(build_tikhonov_family(problem, family_id=f"family-{idx}"))
    return families


def _mean_unit(spec: MeanSpec, basis_family: SpectralFamily, n: int) -> np.ndarray:
    if spec.shape == "zero":
        return np.zeros(n)
    if spec.shape == "explicit":
        values = np.asarray(spec.values, dtype=float)
        if values.shape != (n,):
            raise ConfigError(
                f"key 'scenario.mean.values' must have length {n}, got {values.shape}"
            )
        return values
    r = basis_family.rank
    coef = np.zeros(r)
    if spec.shape == "spectral-decay":
        coef = np.arange(1.0, r + 1.0) ** (-spec.rate)
    else:  # single-spike
        if not 0 <= spec.coordinate < r:
            raise ConfigError(
                f"key 'scenario.mean.coordinate' must lie in [0, {r}), got {spec.coordinate}"
            )
        coef[spec.coordinate] = 1.0
    return basis_family.basis @ coef


def _calibrate_mean(candidates, mu_unit: np.ndarray, sigma: float, target: float) -> np.ndarray:
    """Scale mu_unit so that the oracle risk of the candidate set hits target."""
    variances = member_risks(candidates, GroundTruth(mu=np.zeros(mu_unit.size), sigma=sigma))
    bias_unit = member_risks(candidates, GroundTruth(mu=mu_unit, sigma=sigma)) - variances
    unbiased = bias_unit <= 1e-12 * max(1.0, float(np.abs(bias_unit).max()))
    if unbiased.any():
        cap = float(variances[unbiased].min())
        if target >= cap:
            raise ConfigError(
                f"key 'scenario.mean.target_risk' = {target} is unreachable: the grid "
                f"contains an (almost) unbiased member with variance {cap:.6g}"
            )
    if float(variances.min()) >= target:
        raise ConfigError(
            f"key 'scenario.mean.target_risk' = {target} is below the pure-variance "
            f"floor {float(variances.min()):.6g}"
        )

    def oracle_risk_at(t):
        return float(np.min(variances + t**2 * bias_unit))

    hi = 1.0
    while oracle_risk_at(hi) < target:
        hi *= 2.0
        if hi > 1e12:
            raise ConfigError("mean calibration failed to bracket the target risk")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if oracle_risk_at(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) * mu_unit


def build_instance(config: ExperimentConfig, mu_override: np.ndarray | None = None) -> Instance:
    """Materialize the candidate families and ground truth of a config."""
    families = _build_families(config)
    candidates = families[0] if len(families) == 1 else FamilyUnion(families=tuple(families))
    sigma = config.scenario.sigma
    if mu_override is not None:
        mu = np.asarray(mu_override, dtype=float)
    else:
        spec = config.scenario.mean
        mu_unit = _mean_unit(spec, families[0], config.scenario.n)
        if spec.target_risk is not None:
            mu = _calibrate_mean(candidates, mu_unit, sigma, spec.target_risk)
        else:
            mu = spec.scale * mu_unit
    truth = GroundTruth(mu=mu, sigma=sigma)
    j_star, r_star = oracle_index(candidates, truth)
    return Instance(candidates=candidates, truth=truth, oracle_member=j_star, oracle_risk=r_star)


def _member_fit(candidates, j: int, y: np.ndarray) -> np.ndarray:
    if isinstance(candidates, FamilyUnion):
        fam, local = candidates.locate(j)
        return apply_member(fam, local, y)
    return apply_member(candidates, j, y)


def _replicate_chunk(instance: Instance, config: ExperimentConfig, lo: int, hi: int) -> dict:
    """Run replicates [lo, hi) and return per-draw arrays (fixed order)."""
    count = hi - lo
    mu = instance.truth.mu
    sigma = instance.truth.sigma
    candidates = instance.candidates
    losses = {name: np.empty(count) for name in config.methods}
    oracle_losses = np.empty(count)
    q_excess = np.full(count, np.nan)
    q_converged = np.ones(count, dtype=bool)
    lemma_gap = np.full(count, -np.inf)

    for pos, idx in enumerate(range(lo, hi)):
        rng = _replicate_rng(config.seed, idx)
        y = mu + sigma * rng.standard_normal(mu.size)
        fit_star = _member_fit(candidates, instance.oracle_member, y)
        oracle_losses[pos] = float((fit_star - mu) @ (fit_star - mu))
        for name in config.methods:
            if name == "oracle":
                losses[name][pos] = oracle_losses[pos]
            elif name == "cp_select":
                j = select_cp(candidates, y, sigma)
                fit = _member_fit(candidates, j, y)
                losses[name][pos] = float((fit - mu) @ (fit - mu))
            elif name == "gcv":
                j = select_gcv(candidates, y)
                fit = _member_fit(candidates, j, y)
                losses[name][pos] = float((fit - mu) @ (fit - mu))
            elif name == "exp_weights":
                w = exponential_weights(candidates, y, sigma)
                fit = w.fitted
                losses[name][pos] = float((fit - mu) @ (fit - mu))
            else:  # q_agg
                report = solve_q_aggregation(candidates, y, sigma)
                fit = report.weights.fitted
                losses[name][pos] = float((fit - mu) @ (fit - mu))
                q_excess[pos] = losses[name][pos] - oracle_losses[pos]
                q_converged[pos] = report.converged
                if config.lemma_check:
                    gap = excess_bound_gap(candidates, report.weights.theta, y, sigma, mu)
                    slack = max(0.0, -report.kkt_residual) + 1e-9 * (
                        1.0 + abs(report.objective)
                    )
                    lemma_gap[pos] = gap - slack
    return {
        "losses": losses,
        "oracle_losses": oracle_losses,
        "q_excess": q_excess,
        "q_converged": q_converged,
        "lemma_gap": lemma_gap,
    }


@dataclass(frozen=True)
class MethodStats:
    """Monte Carlo summary of one method."""

    method: str
    mean_risk: float
    std_error: float
    regret: float
    ci_half_width: float

    def to_dict(self):
        return {
            "method": self.method,
            "mean_risk": self.mean_risk,
            "std_error": self.std_error,
            "regret": self.regret,
            "ci_half_width": self.ci_half_width,
        }


@dataclass(frozen=True)
class RegretReport:
    """Aggregated experiment outcome.

    Regrets are mean realized loss minus the exact oracle risk R*;
    confidence half-widths are CI_Z standard errors.  Per-draw excess
    quantiles of the aggregation method support tail checks.
    """

    label: str
    member_total: int
    family_total: int
    seed: int
    replicates: int
    oracle_member: int
    oracle_risk: float
    stats: dict[str, MethodStats]
    excess_quantiles: dict[str, float]
    solver_failures: int
    lemma_violations: int | None
    lemma_worst_gap: float | None
    runtime_seconds: float
    config: ExperimentConfig

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "member_total": self.member_total,
            "family_total": self.family_total,
            "seed": self.seed,
            "replicates": self.replicates,
            "oracle_member": self.oracle_member,
            "oracle_risk": self.oracle_risk,
            "methods": {name: s.to_dict() for name, s in self.stats.items()},
            "excess_quantiles": dict(self.excess_quantiles),
            "solver_failures": self.solver_failures,
            "lemma_violations": self.lemma_violations,
            "lemma_worst_gap": self.lemma_worst_gap,
            "runtime_seconds": self.runtime_seconds,
            "config": self.config.to_dict(),
        }


def _chunk_task(args):
    return _replicate_chunk(*args)


def run_experiment(
    config: ExperimentConfig,
    *,
    threads: int = 1,
    mu_override: np.ndarray | None = None,
) -> RegretReport:
    """Run all replicates of a config and aggregate into a report.

    Replicates are independent; with threads > 1 they are distributed
    over worker processes in contiguous chunks.  The per-replicate
    generators depend only on (seed, replicate index), so the result is
    identical for any thread count.
    """
    t0 = time.perf_counter()
    instance = build_instance(config, mu_override=mu_override)
    R = config.replicates
    if threads > 1 and R >= 2:
        workers = min(threads, R)
        bounds = np.linspace(0, R, workers + 1, dtype=int)
        tasks = [
            (instance, config, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_chunk_task, tasks))
    else:
        chunks = [_replicate_chunk(instance, config, 0, R)]

    losses = {
        name: np.concatenate([c["losses"][name] for c in chunks]) for name in config.methods
    }
    q_excess = np.concatenate([c["q_excess"] for c in chunks])
    q_converged = np.concatenate([c["q_converged"] for c in chunks])
    lemma_gap = np.concatenate([c["lemma_gap"] for c in chunks])

    stats: dict[str, MethodStats] = {}
    for name in config.methods:
        vals = losses[name]
        if name == "q_agg":
            vals = vals[q_converged]
        mean = float(vals.mean()) if vals.size else float("nan")
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        stats[name] = MethodStats(
            method=name,
            mean_risk=mean,
            std_error=se,
            regret=mean - instance.oracle_risk,
            ci_half_width=CI_Z * se,
        )

    excess_quantiles: dict[str, float] = {}
    if "q_agg" in config.methods:
        vals = q_excess[q_converged]
        if vals.size:
            qs = np.quantile(vals, EXCESS_QUANTILES)
            excess_quantiles = {
                f"q{int(100 * q)}": float(v) for q, v in zip(EXCESS_QUANTILES, qs)
            }
    solver_failures = int((~q_converged).sum()) if "q_agg" in config.methods else 0

    lemma_violations = None
    lemma_worst = None
    if config.lemma_check:
        gaps = lemma_gap[q_converged]
        lemma_violations = int((gaps > 0.0).sum())
        lemma_worst = float(gaps.max()) if gaps.size else None

    return RegretReport(
        label=config.label,
        member_total=instance.member_total,
        family_total=instance.family_total,
        seed=config.seed,
        replicates=R,
        oracle_member=instance.oracle_member,
        oracle_risk=instance.oracle_risk,
        stats=stats,
        excess_quantiles=excess_quantiles,
        solver_failures=solver_failures,
        lemma_violations=lemma_violations,
        lemma_worst_gap=lemma_worst,
        runtime_seconds=time.perf_counter() - t0,
        config=config,
    )


def regret_vs_M_sweep(
    config: ExperimentConfig, m_values, *, threads: int = 1
) -> list[RegretReport]:
    """Re-run one single-family config over refining grid sizes.

    The ground truth is calibrated once against the densest grid of the
    sweep and then held fixed, and the replicate noise streams are
    shared across grid sizes, so differences across M reflect the grids
    alone.
    """
    m_values = [int(m) for m in m_values]
    if not m_values or any(m < 1 for m in m_values):
        raise ConfigError(f"key 'sweep.M' must list positive grid sizes, got {m_values}")
    if sorted(m_values) != m_values:
        raise ConfigError("key 'sweep.M' must be ascending")
    if len(config.families) != 1:
        raise ConfigError("an M sweep needs a single-family config")
    base = config.families[0]
    ref_cfg = replace(
        config, families=(replace(base, grid=replace(base.grid, count=max(m_values))),)
    )
    mu = build_instance(ref_cfg).truth.mu
    reports = []
    for m in m_values:
        cfg = replace(
            config,
            label=f"{config.label}-M{m}",
            families=(replace(base, grid=replace(base.grid, count=m)),),
        )
        reports.append(run_experiment(cfg, threads=threads, mu_override=mu))
    return reports


def _q_sweep_families(base: FamilySpec, q: int, members_per_family: int) -> tuple[FamilySpec, ...]:
    exponents = np.linspace(0.0, 3.0, q) if q > 1 else np.array([0.0])
    grid = replace(base.grid, count=members_per_family)
    return tuple(
        FamilySpec(p=base.p, penalty=PenaltySpec(kind="diag-power", exponent=float(g)), grid=grid)
        for g in exponents
    )


def regret_vs_q_sweep(
    config: ExperimentConfig, q_values, *, threads: int = 1
) -> list[RegretReport]:
    """Re-run a config over unions of q distinct diagonal-penalty families.

    Family m uses the penalty diag(i^exponent_m) with exponents spread
    over [0, 3] and a fresh copy of the base grid with
    ``members_per_family`` points.  The ground truth is calibrated on
    the q = 1 candidate set and held fixed across q.
    """
    q_values = [int(q) for q in q_values]
    if not q_values or any(q < 1 for q in q_values):
        raise ConfigError(f"key 'sweep.q' must list positive family counts, got {q_values}")
    base = config.families[0]
    ref_cfg = replace(config, families=_q_sweep_families(base, 1, config.members_per_family))
    mu = build_instance(ref_cfg).truth.mu
    reports = []
    for q in q_values:
        cfg = replace(
            config,
            label=f"{config.label}-q{q}",
            families=_q_sweep_families(base, q, config.members_per_family),
        )
        reports.append(run_experiment(cfg, threads=threads, mu_override=mu))
    return reports


def write_report_json(report: RegretReport, path) -> None:
    import json

    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


CSV_COLUMNS = (
    "label",
    "members",
    "families",
    "seed",
    "replicates",
    "method",
    "mean_risk",
    "std_error",
    "oracle_risk",
    "regret",
    "ci_half_width",
    "excess_q50",
    "excess_q90",
    "excess_q99",
)


def write_reports_csv(reports, path) -> None:
    """Flat CSV with one row per (config, method); deterministic bytes for a fixed seed."""
    lines = [",".join(CSV_COLUMNS)]
    for report in reports:
        for name, s in report.stats.items():
            row = [
                report.label,
                str(report.member_total),
                str(report.family_total),
                str(report.seed),
                str(report.replicates),
                name,
                repr(s.mean_risk),
                repr(s.std_error),
                repr(report.oracle_risk),
                repr(s.regret),
                repr(s.ci_half_width),
            ]
            if name == "q_agg" and report.excess_quantiles:
                row += [
                    repr(report.excess_quantiles["q50"]),
                    repr(report.excess_quantiles["q90"]),
                    repr(report.excess_quantiles["q99"]),
                ]
            else:
                row += ["", "", ""]
            lines.append(",".join(row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
