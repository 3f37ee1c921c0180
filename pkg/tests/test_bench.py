"""Monte Carlo harness: configs, determinism, consistency, sweeps."""

import json

import numpy as np
import pytest

from qagg.bench import (
    ConfigError,
    ExperimentConfig,
    FamilySpec,
    GridSpec,
    MeanSpec,
    ScenarioSpec,
    build_instance,
    regret_vs_M_sweep,
    regret_vs_q_sweep,
    run_experiment,
    write_report_json,
    write_reports_csv,
)
from qagg.smoother import member_risks


def small_config(**overrides):
    defaults = dict(
        scenario=ScenarioSpec(
            n=24, sigma=1.0, mean=MeanSpec(shape="spectral-decay", rate=1.0, scale=3.0)
        ),
        families=(FamilySpec(p=10, grid=GridSpec(count=6)),),
        replicates=60,
        seed=42,
        label="unit",
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


class TestConfigParsing:
    def test_round_trip(self):
        cfg = small_config(
            sweep_m=(2, 4), sweep_q=(1, 2), members_per_family=4, lemma_check=True
        )
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_unknown_key_named(self):
        data = small_config().to_dict()
        data["scenario"]["typo"] = 1
        with pytest.raises(ConfigError, match="scenario.typo"):
            ExperimentConfig.from_dict(data)

    def test_missing_replicates_named(self):
        data = small_config().to_dict()
        del data["replicates"]
        with pytest.raises(ConfigError, match="replicates"):
            ExperimentConfig.from_dict(data)

    def test_unknown_method_rejected(self):
        with pytest.raises(ConfigError, match="methods"):
            small_config(methods=("q_agg", "mystery"))

    def test_mismatched_family_dims_rejected(self):
        with pytest.raises(ConfigError, match="families"):
            small_config(
                families=(FamilySpec(p=10), FamilySpec(p=12)),
            )

    def test_lemma_check_needs_q_agg(self):
        with pytest.raises(ConfigError, match="lemma_check"):
            small_config(methods=("cp_select",), lemma_check=True)

    def test_target_risk_needs_spectral_mean(self):
        with pytest.raises(ConfigError, match="target_risk"):
            MeanSpec(shape="zero", target_risk=5.0)

    def test_explicit_mean_length_checked(self):
        cfg = small_config(
            scenario=ScenarioSpec(n=24, sigma=1.0, mean=MeanSpec(shape="explicit", values=(1.0,)))
        )
        with pytest.raises(ConfigError, match="values"):
            build_instance(cfg)


class TestInstance:
    def test_target_risk_calibration(self):
        cfg = small_config(
            scenario=ScenarioSpec(
                n=40, sigma=1.2, mean=MeanSpec(shape="spectral-decay", rate=1.0, target_risk=10.0)
            ),
            families=(FamilySpec(p=20, grid=GridSpec(count=12)),),
        )
        instance = build_instance(cfg)
        assert abs(instance.oracle_risk - 10.0) < 1e-6

    def test_unreachable_target_risk_rejected(self):
        cfg = small_config(
            scenario=ScenarioSpec(
                n=24,
                sigma=1.0,
                mean=MeanSpec(shape="spectral-decay", rate=1.0, target_risk=1000.0),
            ),
            families=(
                FamilySpec(p=10, grid=GridSpec(min=1e-12, max=1e3, count=6)),
            ),
        )
        with pytest.raises(ConfigError, match="target_risk"):
            build_instance(cfg)

    def test_oracle_matches_member_risks(self):
        instance = build_instance(small_config())
        risks = member_risks(instance.candidates, instance.truth)
        assert instance.oracle_member == int(np.argmin(risks))
        assert instance.oracle_risk == float(risks.min())

    def test_single_spike_mean(self):
        cfg = small_config(
            scenario=ScenarioSpec(
                n=24, sigma=1.0, mean=MeanSpec(shape="single-spike", coordinate=2, scale=4.0)
            )
        )
        instance = build_instance(cfg)
        fam = instance.candidates
        coords = fam.basis.T @ instance.truth.mu
        assert abs(coords[2] - 4.0) < 1e-10
        assert np.abs(np.delete(coords, 2)).max() < 1e-10


class TestRunExperiment:
    def test_single_member_zero_mean_has_zero_regret(self):
        cfg = small_config(
            scenario=ScenarioSpec(n=16, sigma=1.0, mean=MeanSpec(shape="zero")),
            families=(FamilySpec(p=6, grid=GridSpec(count=1)),),
            replicates=80,
        )
        report = run_experiment(cfg)
        for name, s in report.stats.items():
            assert abs(s.regret) <= max(3 * s.ci_half_width, 1e-9), name
        assert report.excess_quantiles == {"q50": 0.0, "q90": 0.0, "q99": 0.0}
        assert report.solver_failures == 0

    def test_identical_families_have_zero_excess(self):
        # two single-member families with the same penalty and grid: all
        # members coincide, so every method is the oracle
        fam = FamilySpec(p=6, grid=GridSpec(count=1))
        cfg = small_config(
            scenario=ScenarioSpec(n=16, sigma=1.0, mean=MeanSpec(shape="zero")),
            families=(fam, fam),
            replicates=50,
        )
        report = run_experiment(cfg)
        assert report.family_total == 2
        assert report.excess_quantiles["q99"] <= 1e-12

    def test_seed_determinism(self):
        cfg = small_config(replicates=40)
        a = run_experiment(cfg).to_dict()
        b = run_experiment(cfg).to_dict()
        a.pop("runtime_seconds")
        b.pop("runtime_seconds")
        assert a == b

    def test_different_seeds_differ(self):
        a = run_experiment(small_config(seed=1, replicates=30))
        b = run_experiment(small_config(seed=2, replicates=30))
        assert a.stats["q_agg"].mean_risk != b.stats["q_agg"].mean_risk

    def test_parallel_matches_serial_bitwise(self):
        cfg = small_config(replicates=30)
        serial = run_experiment(cfg, threads=1).to_dict()
        parallel = run_experiment(cfg, threads=2).to_dict()
        serial.pop("runtime_seconds")
        parallel.pop("runtime_seconds")
        assert serial == parallel

    def test_oracle_estimate_consistent_with_exact_risk(self):
        cfg = small_config(replicates=400, methods=("oracle",))
        report = run_experiment(cfg)
        s = report.stats["oracle"]
        assert abs(s.mean_risk - report.oracle_risk) <= 3 * s.std_error

    def test_lemma_check_passes(self):
        cfg = small_config(replicates=60, lemma_check=True)
        report = run_experiment(cfg)
        assert report.lemma_violations == 0

    def test_methods_subset_respected(self):
        cfg = small_config(methods=("cp_select", "gcv"), replicates=20)
        report = run_experiment(cfg)
        assert set(report.stats) == {"cp_select", "gcv"}
        assert report.excess_quantiles == {}


class TestSweeps:
    def test_nested_m_sweep_has_monotone_oracle_risk(self):
        cfg = small_config(
            scenario=ScenarioSpec(
                n=30, sigma=1.0, mean=MeanSpec(shape="spectral-decay", rate=1.0, target_risk=6.0)
            ),
            families=(FamilySpec(p=12, grid=GridSpec(count=10)),),
            replicates=10,
        )
        reports = regret_vs_M_sweep(cfg, [2, 11, 101])
        risks = [r.oracle_risk for r in reports]
        assert risks[0] >= risks[1] - 1e-9
        assert risks[1] >= risks[2] - 1e-9
        assert [r.member_total for r in reports] == [2, 11, 101]
        assert [r.label for r in reports] == ["unit-M2", "unit-M11", "unit-M101"]

    def test_m_sweep_requires_sorted_values(self):
        with pytest.raises(ConfigError, match="ascending"):
            regret_vs_M_sweep(small_config(), [10, 2])

    def test_q_sweep_counts(self):
        cfg = small_config(replicates=15, members_per_family=3)
        reports = regret_vs_q_sweep(cfg, [1, 2, 4])
        assert [r.family_total for r in reports] == [1, 2, 4]
        assert [r.member_total for r in reports] == [3, 6, 12]

    def test_q_sweep_duplicate_family_matches_single(self):
        # q = 1 and q = 2 with identical penalties: regret must agree within CI
        cfg = small_config(replicates=60, members_per_family=4)
        base = cfg.families[0]
        fam_a = FamilySpec(p=base.p, grid=GridSpec(count=4))
        r1 = run_experiment(small_config(replicates=60, families=(fam_a,), label="one"))
        # identical second family (same penalty, same grid)
        r2 = run_experiment(
            small_config(replicates=60, families=(fam_a, fam_a), label="two")
        )
        assert abs(r1.oracle_risk - r2.oracle_risk) < 1e-9
        gap = abs(r1.stats["q_agg"].regret - r2.stats["q_agg"].regret)
        assert gap <= r1.stats["q_agg"].ci_half_width + r2.stats["q_agg"].ci_half_width + 1e-6


class TestReports:
    def test_json_round_trip(self, tmp_path):
        report = run_experiment(small_config(replicates=20))
        path = tmp_path / "report.json"
        write_report_json(report, path)
        loaded = json.loads(path.read_text())
        assert loaded["oracle_risk"] == report.oracle_risk
        assert loaded["methods"]["q_agg"]["regret"] == report.stats["q_agg"].regret
        again = ExperimentConfig.from_dict(loaded["config"])
        assert again == report.config

    def test_csv_layout(self, tmp_path):
        report = run_experiment(small_config(replicates=20))
        path = tmp_path / "reports.csv"
        write_reports_csv([report], path)
        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        assert header[:6] == ["label", "members", "families", "seed", "replicates", "method"]
        assert len(lines) == 1 + len(report.stats)
        row = dict(zip(header, lines[1].split(",")))
        assert row["method"] == "q_agg"
        assert float(row["regret"]) == report.stats["q_agg"].regret
