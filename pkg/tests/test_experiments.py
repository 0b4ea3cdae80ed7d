import csv
import dataclasses
import math

import numpy as np
import pytest

from deca import experiments, field, network, routing

CACHE = "/tmp/basis_cache"


@pytest.fixture(scope="module")
def smoke_records():
    cfg = experiments.make_smoke_config(cache_dir=CACHE)
    return cfg, experiments.run_scenario(cfg)


class TestScenarioConfig:
    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            experiments.ScenarioConfig(scenario_id="x", scheme="FLOOD", k_total=5)

    def test_unknown_recovery_mode(self):
        with pytest.raises(ValueError):
            experiments.ScenarioConfig(scenario_id="x", k_total=5, recovery_mode="BOTH")

    def test_missing_budget_rejected(self):
        with pytest.raises(ValueError):
            experiments.ScenarioConfig(scenario_id="x")

    def test_non_agg_needs_no_budget(self):
        cfg = experiments.ScenarioConfig(scenario_id="x", scheme=routing.NON_AGG)
        assert cfg.k_total == 0

    def test_budget_sum_checked(self):
        with pytest.raises(ValueError, match="sum"):
            experiments.ScenarioConfig(
                scenario_id="x", num_trees=2, budgets=(3, 3), k_total=5
            )

    def test_budget_count_checked(self):
        with pytest.raises(ValueError):
            experiments.ScenarioConfig(scenario_id="x", num_trees=3, budgets=(3, 3))

    def test_even_budget_split(self):
        cfg = experiments.ScenarioConfig(scenario_id="x", num_trees=4, k_total=126)
        assert cfg.resolved_budgets() == (32, 32, 31, 31)

    def test_explicit_budgets_kept(self):
        cfg = experiments.ScenarioConfig(
            scenario_id="x", num_trees=2, budgets=(9, 4), k_total=13
        )
        assert cfg.resolved_budgets() == (9, 4)

    def test_temporal_needs_rounds(self):
        with pytest.raises(ValueError):
            experiments.ScenarioConfig(
                scenario_id="x", k_total=5, temporal_joint=True, rounds=1
            )

    def test_temporal_single_tree_only(self):
        with pytest.raises(ValueError, match="single tree"):
            experiments.ScenarioConfig(
                scenario_id="x", k_total=8, temporal_joint=True, rounds=3, num_trees=2
            )

    def test_missing_field_file(self):
        with pytest.raises(ValueError, match="not found"):
            experiments.ScenarioConfig(
                scenario_id="x", k_total=5, field_source="/no/such/field.csv"
            )

    def test_json_round_trip(self, tmp_path):
        cfg = experiments.ScenarioConfig(
            scenario_id="rt", grid_dims=(40, 50), rho=0.22, num_trees=2,
            budgets=(9, 4), k_total=13, rounds=2, recovery_mode=experiments.INDEPENDENT,
        )
        path = tmp_path / "scenario.json"
        experiments.save_scenario_json(cfg, path)
        assert experiments.load_scenario_json(path) == cfg


class TestBaseFields:
    def test_single_round_peaks(self):
        cfg = experiments.ScenarioConfig(scenario_id="x", grid_dims=(20, 20), k_total=5)
        fields = experiments.base_fields(cfg)
        assert len(fields) == 1
        np.testing.assert_array_equal(
            fields[0].values, field.generate_peaks_field(20, 20).values
        )

    def test_rounds_follow_a_correlated_walk(self):
        cfg = experiments.ScenarioConfig(
            scenario_id="x", grid_dims=(20, 20), k_total=5, rounds=4,
            temporal_theta=0.97,
        )
        fields = experiments.base_fields(cfg)
        assert [f.round_index for f in fields] == [0, 1, 2, 3]
        for a, b in zip(fields, fields[1:]):
            corr = np.corrcoef(a.values.ravel(), b.values.ravel())[0, 1]
            assert corr > 0.8

    def test_deterministic(self):
        cfg = experiments.ScenarioConfig(
            scenario_id="x", field_source="smooth-random", grid_dims=(15, 15),
            k_total=5, rounds=3, base_seed=6,
        )
        a = experiments.base_fields(cfg)
        b = experiments.base_fields(cfg)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa.values, fb.values)

    def test_csv_field_source(self, tmp_path):
        grid = field.generate_peaks_field(12, 9)
        path = tmp_path / "f.csv"
        field.save_field_csv(grid, path)
        cfg = experiments.ScenarioConfig(
            scenario_id="x", field_source=str(path), grid_dims=(12, 9), k_total=5
        )
        fields = experiments.base_fields(cfg)
        np.testing.assert_array_equal(fields[0].values, grid.values)

    def test_csv_dims_checked(self, tmp_path):
        grid = field.generate_peaks_field(12, 9)
        path = tmp_path / "f.csv"
        field.save_field_csv(grid, path)
        cfg = experiments.ScenarioConfig(
            scenario_id="x", field_source=str(path), grid_dims=(9, 12), k_total=5
        )
        with pytest.raises(ValueError, match="dimensions"):
            experiments.base_fields(cfg)


class TestRunScenario:
    def test_smoke_grid(self, smoke_records):
        cfg, records = smoke_records
        assert len(records) == cfg.num_deployments * cfg.num_codings == 9
        for rec in records:
            assert rec.error is None
            assert 0.0 <= rec.eps_vec < 1.5
            assert 0.0 <= rec.eps_mat < 1.5
            assert rec.energy <= rec.energy_baseline
            assert 0.0 < rec.mu <= 1.0 + 1e-9
            assert rec.k_total == cfg.k_total

    def test_deterministic_modulo_wall_time(self, smoke_records):
        cfg, records = smoke_records
        again = experiments.run_scenario(cfg)
        for a, b in zip(records, again):
            da, db = dataclasses.asdict(a), dataclasses.asdict(b)
            da.pop("wall_ms")
            db.pop("wall_ms")
            assert da == db

    def test_disconnected_deployment_becomes_error_records(self):
        cfg = experiments.ScenarioConfig(
            scenario_id="dc", grid_dims=(30, 30), rho=0.06, comm_radius=8.0,
            k_total=5, num_deployments=1, num_codings=2, base_seed=3,
            cache_dir=CACHE,
        )
        records = experiments.run_scenario(cfg)
        assert len(records) == 2
        for rec in records:
            assert rec.error is not None
            assert math.isnan(rec.eps_vec)
            assert not rec.cs_converged

    def test_temporal_joint_round_trip(self):
        cfg = experiments.ScenarioConfig(
            scenario_id="tj", grid_dims=(10, 10), rho=0.5, comm_radius=2.5,
            field_source="smooth-random", correlation_length=3.0,
            rounds=3, temporal_joint=True, k_total=10,
            num_deployments=1, num_codings=1, cache_dir=CACHE,
        )
        records = experiments.run_scenario(cfg)
        assert len(records) == 1
        rec = records[0]
        assert rec.error is None
        assert len(rec.eps_vec_rounds) == 3
        assert all(np.isfinite(e) for e in rec.eps_vec_rounds)
        assert len(rec.eps_mat_rounds) == 3

    def test_unit_budget_baseline_consistency(self):
        dep = network.deploy((15, 15), 0.5, seed=1)
        graph = network.build_graph(dep, comm_radius=3.0)
        base = dict(scenario_id="x", grid_dims=(15, 15), rho=0.5, k_total=1)
        plain = experiments.build_forest(
            experiments.ScenarioConfig(scheme=routing.PLAIN_CS, **base),
            graph, dep.sink_id,
        )
        hybrid = experiments.build_forest(
            experiments.ScenarioConfig(scheme=routing.HYBRID_CS, **base),
            graph, dep.sink_id,
        )
        e_plain = routing.account_traffic(plain, graph).total_energy
        e_hybrid = routing.account_traffic(hybrid, graph).total_energy
        assert e_plain == pytest.approx(e_hybrid, rel=1e-12)


class TestResultsCsv:
    def test_empty_records_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        experiments.emit_results_csv([], path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows == [experiments.RESULT_COLUMNS]

    def test_trial_rows_plus_aggregates(self, smoke_records, tmp_path):
        _, records = smoke_records
        path = tmp_path / "results.csv"
        experiments.emit_results_csv(records, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == experiments.RESULT_COLUMNS
        body = rows[1:]
        trial_rows = [r for r in body if r[1] not in ("mean", "std")]
        agg_rows = [r for r in body if r[1] in ("mean", "std")]
        assert len(trial_rows) == len(records)
        # one configuration cell -> exactly one mean and one std row
        assert len(agg_rows) == 2
        mean_row = next(r for r in agg_rows if r[1] == "mean")
        col = experiments.RESULT_COLUMNS.index("eps_vec")
        expected = np.mean([rec.eps_vec for rec in records])
        assert float(mean_row[col]) == pytest.approx(expected, rel=1e-12)

    def test_re_emission_byte_identical(self, smoke_records, tmp_path):
        _, records = smoke_records
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        experiments.emit_results_csv(records, p1)
        experiments.emit_results_csv(records, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestBudgetSweep:
    def test_mean_vector_error_non_increasing_in_budget(self):
        """Sweep the measurement budget from 2% to 14% of n on the large grid.

        Individual trials are noisy, so each cell averages six paired trials
        and a one-cell regression of at most 0.005 is tolerated.
        """
        means = []
        for k in (36, 72, 126, 180, 252):
            cfg = experiments.ScenarioConfig(
                scenario_id=f"sweep-{k}", grid_dims=(100, 100), rho=0.18,
                comm_radius=5.0, k_total=k, num_deployments=2, num_codings=3,
                base_seed=0, cache_dir=CACHE,
            )
            records = experiments.run_scenario(cfg)
            assert all(rec.error is None for rec in records)
            means.append(np.mean([rec.eps_vec for rec in records]))
        violations = [b - a for a, b in zip(means, means[1:]) if b - a > 0.005]
        assert violations == [], f"means={means}"
