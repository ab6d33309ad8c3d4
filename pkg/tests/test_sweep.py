import numpy as np
import pytest

from smoothcal import InputError, SweepConfig, aggregate, assert_trends, run_sweep
from smoothcal.metrics import MetricReport
from smoothcal.sweep import (AggRow, SweepResult, SweepRow, agg_from_csv,
                             agg_to_csv, parse_config, preset_configs,
                             replace_workers, rows_from_csv, rows_to_csv,
                             validate_report)


def tiny_config(**overrides):
    base = dict(axis="sample_size", n_grid=(25, 40), kernels=("laplace",),
                models=("krr",), seeds=2, master_seed=0, data="toy1d",
                test_size=60, include_baseline=True)
    base.update(overrides)
    return SweepConfig(**base)


def test_single_cell_produces_two_rows():
    config = tiny_config(n_grid=(30,), seeds=1, include_baseline=None)
    result = run_sweep(config)
    assert len(result.rows) == 2
    assert {r.split for r in result.rows} == {"train", "test"}
    assert all(r.status == "ok" for r in result.rows)


def test_sweep_rows_csv_deterministic():
    config = tiny_config()
    first = rows_to_csv(run_sweep(config).rows)
    second = rows_to_csv(run_sweep(config).rows)
    assert first == second


def test_sweep_concurrency_invariant():
    config = tiny_config()
    sequential = rows_to_csv(run_sweep(config).rows)
    parallel = rows_to_csv(run_sweep(replace_workers(config, 4)).rows)
    assert sequential == parallel


def test_cell_isolation_under_grid_deletion():
    full = run_sweep(tiny_config())
    partial = run_sweep(tiny_config(n_grid=(40,)))
    full_40 = [r for r in full.rows if r.n == 40]
    assert rows_to_csv(full_40) == rows_to_csv(partial.rows)


def test_lambda_axis_shares_data_across_grid():
    config = tiny_config(axis="lambda", lambda_grid=(1e-3, 1e-1, 1e1, 1e2),
                         lambda_axis_n=30, include_baseline=True)
    result = run_sweep(config)
    # the constant baseline depends only on the rep, so its report is
    # identical at every lambda grid point
    base = [r for r in result.rows if r.model == "constant" and r.seed == 0
            and r.split == "test"]
    assert len(base) == len(config.lambda_grid)
    assert len({r.report.smce for r in base}) == 1


def test_lambda_scale_per_n():
    config = tiny_config(axis="lambda", lambda_grid=(1e-2, 1.0, 10.0, 100.0),
                         lambda_axis_n=30, include_baseline=False,
                         lambda_scale="per_n")
    result = run_sweep(config)
    for row in result.rows:
        assert row.fit_lambda == pytest.approx(row.lam / 30)


def test_row_reports_validate_internal_ordering():
    config = tiny_config(models=("klr",), n_grid=(30, 45))
    result = run_sweep(config)
    for row in result.rows:
        if row.status != "ok" or row.model != "klr":
            continue
        assert row.report.dual_smce is not None
        assert row.report.smce <= row.report.dual_smce + 1e-9
        assert row.report.smce >= 0 and row.report.mmce >= 0


def test_error_cells_recorded_not_raised(tmp_path):
    # a score file too small for the requested training sizes fails per cell
    path = tmp_path / "scores.csv"
    rows = ["score,label"] + [f"{v:.3f},{i % 2}" for i, v in
                              enumerate(np.linspace(-2, 2, 120))]
    path.write_text("\n".join(rows) + "\n")
    config = tiny_config(data=f"scores:{path}", n_grid=(30, 70), seeds=1,
                         test_size=60, include_baseline=False)
    result = run_sweep(config)
    assert any(r.status == "error" for r in result.rows)
    assert any(r.status == "ok" for r in result.rows)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def make_row(seed, smce, n=10, split="test"):
    report = MetricReport(smce=smce, binned_ece=0.0, bin_count=1, mmce=0.0,
                          accuracy=1.0, n=n)
    return SweepRow(seed, n, 0.1, 0.1, "laplace", "krr", split, "ok", report)


def test_aggregate_mean_and_unbiased_std():
    rows = [make_row(0, 1.0), make_row(1, 3.0)]
    aggs = aggregate(rows)
    assert len(aggs) == 1
    assert aggs[0].means["smce"] == 2.0
    assert aggs[0].stds["smce"] == pytest.approx(np.sqrt(2.0), abs=1e-12)
    assert not aggs[0].single_seed


def test_aggregate_single_seed_flag():
    aggs = aggregate([make_row(0, 0.5)])
    assert aggs[0].stds["smce"] == 0.0
    assert aggs[0].single_seed


def test_aggregates_recomputable_from_serialized_rows():
    result = run_sweep(tiny_config())
    text = rows_to_csv(result.rows)
    recomputed = aggregate(rows_from_csv(text))
    assert agg_to_csv(recomputed) == agg_to_csv(result.aggregates)


def test_agg_csv_round_trip():
    result = run_sweep(tiny_config(seeds=1))
    text = agg_to_csv(result.aggregates)
    assert agg_to_csv(agg_from_csv(text)) == text


def test_row_ingestion_rejects_inconsistent_reports():
    report = MetricReport(smce=0.5, binned_ece=0.1, bin_count=2, mmce=0.1,
                          accuracy=0.9, n=10, dual_smce=0.2)
    with pytest.raises(InputError, match="dual"):
        validate_report(report)
    bad_sandwich = MetricReport(smce=0.1, binned_ece=0.1, bin_count=2,
                                mmce=0.1, accuracy=0.9, n=10, pgap_sq=0.9)
    with pytest.raises(InputError, match="sandwich"):
        validate_report(bad_sandwich)
    row = SweepRow(0, 10, 0.1, 0.1, "laplace", "krr", "test", "ok", bad_sandwich)
    with pytest.raises(InputError):
        rows_from_csv(rows_to_csv([row]))


# ---------------------------------------------------------------------------
# trend checks
# ---------------------------------------------------------------------------

def synthetic_result(axis, means, model="krr", lam_at=None):
    """Build a SweepResult whose aggregates carry the given test-smce means."""
    if axis == "sample_size":
        xs = [100, 200, 400, 800, 1600][: len(means)]
        config = SweepConfig(axis=axis, n_grid=tuple(xs), kernels=("laplace",),
                             models=(model,), seeds=1, include_baseline=False)
    else:
        xs = lam_at or [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0][: len(means)]
        config = SweepConfig(axis=axis, lambda_grid=tuple(xs),
                             kernels=("laplace",), models=(model,), seeds=1,
                             lambda_axis_n=100, include_baseline=False)
    aggs = []
    for x, m in zip(xs, means):
        n = x if axis == "sample_size" else 100
        lam = None if axis == "sample_size" else x
        metric_means = {"smce": m, "dual_smce": None, "binned_ece": 0.0,
                        "mmce": 0.0, "accuracy": 1.0}
        zeros = {k: 0.0 for k in metric_means}
        aggs.append(AggRow(n, lam if axis == "lambda" else 0.1, "laplace",
                           model, "test", 1, True, metric_means, zeros))
    return SweepResult(config, [], aggs)


def test_trends_monotone_decreasing_passes():
    result = synthetic_result("sample_size", [0.5, 0.4, 0.3, 0.2, 0.1])
    report = assert_trends(result)
    check = report.checks[0]
    assert check.name == "spearman_n"
    assert check.statistic == pytest.approx(-1.0)
    assert check.passed


def test_trends_v_shape_interior_passes():
    result = synthetic_result("lambda", [0.5, 0.2, 0.05, 0.2, 0.4, 0.6])
    report = assert_trends(result)
    assert report.checks[0].name == "lambda_interior_argmin"
    assert report.checks[0].passed


def test_trends_endpoint_argmin_fails():
    result = synthetic_result("lambda", [0.5, 0.4, 0.3, 0.2, 0.1, 0.05])
    report = assert_trends(result)
    assert not report.checks[0].passed


def test_trends_need_four_grid_points():
    result = synthetic_result("sample_size", [0.5, 0.4])
    with pytest.raises(InputError):
        assert_trends(result)


def test_trend_report_serializes():
    result = synthetic_result("sample_size", [0.5, 0.4, 0.3, 0.2, 0.1])
    report = assert_trends(result)
    assert "spearman_n" in report.to_text()
    assert report.to_csv().startswith("check,series,")


# ---------------------------------------------------------------------------
# config parsing and presets
# ---------------------------------------------------------------------------

def test_parse_config_round_trip():
    text = """
    # comment
    axis=lambda
    lambda_grid=0.0001,0.01,1,100
    lambda_axis_n=500
    lambda_scale=absolute
    kernels=laplace
    models=klr
    seeds=3
    master_seed=7
    data=toy2d
    test_size=100
    """
    config = parse_config(text)
    assert config.axis == "lambda"
    assert config.lambda_grid == (1e-4, 1e-2, 1.0, 100.0)
    assert config.lambda_scale == "absolute"
    assert config.seeds == 3 and config.master_seed == 7


def test_parse_config_unknown_key_named():
    with pytest.raises(InputError, match="bogus"):
        parse_config("bogus=1\n")


def test_config_validation():
    with pytest.raises(InputError):
        SweepConfig(axis="diagonal")
    with pytest.raises(InputError):
        SweepConfig(models=("svm",))
    with pytest.raises(InputError):
        SweepConfig(n_grid=(100, 50))


def test_presets_exist():
    for name in ("fig1", "fig2"):
        jobs = preset_configs(name)
        assert len(jobs) == 2
        for _, config in jobs:
            assert isinstance(config, SweepConfig)
    with pytest.raises(InputError):
        preset_configs("fig9")
