"""Seeded sweeps over sample size and regularization strength, with
aggregation and trend checks.

Every cell's randomness flows from a stable hash of (master seed, purpose,
repetition, ...), so results are independent of execution order and worker
count, individual cells are reproducible in isolation, and re-running a
config yields byte-identical CSV output. On the lambda axis the training and
test draws depend only on the repetition, matching the fix-the-data,
vary-the-regularizer protocol.

Lambda units on the lambda axis are controlled by `lambda_scale`:
"absolute" passes grid values straight into the per-sample-mean objective,
while "per_n" (the default) divides by the training size first, i.e. the grid
enumerates penalties on the unnormalized sum of losses. The per_n framing is
what makes the classic U-shaped test-error curve visible inside the default
1e-4..1e2 grid at realistic n; under absolute units the grid's right half
collapses the model onto the base-rate constant.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from .data import (Affine, LabeledDataset, Temperature,
                   gen_miscalibrated_scores, gen_toy, read_scores, rng_for,
                   stratified_subsample)
from .errors import InputError
from .kernels import KernelSpec, median_heuristic
from .metrics import MetricReport, PredictionSet, format_float, metric_report
from .models import (OptimizerSettings, fit_klr, fit_krr, prediction_set)

SAMPLE_SIZE = "sample_size"
LAMBDA = "lambda"

KRR = "krr"
KLR = "klr"
CONSTANT = "constant"

# the two circulating exponent pairings for the ridge schedule lam = n^-p
DEFAULT_EXPONENTS = {"gaussian": 0.5, "laplace": 1.0 / 3.0}
SWAPPED_EXPONENTS = {"gaussian": 1.0 / 3.0, "laplace": 0.5}


def log_grid(lo: float, hi: float, count: int) -> tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(np.log10(lo), np.log10(hi), count))


def log_int_grid(lo: int, hi: int, count: int) -> tuple[int, ...]:
    vals = np.unique(np.round(np.logspace(np.log10(lo), np.log10(hi), count))
                     .astype(int))
    return tuple(int(v) for v in vals)


@dataclass(frozen=True)
class SweepConfig:
    axis: str = SAMPLE_SIZE
    n_grid: tuple[int, ...] = field(default_factory=lambda: log_int_grid(100, 10000, 10))
    lambda_grid: tuple[float, ...] = field(default_factory=lambda: log_grid(1e-4, 1e2, 7))
    lambda_axis_n: int = 10000
    lambda_scale: str = "per_n"            # "per_n" | "absolute"
    schedule: str = "default"              # "default" | "swapped" | "fixed:<v>" | "power:<p>"
    klr_lambda: float = 0.01
    kernels: tuple[str, ...] = ("gaussian", "laplace")
    models: tuple[str, ...] = (KRR, KLR)
    seeds: int = 10
    master_seed: int = 0
    data: str = "toy1d"                    # toy1d | toy2d | scores:<path> | miscal-temperature:<t> | miscal-affine:<a>:<c>
    test_size: int = 2000
    # None = auto: emit constant base-rate rows exactly where the trend
    # report needs them (lambda axis with a logistic series)
    include_baseline: bool | None = None
    workers: int = 1
    klr_opts: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        if self.axis not in (SAMPLE_SIZE, LAMBDA):
            raise InputError(f"unknown axis {self.axis!r}")
        if self.lambda_scale not in ("per_n", "absolute"):
            raise InputError(f"unknown lambda_scale {self.lambda_scale!r}")
        if self.axis == SAMPLE_SIZE and (not self.n_grid or list(self.n_grid) != sorted(self.n_grid)):
            raise InputError("n_grid must be nonempty and sorted")
        if self.axis == LAMBDA and (not self.lambda_grid or list(self.lambda_grid) != sorted(self.lambda_grid)):
            raise InputError("lambda_grid must be nonempty and sorted")
        if self.seeds < 1:
            raise InputError("seeds must be >= 1")
        if self.test_size < 1:
            raise InputError("test_size must be >= 1")
        for m in self.models:
            if m not in (KRR, KLR):
                raise InputError(f"unknown model {m!r}")
        bad = [k for k in self.kernels if k not in ("gaussian", "laplace")]
        if bad:
            raise InputError(f"unknown kernels {bad}")


@dataclass
class SweepRow:
    seed: int
    n: int
    lam: float | None          # axis coordinate (grid value); None for baseline rows
    fit_lambda: float | None
    kernel: str
    model: str
    split: str                 # "train" | "test"
    status: str                # "ok" | "error"
    report: MetricReport | None
    error: str = ""

    def sort_key(self):
        return (self.n, -1.0 if self.lam is None else self.lam, self.kernel,
                self.model, self.seed, 0 if self.split == "train" else 1)


@dataclass
class AggRow:
    n: int
    lam: float | None
    kernel: str
    model: str
    split: str
    seeds: int
    single_seed: bool
    means: dict
    stds: dict


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list[SweepRow]
    aggregates: list[AggRow]


# ---------------------------------------------------------------------------
# data resolution
# ---------------------------------------------------------------------------

def _parse_data_source(data: str):
    if data in ("toy1d", "toy2d"):
        return ("toy", 1 if data == "toy1d" else 2)
    if data.startswith("scores:"):
        return ("scores", data.split(":", 1)[1])
    if data.startswith("miscal-temperature:"):
        return ("miscal", Temperature(float(data.split(":", 1)[1])))
    if data.startswith("miscal-affine:"):
        _, a, c = data.split(":")
        return ("miscal", Affine(float(a), float(c)))
    raise InputError(f"unknown data source {data!r}")


class _DataProvider:
    """Resolves per-cell train/test datasets from derived seeds."""

    def __init__(self, config: SweepConfig):
        self.config = config
        self.kind, self.detail = _parse_data_source(config.data)
        if self.kind == "scores":
            # undersized pools surface per cell as recorded failures
            self.pool = read_scores(self.detail)

    def train(self, rep: int, n: int) -> LabeledDataset:
        seed = rng_for(self.config.master_seed, "train", rep, n)
        if self.kind == "toy":
            return gen_toy(n, seed, dim=self.detail)
        if self.kind == "miscal":
            return gen_miscalibrated_scores(n, self.detail, seed).as_dataset()
        pool = self._train_pool(rep)
        return stratified_subsample(pool, n, seed)

    def test(self, rep: int) -> LabeledDataset:
        seed = rng_for(self.config.master_seed, "test", rep)
        if self.kind == "toy":
            return gen_toy(self.config.test_size, seed, dim=self.detail)
        if self.kind == "miscal":
            return gen_miscalibrated_scores(self.config.test_size, self.detail,
                                            seed).as_dataset()
        perm = rng_for(self.config.master_seed, "split", rep).permutation(self.pool.n)
        take = perm[: self.config.test_size]
        return LabeledDataset(self.pool.scores[take][:, None],
                              self.pool.labels[take], "score-file")

    def _train_pool(self, rep: int) -> LabeledDataset:
        perm = rng_for(self.config.master_seed, "split", rep).permutation(self.pool.n)
        keep = perm[self.config.test_size:]
        return LabeledDataset(self.pool.scores[keep][:, None],
                              self.pool.labels[keep], "score-file")


# ---------------------------------------------------------------------------
# cell execution
# ---------------------------------------------------------------------------

def _resolve_lambda(config: SweepConfig, model: str, kernel: str, n: int,
                    grid_value: float | None):
    if config.axis == LAMBDA:
        assert grid_value is not None
        fit = grid_value / n if config.lambda_scale == "per_n" else grid_value
        return grid_value, fit
    if model == KLR:
        return config.klr_lambda, config.klr_lambda
    sched = config.schedule
    if sched == "default":
        lam = float(n) ** (-DEFAULT_EXPONENTS[kernel])
    elif sched == "swapped":
        lam = float(n) ** (-SWAPPED_EXPONENTS[kernel])
    elif sched.startswith("fixed:"):
        lam = float(sched.split(":", 1)[1])
    elif sched.startswith("power:"):
        lam = float(n) ** (-float(sched.split(":", 1)[1]))
    else:
        raise InputError(f"unknown schedule {sched!r}")
    return lam, lam


def _evaluate_model(config, model, kernel, train, test, fit_lambda):
    sigma, _ = median_heuristic(train.X)
    spec = KernelSpec(kernel, sigma)
    if model == KRR:
        fitted, _ = fit_krr(train.X, train.y, spec, fit_lambda)
    else:
        fitted, _ = fit_klr(train.X, train.y, spec, fit_lambda, config.klr_opts)
    out = {}
    for split, ds in (("train", train), ("test", test)):
        preds = prediction_set(fitted, ds.X, ds.y)
        out[split] = metric_report(preds)
    return out


def _baseline_reports(train, test):
    base = float(np.mean(train.y))
    out = {}
    for split, ds in (("train", train), ("test", test)):
        preds = PredictionSet.probabilities(np.full(ds.n, base), ds.y)
        out[split] = metric_report(preds)
    return out


def _wants_baseline(config: SweepConfig) -> bool:
    if config.include_baseline is not None:
        return config.include_baseline
    return config.axis == LAMBDA and KLR in config.models


def _cells(config: SweepConfig):
    points = (config.n_grid if config.axis == SAMPLE_SIZE
              else config.lambda_grid)
    baseline = _wants_baseline(config)
    for point in points:
        for rep in range(config.seeds):
            for kernel in config.kernels:
                for model in config.models:
                    yield point, rep, kernel, model
            if baseline:
                yield point, rep, "none", CONSTANT


def run_sweep(config: SweepConfig) -> SweepResult:
    """Execute every cell, returning canonical-order rows plus aggregates.

    Cell failures become status="error" rows and do not stop the sweep.
    """
    provider = _DataProvider(config)
    cells = list(_cells(config))

    def run_cell(cell):
        point, rep, kernel, model = cell
        n = config.lambda_axis_n if config.axis == LAMBDA else int(point)
        grid_lam = float(point) if config.axis == LAMBDA else None
        rows = []
        try:
            train = provider.train(rep, n)
            test = provider.test(rep)
            if model == CONSTANT:
                lam = fit_lam = None
                reports = _baseline_reports(train, test)
            else:
                lam, fit_lam = _resolve_lambda(config, model, kernel, n, grid_lam)
                reports = _evaluate_model(config, model, kernel, train, test, fit_lam)
            for split in ("train", "test"):
                rows.append(SweepRow(rep, n, lam, fit_lam, kernel, model, split,
                                     "ok", reports[split]))
        except Exception as exc:  # cell isolation: record and continue
            lam = None if model == CONSTANT else _safe_lambda(config, model,
                                                              kernel, n, grid_lam)
            for split in ("train", "test"):
                rows.append(SweepRow(rep, n, lam, lam, kernel, model, split,
                                     "error", None, f"{type(exc).__name__}: {exc}"))
        return rows

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(run_cell, cells))
    else:
        chunks = [run_cell(c) for c in cells]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=SweepRow.sort_key)
    return SweepResult(config, rows, aggregate(rows))


def _safe_lambda(config, model, kernel, n, grid_lam):
    try:
        return _resolve_lambda(config, model, kernel, n, grid_lam)[0]
    except Exception:
        return grid_lam


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

AGG_METRICS = ("smce", "dual_smce", "binned_ece", "mmce", "accuracy")


def aggregate(rows: list[SweepRow]) -> list[AggRow]:
    """Per-cell mean and unbiased standard deviation over seeds.

    Single-seed cells report std 0 and are flagged. Error rows are excluded.
    """
    groups: dict = {}
    for row in rows:
        if row.status != "ok":
            continue
        key = (row.n, row.lam, row.kernel, row.model, row.split)
        groups.setdefault(key, []).append(row.report)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], -1.0 if k[1] is None else k[1],
                                             k[2], k[3], k[4])):
        reports = groups[key]
        means, stds = {}, {}
        for metric in AGG_METRICS:
            vals = [getattr(r, metric) for r in reports]
            if any(v is None for v in vals):
                means[metric] = None
                stds[metric] = None
                continue
            arr = np.asarray(vals, dtype=float)
            means[metric] = float(arr.mean())
            stds[metric] = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out.append(AggRow(key[0], key[1], key[2], key[3], key[4],
                          len(reports), len(reports) == 1, means, stds))
    return out


# ---------------------------------------------------------------------------
# trend checks
# ---------------------------------------------------------------------------

@dataclass
class TrendCheck:
    name: str
    series: str
    statistic: float
    threshold: float
    passed: bool


@dataclass
class TrendReport:
    axis: str
    checks: list[TrendCheck]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_text(self) -> str:
        lines = [f"trend report (axis={self.axis})"]
        for c in self.checks:
            verdict = "pass" if c.passed else "FAIL"
            lines.append(f"  [{verdict}] {c.name} {c.series}: "
                         f"statistic={c.statistic:.6g} threshold={c.threshold:g}")
        if not self.checks:
            lines.append("  (no checks: empty or baseline-only result)")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["check,series,statistic,threshold,passed"]
        for c in self.checks:
            lines.append(f"{c.name},{c.series},{format_float(c.statistic)},"
                         f"{format_float(c.threshold)},{int(c.passed)}")
        return "\n".join(lines) + "\n"


def _series_means(result: SweepResult, kernel: str, model: str, split: str):
    """Sorted (axis_value, seed-mean smce) pairs for one series. Baseline
    rows have no lambda coordinate; they sort first."""
    pairs = []
    for agg in result.aggregates:
        if (agg.kernel, agg.model, agg.split) != (kernel, model, split):
            continue
        x = agg.n if result.config.axis == SAMPLE_SIZE else agg.lam
        pairs.append((x, agg.means["smce"]))
    pairs.sort(key=lambda p: -1.0 if p[0] is None else p[0])
    return [p[0] for p in pairs], [p[1] for p in pairs]


def assert_trends(result: SweepResult, spearman_threshold: float = -0.6,
                  collapse_tolerance: float = 0.05) -> TrendReport:
    """Check the qualitative trends of a finished sweep.

    Sample-size axis: Spearman rank correlation between n and the seed-mean
    test smooth calibration error must be <= -0.6 per (kernel, model) series.
    Lambda axis: the argmin of the seed-mean test smce must be strictly
    interior to the grid. When a logistic series contains the grid value 1e2,
    its test smce must additionally sit within `collapse_tolerance` of the
    constant base-rate predictor's.
    """
    config = result.config
    points = config.n_grid if config.axis == SAMPLE_SIZE else config.lambda_grid
    if len(points) < 4:
        raise InputError(f"trend checks need at least 4 grid points, got {len(points)}")
    checks: list[TrendCheck] = []
    for kernel in config.kernels:
        for model in config.models:
            xs, means = _series_means(result, kernel, model, "test")
            if len(xs) < 4:
                continue
            series = f"{kernel}/{model}"
            if config.axis == SAMPLE_SIZE:
                rho = float(spearmanr(xs, means).statistic)
                checks.append(TrendCheck("spearman_n", series, rho,
                                         spearman_threshold,
                                         rho <= spearman_threshold))
            else:
                idx = int(np.argmin(means))
                interior = 0 < idx < len(means) - 1
                checks.append(TrendCheck("lambda_interior_argmin", series,
                                         float(idx), float(len(means) - 1),
                                         interior))
    if config.axis == LAMBDA and KLR in config.models:
        base_xs, base_means = _series_means(result, "none", CONSTANT, "test")
        baseline = float(np.mean(base_means)) if base_means else None
        for kernel in config.kernels:
            xs, means = _series_means(result, kernel, KLR, "test")
            at_100 = [m for x, m in zip(xs, means) if np.isclose(x, 100.0, rtol=1e-9)]
            if not at_100 or baseline is None:
                continue
            diff = abs(at_100[0] - baseline)
            checks.append(TrendCheck("klr_collapse", f"{kernel}/klr", diff,
                                     collapse_tolerance, diff <= collapse_tolerance))
    return TrendReport(config.axis, checks)


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

ROWS_HEADER = ("seed,n,lambda,fit_lambda,kernel,model,split,status,"
               "smce,dual_smce,pgap_sq,pgap_logistic,binned_ece,bin_count,"
               "mmce,accuracy,n_eval,error")


def rows_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    buf.write(ROWS_HEADER + "\n")
    for r in rows:
        lam = "" if r.lam is None else format_float(r.lam)
        fit = "" if r.fit_lambda is None else format_float(r.fit_lambda)
        metric_vals = (r.report.to_csv_values() if r.report is not None
                       else [""] * len(MetricReport.CSV_FIELDS))
        cells = [str(r.seed), str(r.n), lam, fit, r.kernel, r.model, r.split,
                 r.status, *metric_vals, r.error.replace(",", ";")]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def validate_report(report: MetricReport) -> None:
    """Internal-consistency checks applied to every ingested row: metric
    nonnegativity and scale, the primal-dual ordering, and (when the gap
    columns are present) both sandwich inequalities."""
    for name in AGG_METRICS:
        value = getattr(report, name)
        if value is not None and (not np.isfinite(value) or value < 0):
            raise InputError(f"metric {name} out of range: {value}")
    if report.smce > 1.0 + 1e-12:
        raise InputError(f"smce exceeds 1: {report.smce}")
    if report.dual_smce is not None and report.smce > report.dual_smce + 1e-9:
        raise InputError("smce exceeds its logit-space dual")
    if report.pgap_sq is not None:
        if report.smce**2 > report.pgap_sq + 1e-6 or report.pgap_sq > 2 * report.smce + 1e-6:
            raise InputError("squared-loss sandwich violated")
    if report.pgap_logistic is not None and report.dual_smce is not None:
        if (2 * report.dual_smce**2 > report.pgap_logistic + 1e-6
                or report.pgap_logistic > 4 * report.dual_smce + 2e-6):
            raise InputError("logistic-loss sandwich violated")


def rows_from_csv(text: str) -> list[SweepRow]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != ROWS_HEADER:
        raise InputError("unrecognized sweep rows header")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        seed, n, lam, fit, kernel, model, split, status = parts[:8]
        metric_vals = parts[8:17]
        error = parts[17] if len(parts) > 17 else ""
        report = None
        if status == "ok":
            vals = {}
            for name, raw in zip(MetricReport.CSV_FIELDS, metric_vals):
                if raw == "":
                    vals[name] = None
                elif name in ("bin_count", "n"):
                    vals[name] = int(raw)
                else:
                    vals[name] = float(raw)
            report = MetricReport(**vals)
            validate_report(report)
        out.append(SweepRow(int(seed), int(n),
                            None if lam == "" else float(lam),
                            None if fit == "" else float(fit),
                            kernel, model, split, status, report, error))
    return out


AGG_HEADER = ("n,lambda,kernel,model,split,seeds,single_seed,"
              + ",".join(f"{m}_mean,{m}_std" for m in AGG_METRICS))


def agg_to_csv(aggs: list[AggRow]) -> str:
    buf = io.StringIO()
    buf.write(AGG_HEADER + "\n")
    for a in aggs:
        cells = [str(a.n), "" if a.lam is None else format_float(a.lam),
                 a.kernel, a.model, a.split, str(a.seeds), str(int(a.single_seed))]
        for m in AGG_METRICS:
            mean, std = a.means[m], a.stds[m]
            cells.append("" if mean is None else format_float(mean))
            cells.append("" if std is None else format_float(std))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def agg_from_csv(text: str) -> list[AggRow]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != AGG_HEADER:
        raise InputError("unrecognized sweep aggregate header")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        n, lam, kernel, model, split, seeds, single = parts[:7]
        means, stds = {}, {}
        for i, m in enumerate(AGG_METRICS):
            raw_mean, raw_std = parts[7 + 2 * i], parts[8 + 2 * i]
            means[m] = None if raw_mean == "" else float(raw_mean)
            stds[m] = None if raw_std == "" else float(raw_std)
        out.append(AggRow(int(n), None if lam == "" else float(lam), kernel,
                          model, split, int(seeds), bool(int(single)), means, stds))
    return out


# ---------------------------------------------------------------------------
# config files and presets
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "axis", "n_grid", "lambda_grid", "lambda_axis_n", "lambda_scale",
    "schedule", "klr_lambda", "kernels", "models", "seeds", "master_seed",
    "data", "test_size", "include_baseline", "workers",
}


def parse_config(text: str) -> SweepConfig:
    """Parse a flat key=value sweep config; `#` starts a comment line."""
    kwargs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_KEYS:
            raise InputError(f"config line {lineno}: unknown key {key!r}")
        try:
            if key == "n_grid":
                kwargs[key] = tuple(int(v) for v in val.split(","))
            elif key == "lambda_grid":
                kwargs[key] = tuple(float(v) for v in val.split(","))
            elif key in ("lambda_axis_n", "seeds", "master_seed", "test_size", "workers"):
                kwargs[key] = int(val)
            elif key == "klr_lambda":
                kwargs[key] = float(val)
            elif key in ("kernels", "models"):
                kwargs[key] = tuple(v.strip() for v in val.split(","))
            elif key == "include_baseline":
                kwargs[key] = val.lower() in ("1", "true", "yes")
            else:
                kwargs[key] = val
        except ValueError as exc:
            raise InputError(f"config line {lineno}: bad value for {key!r}: {exc}") from exc
    return SweepConfig(**kwargs)


def replace_workers(config: SweepConfig, workers: int) -> SweepConfig:
    return replace(config, workers=max(int(workers), 1))


def preset_configs(name: str) -> list[tuple[str, SweepConfig]]:
    """Bundled sweep protocols.

    fig1: toy-data sample-size sweep (n log-spaced 100..10000, 10 seeds) and
    the lambda sweep at n=10000 over 1e-4..1e2, for both kernels and models.
    fig2: the recalibration analog on temperature-distorted synthetic scores.
    Full presets take hours on one core; trim seeds/grids for a smoke run.
    """
    if name == "fig1":
        n_axis = SweepConfig(axis=SAMPLE_SIZE, data="toy1d",
                             n_grid=log_int_grid(100, 10000, 10), seeds=10)
        lam_axis = SweepConfig(axis=LAMBDA, data="toy1d", lambda_axis_n=10000,
                               lambda_grid=log_grid(1e-4, 1e2, 7), seeds=10)
        return [("fig1_n", n_axis), ("fig1_lambda", lam_axis)]
    if name == "fig2":
        n_axis = SweepConfig(axis=SAMPLE_SIZE, data="miscal-temperature:0.5",
                             n_grid=(250, 500, 1000, 2000, 4000), seeds=10,
                             kernels=("laplace",), schedule="power:0.5",
                             test_size=4000)
        lam_axis = SweepConfig(axis=LAMBDA, data="miscal-temperature:0.5",
                               lambda_axis_n=1000,
                               lambda_grid=log_grid(1e-4, 1e2, 7), seeds=10,
                               kernels=("laplace",), test_size=4000)
        return [("fig2_nre", n_axis), ("fig2_lambda", lam_axis)]
    raise InputError(f"unknown preset {name!r}")
