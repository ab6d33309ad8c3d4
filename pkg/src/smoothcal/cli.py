"""Command-line interface.

Verbs: generate, train, evaluate, recalibrate, sweep, plot. Exit codes are a
stable contract for scripting: 0 success, 1 usage or validation failure,
2 I/O failure, 3 numerical or optimizer failure. All numeric output is
printed with 17 significant digits so golden-file comparisons are exact.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import data as dataio
from . import metrics as met
from . import models as mod
from . import plots, sweep
from .errors import InputError, NumericalError, OptimizerError, ParseError
from .kernels import KernelSpec, median_heuristic
from .metrics import format_float

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smoothcal", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset or score file")
    kind = gen.add_mutually_exclusive_group(required=True)
    kind.add_argument("--toy2d", action="store_true")
    kind.add_argument("--toy1d", action="store_true")
    kind.add_argument("--miscal-temperature", type=float, metavar="T")
    kind.add_argument("--miscal-affine", nargs=2, type=float, metavar=("A", "C"))
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="fit a kernel model on a dataset CSV")
    tr.add_argument("--data", required=True)
    tr.add_argument("--model", choices=("krr", "klr"), required=True)
    tr.add_argument("--kernel", choices=("gaussian", "laplace"), default="laplace")
    tr.add_argument("--lam", type=float, required=True)
    tr.add_argument("--sigma", type=float, default=None,
                    help="bandwidth; default median heuristic on the inputs")
    tr.add_argument("--out", default=None, help="model file to write")
    tr.add_argument("--max-iter", type=int, default=1000)
    tr.add_argument("--step", type=float, default=0.01)
    tr.add_argument("--tol", type=float, default=1e-6)
    tr.add_argument("--estimate-err", action="store_true",
                    help="measure klr optimization error against a 10x reference run")

    ev = sub.add_parser("evaluate", help="metric report for a model or prediction file")
    ev.add_argument("--model", default=None, help="model file")
    ev.add_argument("--data", default=None, help="dataset CSV to score the model on")
    ev.add_argument("--preds", default=None, help="prediction file (metrics-only mode)")
    ev.add_argument("--dual", action="store_true",
                    help="require the logit-space metrics; fails on probability files")
    ev.add_argument("--no-pgap", action="store_true",
                    help="skip the post-processing gap solves")
    ev.add_argument("--bins", type=int, default=None)
    ev.add_argument("--witness", default=None,
                    help="also dump the optimal witness vectors to this CSV")
    ev.add_argument("--out", default=None, help="write the report row here instead of stdout")

    rc = sub.add_parser("recalibrate", help="fit a 1-D recalibrator on a score file")
    rc.add_argument("--scores", required=True, help="training score file")
    rc.add_argument("--test", required=True, help="score file to recalibrate and evaluate")
    rc.add_argument("--space", choices=("logit", "probability"), default="logit")
    rc.add_argument("--model", choices=("krr", "klr"), default="krr")
    rc.add_argument("--kernel", choices=("gaussian", "laplace"), default="laplace")
    rc.add_argument("--lam", type=float, required=True)
    rc.add_argument("--out", required=True, help="recalibrated prediction file")

    sw = sub.add_parser("sweep", help="run a seeded sweep and write rows/aggregates")
    src = sw.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", default=None, help="key=value sweep config file")
    src.add_argument("--preset", choices=("fig1", "fig2"), default=None)
    sw.add_argument("--out-dir", required=True)
    sw.add_argument("--workers", type=int, default=None,
                    help="parallel cells; default $SMOOTHCAL_WORKERS or 1")

    pl = sub.add_parser("plot", help="render SVG charts from a sweep aggregate CSV")
    pl.add_argument("--agg", required=True)
    pl.add_argument("--axis", choices=("sample_size", "lambda"), default="sample_size")
    pl.add_argument("--out-dir", required=True)
    return parser


# ---------------------------------------------------------------------------
# verb implementations
# ---------------------------------------------------------------------------

def _cmd_generate(args) -> int:
    if args.n <= 0:
        raise InputError(f"--n must be positive, got {args.n}")
    if args.toy2d or args.toy1d:
        dim = 2 if args.toy2d else 1
        ds = dataio.gen_toy(args.n, args.seed, dim=dim)
        dataio.write_dataset(args.out, ds)
    else:
        if args.miscal_temperature is not None:
            dist = dataio.Temperature(args.miscal_temperature)
        else:
            dist = dataio.Affine(*args.miscal_affine)
        rs = dataio.gen_miscalibrated_scores(args.n, dist, args.seed)
        dataio.write_scores(args.out, rs)
    print(f"wrote {args.n} rows to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    ds = dataio.read_dataset(args.data)
    if args.sigma is not None:
        if args.sigma <= 0:
            raise InputError("--sigma must be positive")
        sigma = args.sigma
    else:
        sigma, _ = median_heuristic(ds.X)
    spec = KernelSpec(args.kernel, sigma)
    if args.model == "krr":
        model, report = mod.fit_krr(ds.X, ds.y, spec, args.lam)
    else:
        opts = mod.OptimizerSettings(max_iter=args.max_iter, step_size=args.step,
                                     tol=args.tol, estimate_err_n=args.estimate_err)
        model, report = mod.fit_klr(ds.X, ds.y, spec, args.lam, opts)
    if args.out:
        mod.save_model(args.out, model)
    print(f"objective={format_float(model.train_objective)}")
    print(f"hilbert_norm={format_float(model.hilbert_norm)}")
    err = report.err_n
    print(f"err_n={'n/a' if err is None else format_float(err)}")
    print(f"iterations={report.iterations} converged={report.converged} "
          f"grad_norm={format_float(report.final_grad_norm)}")
    if model.loss_family == mod.SQUARED:
        print(f"smce_bound={format_float(mod.training_smce_bound(model, report))}")
    if args.out:
        print(f"wrote model to {args.out}")
    return EXIT_OK


def _prediction_set_for_evaluate(args) -> met.PredictionSet:
    if args.preds is not None:
        if args.model or args.data:
            raise InputError("--preds is exclusive with --model/--data")
        return met.read_prediction_file(args.preds)
    if not (args.model and args.data):
        raise InputError("evaluate needs either --preds or both --model and --data")
    model = mod.load_model(args.model)
    ds = dataio.read_dataset(args.data)
    return mod.prediction_set(model, ds.X, ds.y)


def _cmd_evaluate(args) -> int:
    preds = _prediction_set_for_evaluate(args)
    if args.dual and preds.space != met.LOGIT:
        raise InputError("dual metrics need a logit-space input")
    report = met.metric_report(preds, include_pgap=not args.no_pgap, bins=args.bins)
    header = ",".join(met.MetricReport.CSV_FIELDS)
    row = ",".join(report.to_csv_values())
    text = header + "\n" + row + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote report to {args.out}")
    else:
        sys.stdout.write(text)
    if args.witness:
        if preds.space == met.LOGIT:
            _, witness = met.dual_smooth_ce(preds)
        else:
            _, witness = met.smooth_ce(preds)
        lines = ["value,weight,witness"]
        for v, w, h in zip(witness.values, witness.weights, witness.witness):
            lines.append(f"{format_float(v)},{format_float(w)},{format_float(h)}")
        Path(args.witness).write_text("\n".join(lines) + "\n")
        print(f"wrote witness to {args.witness}")
    return EXIT_OK


def _scores_to_probs(scores: np.ndarray, space: str) -> np.ndarray:
    if space == "logit":
        from scipy.special import expit
        return expit(scores)
    if scores.min() < 0 or scores.max() > 1:
        raise InputError("probability-space scores must lie in [0, 1]")
    return scores


def _cmd_recalibrate(args) -> int:
    train = dataio.read_scores(args.scores)
    test = dataio.read_scores(args.test)
    sigma, _ = median_heuristic(train.scores[:, None])
    spec = KernelSpec(args.kernel, sigma)
    if args.model == "krr":
        model, _ = mod.fit_krr(train.scores[:, None], train.labels, spec, args.lam)
    else:
        model, _ = mod.fit_klr(train.scores[:, None], train.labels, spec, args.lam)
    before = met.smooth_ce(met.PredictionSet.probabilities(
        _scores_to_probs(test.scores, args.space), test.labels))[0]
    calibrated = mod.predict_proba(model, test.scores[:, None])
    after_set = met.PredictionSet.probabilities(calibrated, test.labels)
    after = met.smooth_ce(after_set)[0]
    met.write_prediction_file(args.out, after_set)
    print(f"smce_before={format_float(before)}")
    print(f"smce_after={format_float(after)}")
    print(f"wrote recalibrated predictions to {args.out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("SMOOTHCAL_WORKERS", "1"))
    if args.preset:
        jobs = sweep.preset_configs(args.preset)
    else:
        config = sweep.parse_config(Path(args.config).read_text())
        jobs = [("sweep", config)]
    for tag, config in jobs:
        config = sweep.replace_workers(config, workers)
        result = sweep.run_sweep(config)
        (out_dir / f"{tag}_rows.csv").write_text(sweep.rows_to_csv(result.rows))
        (out_dir / f"{tag}_agg.csv").write_text(sweep.agg_to_csv(result.aggregates))
        try:
            trends = sweep.assert_trends(result)
            (out_dir / f"{tag}_trends.txt").write_text(trends.to_text() + "\n")
            (out_dir / f"{tag}_trends.csv").write_text(trends.to_csv())
            print(trends.to_text())
        except InputError as exc:
            (out_dir / f"{tag}_trends.txt").write_text(f"no trend checks: {exc}\n")
            print(f"{tag}: no trend checks: {exc}")
        print(f"{tag}: wrote {len(result.rows)} rows to {out_dir}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    aggs = sweep.agg_from_csv(Path(args.agg).read_text())
    charts = plots.charts_for_aggregates(aggs, args.axis)
    if not charts:
        raise InputError("aggregate file has no plottable series")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stem, svg in sorted(charts.items()):
        (out_dir / f"{stem}.svg").write_text(svg)
    print(f"wrote {len(charts)} charts to {out_dir}")
    return EXIT_OK


_VERBS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "recalibrate": _cmd_recalibrate,
    "sweep": _cmd_sweep,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _VERBS[args.verb](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, OptimizerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
