import xml.etree.ElementTree as ET

import numpy as np
import pytest

from smoothcal import read_prediction_file
from smoothcal.cli import main
from smoothcal.metrics import MetricReport


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def parse_report_row(out):
    lines = [ln for ln in out.splitlines() if ln.strip()]
    header = lines[0].split(",")
    row = lines[1].split(",")
    assert header == list(MetricReport.CSV_FIELDS)
    return {k: (None if v == "" else float(v)) for k, v in zip(header, row)}


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def test_generate_dataset_and_idempotence(tmp_path, capsys):
    out = tmp_path / "d.csv"
    code, stdout, _ = run(["generate", "--toy2d", "--n", "100", "--seed", "7",
                           "--out", str(out)], capsys)
    assert code == 0
    assert "100" in stdout
    first = out.read_bytes()
    code, _, _ = run(["generate", "--toy2d", "--n", "100", "--seed", "7",
                      "--out", str(out)], capsys)
    assert code == 0
    assert out.read_bytes() == first
    assert len(first.decode().splitlines()) == 101


def test_generate_rejects_zero_n(tmp_path, capsys):
    code, _, err = run(["generate", "--toy1d", "--n", "0", "--seed", "1",
                        "--out", str(tmp_path / "d.csv")], capsys)
    assert code == 1
    assert "error" in err


def test_generate_unwritable_path_is_io_error(tmp_path, capsys):
    code, _, err = run(["generate", "--toy1d", "--n", "5", "--seed", "1",
                        "--out", str(tmp_path / "missing-dir" / "d.csv")], capsys)
    assert code == 2


def test_generate_score_file(tmp_path, capsys):
    out = tmp_path / "scores.csv"
    code, _, _ = run(["generate", "--miscal-temperature", "0.5", "--n", "200",
                      "--seed", "3", "--out", str(out)], capsys)
    assert code == 0
    assert out.read_text().startswith("score,label")


def test_unknown_flag_rejected(tmp_path, capsys):
    code, _, _ = run(["generate", "--toy1d", "--n", "5", "--seed", "1",
                      "--out", str(tmp_path / "d.csv"), "--bogus"], capsys)
    assert code == 1


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

@pytest.fixture
def dataset(tmp_path, capsys):
    path = tmp_path / "train.csv"
    assert main(["generate", "--toy1d", "--n", "120", "--seed", "5",
                 "--out", str(path)]) == 0
    capsys.readouterr()
    return path


def test_train_krr_reports_bound(dataset, tmp_path, capsys):
    model_path = tmp_path / "model.txt"
    code, out, _ = run(["train", "--data", str(dataset), "--model", "krr",
                        "--kernel", "laplace", "--lam", "0.1",
                        "--out", str(model_path)], capsys)
    assert code == 0
    assert "smce_bound=" in out and "hilbert_norm=" in out
    assert "err_n=0" in out
    assert model_path.exists()


def test_train_klr_iteration_cap(dataset, capsys):
    code, out, _ = run(["train", "--data", str(dataset), "--model", "klr",
                        "--lam", "0.01"], capsys)
    assert code == 0
    iters = int(next(ln for ln in out.splitlines()
                     if ln.startswith("iterations=")).split()[0].split("=")[1])
    assert iters <= 1000


def test_train_zero_labels_zero_objective(tmp_path, capsys):
    path = tmp_path / "zeros.csv"
    rows = ["x1,y"] + [f"{v:.2f},0" for v in np.linspace(-1, 1, 20)]
    path.write_text("\n".join(rows) + "\n")
    code, out, _ = run(["train", "--data", str(path), "--model", "krr",
                        "--lam", "0.5"], capsys)
    assert code == 0
    objective = float(next(ln for ln in out.splitlines()
                           if ln.startswith("objective=")).split("=")[1])
    assert abs(objective) < 1e-15


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def write_preds(path, space, rows):
    lines = [f"# space={space}", "value,label"]
    lines += [f"{v},{y}" for v, y in rows]
    path.write_text("\n".join(lines) + "\n")


def test_evaluate_perfectly_calibrated_zeros(tmp_path, capsys):
    path = tmp_path / "preds.csv"
    write_preds(path, "probability", [(1.0, 1), (0.0, 0), (1.0, 1)])
    code, out, _ = run(["evaluate", "--preds", str(path)], capsys)
    assert code == 0
    row = parse_report_row(out)
    assert row["smce"] == 0.0 and row["pgap_sq"] == 0.0
    assert row["binned_ece"] == 0.0 and row["mmce"] == 0.0


def test_evaluate_single_row_examples(tmp_path, capsys):
    path = tmp_path / "preds.csv"
    write_preds(path, "probability", [(0.5, 1)])
    code, out, _ = run(["evaluate", "--preds", str(path)], capsys)
    row = parse_report_row(out)
    assert row["smce"] == 0.5
    assert row["pgap_sq"] == pytest.approx(0.25, abs=1e-9)
    assert row["mmce"] == 0.5


def test_evaluate_sandwich_from_emitted_row(tmp_path, capsys):
    rng = np.random.default_rng(0)
    path = tmp_path / "preds.csv"
    write_preds(path, "probability",
                list(zip(rng.uniform(0, 1, 60), rng.integers(0, 2, 60))))
    _, out, _ = run(["evaluate", "--preds", str(path)], capsys)
    row = parse_report_row(out)
    assert row["smce"] ** 2 <= row["pgap_sq"] + 1e-6
    assert row["pgap_sq"] <= 2 * row["smce"] + 1e-6


def test_evaluate_concatenation_recomputes(tmp_path, capsys):
    rng = np.random.default_rng(1)
    a = list(zip(rng.uniform(0, 1, 30), rng.integers(0, 2, 30)))
    b = list(zip(rng.uniform(0, 1, 50), rng.integers(0, 2, 50)))
    pa, pb, pc = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    write_preds(pa, "probability", a)
    write_preds(pb, "probability", b)
    write_preds(pc, "probability", a + b)
    _, out_c, _ = run(["evaluate", "--preds", str(pc), "--no-pgap"], capsys)
    row_c = parse_report_row(out_c)
    # recompute from the raw union and compare: metrics are never averaged
    from smoothcal import PredictionSet, metric_report
    values = [v for v, _ in a + b]
    labels = [y for _, y in a + b]
    direct = metric_report(PredictionSet.probabilities(values, labels))
    assert row_c["smce"] == pytest.approx(direct.smce, abs=1e-15)
    assert row_c["mmce"] == pytest.approx(direct.mmce, abs=1e-15)


def test_evaluate_dual_on_probability_file_exits_one(tmp_path, capsys):
    path = tmp_path / "preds.csv"
    write_preds(path, "probability", [(0.5, 1)])
    code, _, err = run(["evaluate", "--preds", str(path), "--dual"], capsys)
    assert code == 1


def test_evaluate_witness_dump(tmp_path, capsys):
    path = tmp_path / "preds.csv"
    write_preds(path, "probability", [(0.2, 1), (0.8, 0)])
    witness_path = tmp_path / "witness.csv"
    code, _, _ = run(["evaluate", "--preds", str(path), "--no-pgap",
                      "--witness", str(witness_path)], capsys)
    assert code == 0
    lines = witness_path.read_text().splitlines()
    assert lines[0] == "value,weight,witness"
    assert len(lines) == 3


def test_evaluate_model_on_dataset(dataset, tmp_path, capsys):
    model_path = tmp_path / "model.txt"
    assert main(["train", "--data", str(dataset), "--model", "klr",
                 "--lam", "0.01", "--out", str(model_path)]) == 0
    capsys.readouterr()
    code, out, _ = run(["evaluate", "--model", str(model_path),
                        "--data", str(dataset)], capsys)
    assert code == 0
    row = parse_report_row(out)
    assert row["dual_smce"] is not None
    assert row["smce"] <= row["dual_smce"] + 1e-9


# ---------------------------------------------------------------------------
# recalibrate
# ---------------------------------------------------------------------------

def test_recalibrate_improves_distorted_scores(tmp_path, capsys):
    train, test = tmp_path / "tr.csv", tmp_path / "te.csv"
    assert main(["generate", "--miscal-temperature", "0.5", "--n", "1500",
                 "--seed", "21", "--out", str(train)]) == 0
    assert main(["generate", "--miscal-temperature", "0.5", "--n", "1500",
                 "--seed", "22", "--out", str(test)]) == 0
    capsys.readouterr()
    out_path = tmp_path / "recal.csv"
    code, out, _ = run(["recalibrate", "--scores", str(train), "--test", str(test),
                        "--model", "klr", "--lam", "0.01", "--out", str(out_path)],
                       capsys)
    assert code == 0
    before = float(next(ln for ln in out.splitlines()
                        if ln.startswith("smce_before=")).split("=")[1])
    after = float(next(ln for ln in out.splitlines()
                       if ln.startswith("smce_after=")).split("=")[1])
    assert after < before
    recal = read_prediction_file(out_path)
    assert recal.space == "probability"
    assert recal.n == 1500


def test_recalibrate_identity_distortion_roughly_neutral(tmp_path, capsys):
    train, test = tmp_path / "tr.csv", tmp_path / "te.csv"
    assert main(["generate", "--miscal-temperature", "1.0", "--n", "2000",
                 "--seed", "31", "--out", str(train)]) == 0
    assert main(["generate", "--miscal-temperature", "1.0", "--n", "2000",
                 "--seed", "32", "--out", str(test)]) == 0
    capsys.readouterr()
    lam = 1.0 / np.sqrt(2000)
    code, out, _ = run(["recalibrate", "--scores", str(train), "--test", str(test),
                        "--model", "krr", "--lam", str(lam),
                        "--out", str(tmp_path / "recal.csv")], capsys)
    assert code == 0
    before = float(next(ln for ln in out.splitlines()
                        if ln.startswith("smce_before=")).split("=")[1])
    after = float(next(ln for ln in out.splitlines()
                       if ln.startswith("smce_after=")).split("=")[1])
    assert abs(after - before) <= 0.02


def test_recalibrate_missing_file_exits_two(tmp_path, capsys):
    code, _, _ = run(["recalibrate", "--scores", str(tmp_path / "nope.csv"),
                      "--test", str(tmp_path / "nope2.csv"),
                      "--lam", "0.01", "--out", str(tmp_path / "o.csv")], capsys)
    assert code == 2


# ---------------------------------------------------------------------------
# sweep and plot
# ---------------------------------------------------------------------------

def test_sweep_minimal_config_and_plot(tmp_path, capsys):
    config = tmp_path / "sweep.cfg"
    config.write_text(
        "axis=sample_size\nn_grid=25,40\nkernels=laplace\nmodels=krr\n"
        "seeds=2\nmaster_seed=0\ndata=toy1d\ntest_size=50\n")
    out_dir = tmp_path / "out"
    code, stdout, _ = run(["sweep", "--config", str(config),
                           "--out-dir", str(out_dir)], capsys)
    assert code == 0
    # header + (2 grid x 2 seeds x 2 splits) for the single krr series
    rows = (out_dir / "sweep_rows.csv").read_text()
    assert rows.count("\n") == 1 + 8
    assert "no trend checks" in stdout  # two grid points only

    agg = out_dir / "sweep_agg.csv"
    plot_dir = tmp_path / "plots"
    code, _, _ = run(["plot", "--agg", str(agg), "--axis", "sample_size",
                      "--out-dir", str(plot_dir)], capsys)
    assert code == 0
    svgs = sorted(plot_dir.glob("*.svg"))
    assert svgs
    tree = ET.parse(svgs[0])
    root = tree.getroot()
    assert root.tag.endswith("svg")
    ticks = [el for el in root.iter() if el.get("class") == "x-tick"]
    assert len(ticks) == 2


def test_sweep_preset_plumbing(tmp_path, capsys, monkeypatch):
    from smoothcal import SweepConfig
    from smoothcal import cli as cli_mod

    def tiny_preset(name):
        assert name == "fig1"
        return [("fig1_n", SweepConfig(axis="sample_size", n_grid=(20, 30),
                                       kernels=("laplace",), models=("krr",),
                                       seeds=1, data="toy1d", test_size=40))]

    monkeypatch.setattr(cli_mod.sweep, "preset_configs", tiny_preset)
    out_dir = tmp_path / "out"
    code, stdout, _ = run(["sweep", "--preset", "fig1",
                           "--out-dir", str(out_dir)], capsys)
    assert code == 0
    assert (out_dir / "fig1_n_rows.csv").exists()
    assert (out_dir / "fig1_n_agg.csv").exists()


def test_sweep_malformed_config_names_key(tmp_path, capsys):
    config = tmp_path / "sweep.cfg"
    config.write_text("axis=sample_size\nwhatzit=3\n")
    code, _, err = run(["sweep", "--config", str(config),
                        "--out-dir", str(tmp_path / "out")], capsys)
    assert code == 1
    assert "whatzit" in err


def test_plot_ten_point_aggregate_has_ten_ticks(tmp_path, capsys):
    config = tmp_path / "sweep.cfg"
    grid = ",".join(str(v) for v in np.linspace(20, 60, 10, dtype=int))
    config.write_text(
        f"axis=sample_size\nn_grid={grid}\nkernels=laplace\nmodels=krr\n"
        "seeds=1\nmaster_seed=1\ndata=toy1d\ntest_size=40\n"
        "include_baseline=false\n")
    out_dir = tmp_path / "out"
    assert main(["sweep", "--config", str(config), "--out-dir", str(out_dir)]) == 0
    capsys.readouterr()
    plot_dir = tmp_path / "plots"
    assert main(["plot", "--agg", str(out_dir / "sweep_agg.csv"),
                 "--axis", "sample_size", "--out-dir", str(plot_dir)]) == 0
    capsys.readouterr()
    tree = ET.parse(plot_dir / "smce_test.svg")
    ticks = [el for el in tree.getroot().iter() if el.get("class") == "x-tick"]
    assert len(ticks) == 10
