import json

import numpy as np
import pytest

from hmdlf.baselines import naive
from hmdlf.cli import main, load_config, synth_config
from hmdlf.data import ingest_csv, synth
from hmdlf.experiment import prepare
from hmdlf.training import chronological_split

TOY = ["model.branch.conv_filters=4", "model.branch.hidden=6", "model.branch.attention_width=6",
       "model.head_hidden=8", "train.lookup=8", "train.max_epochs=4", "train.patience=2", "train.batch_size=64",
       "synth.days=4"]


def run(tmp_path, *args):
    return main([*args, f"output_dir={tmp_path}"])


def data_lines(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


# -- synth -------------------------------------------------------------------


def test_synth_counts_and_is_byte_identical(tmp_path, capsys):
    # the output directory is part of the echoed config, so reruns share it
    assert run(tmp_path, "synth", "synth.days=14") == 0
    assert "1344 records" in capsys.readouterr().out
    a = tmp_path / "synthetic.csv"
    first = a.read_bytes()
    assert run(tmp_path, "synth", "synth.days=14") == 0
    assert a.read_bytes() == first
    assert len(data_lines(a)) == 1344 + 1
    assert a.read_text().startswith("# hmdlf 0.1.0")
    assert len(ingest_csv(a)) == 1344


def test_synth_one_day_is_a_user_error(tmp_path, capsys):
    assert run(tmp_path, "synth", "synth.days=1") == 1
    assert "at least 2 days" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    assert run(tmp_path, "synth", "synth.dayz=3") == 1
    assert "synth.dayz" in capsys.readouterr().err
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"colour": "red"}}))
    assert main(["train", "--config", str(cfg), f"output_dir={tmp_path}"]) == 1


def test_config_file_and_overrides_compose(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "synth": {"days": 3}}))
    doc = load_config(str(cfg), ["synth.noise=0.1"])
    sc = synth_config(doc)
    assert (sc.days, sc.noise, sc.seed) == (3, 0.1, 5)


# -- train / evaluate ---------------------------------------------------------


def test_train_completes_and_reruns_identically(tmp_path):
    names = ("train_report.tsv", "model.hmdlf", "train_curve.svg")
    assert run(tmp_path, "train", *TOY) == 0
    first = {n: (tmp_path / n).read_bytes() for n in names}
    assert run(tmp_path, "train", *TOY) == 0
    assert {n: (tmp_path / n).read_bytes() for n in names} == first
    rows = data_lines(tmp_path / "train_report.tsv")
    assert rows[0].split("\t")[:3] == ["epoch", "train_mse", "val_mse"]
    assert 1 <= len(rows) - 1 <= 4
    assert (tmp_path / "train_timing.tsv").exists()


def test_evaluate_twice_identical(tmp_path, capsys):
    assert run(tmp_path / "m", "train", *TOY) == 0
    model = str(tmp_path / "m" / "model.hmdlf")
    names = ("predictions.csv", "metrics.json", "predictions.svg")
    assert run(tmp_path / "x", "evaluate", *TOY, f"evaluate.model_path={model}") == 0
    first = {n: (tmp_path / "x" / n).read_bytes() for n in names}
    assert run(tmp_path / "x", "evaluate", *TOY, f"evaluate.model_path={model}") == 0
    assert {n: (tmp_path / "x" / n).read_bytes() for n in names} == first
    rows = data_lines(tmp_path / "x" / "predictions.csv")
    assert rows[0] == "timestamp,actual,predicted"
    assert len(rows) - 1 == 4 * 96 - 8
    assert np.isfinite(json.loads((tmp_path / "x" / "metrics.json").read_text())["metrics"]["rmse"])


def test_evaluate_on_csv_missing_a_modality(tmp_path, capsys):
    assert run(tmp_path / "m", "train", *TOY) == 0
    ds = synth(synth_config(load_config(None, ["synth.days=3"])))
    path = tmp_path / "flow_only.csv"
    path.write_text("timestamp,flow\n" + "\n".join(f"{str(t)},{v!r}" for t, v in
                                                     zip(ds.timestamps, ds.series["flow"].tolist())) + "\n")
    code = run(tmp_path / "e", "evaluate", *TOY, f"data.path={path}",
               f"evaluate.model_path={tmp_path / 'm' / 'model.hmdlf'}")
    assert code == 1
    assert "speed" in capsys.readouterr().err


def test_evaluate_requires_model_path(tmp_path, capsys):
    assert run(tmp_path, "evaluate") == 1
    assert "model_path" in capsys.readouterr().err


def test_hmdlf_beats_naive_on_validation_slice(tmp_path):
    args = ["synth.days=14", "train.max_epochs=80", "train.patience=10", "model.branch.conv_filters=8",
            "model.branch.hidden=16", "model.branch.attention_width=16", "model.head_hidden=32", "train.lr=0.01",
            "train.batch_size=128"]
    assert run(tmp_path, "train", *args) == 0
    rows = data_lines(tmp_path / "train_report.tsv")[1:]
    best_val = min(float(r.split("\t")[2]) for r in rows)
    cfg = load_config(None, args)
    prep = prepare(synth(synth_config(cfg)), ["flow", "speed", "journey_time"], 20)
    _, val = chronological_split(prep.train, 0.2)
    naive_mse = float(np.mean((naive(val) - val.targets) ** 2))
    assert best_val < naive_mse


# -- gradcheck ---------------------------------------------------------------


def test_gradcheck_passes_with_a_row_per_component(tmp_path, capsys):
    assert run(tmp_path, "gradcheck") == 0
    out = capsys.readouterr().out
    body = [ln for ln in out.splitlines() if ln and not ln.startswith(("#", "component"))]
    names = {ln.split()[0] for ln in body}
    assert {"conv1d", "maxpool", "dense", "dropout", "rnn", "gru", "attention", "hmdlf_end_to_end"} <= names
    assert "FAIL" not in out


def test_gradcheck_corrupt_reports_failure(tmp_path, capsys):
    assert main(["gradcheck", "--corrupt", "gru"]) == 2
    assert "FAIL" in capsys.readouterr().out


# -- compare -----------------------------------------------------------------


def test_compare_roster_and_lookup_sweep(tmp_path):
    args = [*TOY, "train.max_epochs=2", "train.patience=null", "compare.lookups=[10,20,50]", "synth.days=5"]
    assert run(tmp_path, "compare", *args) == 0
    rows = data_lines(tmp_path / "comparison.tsv")
    assert rows[0].split("\t") == ["model", "lookup=10", "lookup=20", "lookup=50", "note"]
    assert [r.split("\t")[0] for r in rows[1:]] == ["naive", "seasonal", "lr", "ridge", "gru", "cnn_gru",
                                                     "hmdlf_attention"]
    for r in rows[1:]:
        assert all(np.isfinite(float(c)) for c in r.split("\t")[1:4])
    sweep = data_lines(tmp_path / "lookup_sweep.tsv")
    assert sweep[0].split("\t") == ["model", "10", "20", "50"]
    assert (tmp_path / "lookup_sweep.svg").exists()


def test_compare_seasonal_wins_on_noiseless_data(tmp_path):
    args = [*TOY, "synth.days=21", "synth.noise=0", "compare.season_days=7", "train.max_epochs=2",
            "train.patience=null"]
    assert run(tmp_path, "compare", *args) == 0
    rows = [r.split("\t") for r in data_lines(tmp_path / "comparison.tsv")[1:]]
    scores = {r[0]: float("nan" if r[1] == "DIVERGED" else r[1]) for r in rows}
    assert scores["seasonal"] == 0.0
    assert min((v, k) for k, v in scores.items() if np.isfinite(v))[1] == "seasonal"


def test_compare_isolates_a_failing_model(tmp_path):
    # constant speed and journey columns make plain least squares singular
    ds = synth(synth_config(load_config(None, ["synth.days=5"])))
    path = tmp_path / "flat.csv"
    path.write_text("timestamp,flow,speed,journey_time\n" + "".join(
        f"{t},{v!r},100.0,180.0\n" for t, v in zip(ds.timestamps, ds.series["flow"].tolist())))
    args = [*TOY, f"data.path={path}", "compare.roster=[\"naive\",\"lr\",\"ridge\"]"]
    assert run(tmp_path, "compare", *args) == 0
    rows = {r.split("\t")[0]: r.split("\t") for r in data_lines(tmp_path / "comparison.tsv")[1:]}
    assert rows["lr"][1] == "DIVERGED" and "ridge" in rows["lr"][2]
    assert np.isfinite(float(rows["ridge"][1])) and np.isfinite(float(rows["naive"][1]))


def test_compare_epoch_sweep_is_reproducible(tmp_path):
    args = [*TOY, "compare.roster=[\"naive\",\"gru\"]", "compare.epochs=[1,2]"]
    names = ("comparison.tsv", "epoch_sweep.tsv", "epoch_sweep.svg")
    assert run(tmp_path, "compare", *args) == 0
    first = {n: (tmp_path / n).read_bytes() for n in names}
    assert run(tmp_path, "compare", *args) == 0
    assert {n: (tmp_path / n).read_bytes() for n in names} == first


def test_compare_unknown_kind(tmp_path, capsys):
    assert run(tmp_path, "compare", "compare.roster=[\"lstm\"]") == 1


@pytest.mark.parametrize("argv", [["frobnicate"], []])
def test_bad_command(argv):
    with pytest.raises(SystemExit):
        main(argv)
