"""Command-line entry point: ``hmdlf {synth,train,evaluate,gradcheck,compare}``.

Every command reads one JSON config document (``--config``; defaults apply to
omitted keys) plus ``key.path=value`` overrides. Unknown keys are rejected.
Exit codes: 0 success, 1 user/config/data error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import MetricsRecord
from .data import DataError, SynthConfig, export_csv, format_time, ingest_csv, synth, window
from .experiment import SHALLOW, Prepared, fit_network, prepare, run_shallow, score, season_period
from .gradcheck import COMPONENTS, format_table, run_gradcheck
from .model import BranchConfig, ConfigError, ModelConfig, ModelFileError, load_model, save_model
from .training import Scaler, TrainConfig, TrainingDivergedError, predict

DEFAULT_ROSTER = ["naive", "seasonal", "lr", "ridge", "gru", "cnn_gru", "hmdlf_attention"]


def _defaults() -> dict:
    synth_d = asdict(SynthConfig())
    synth_d["peak_hours"] = list(synth_d["peak_hours"])
    synth_d["seed"] = None
    synth_d["output"] = "synthetic.csv"
    model_d = {k: v for k, v in asdict(ModelConfig()).items() if k not in ("lookup", "seed")}
    train_d = {k: v for k, v in asdict(TrainConfig()).items() if k != "seed"}
    return {
        "seed": 0,
        "output_dir": "hmdlf-out",
        "data": {"path": None, "schema": {}, "interval_minutes": 15, "train_range": None,
                 "test_range": None, "test_fraction": 0.2},
        "synth": synth_d,
        "model": model_d,
        "train": train_d,
        "evaluate": {"model_path": None, "range": None},
        "compare": {"roster": list(DEFAULT_ROSTER), "lookups": [20], "epochs": [], "ridge_lambda": 1.0,
                    "season_days": 1},
    }


DEFAULTS = _defaults()
# values that are free-form mappings rather than fixed key sets
_OPEN = {("data", "schema")}


class UserError(Exception):
    pass


def _merge(base: dict, update: dict, path=()) -> dict:
    for key, value in update.items():
        where = ".".join((*path, key))
        if key not in base:
            raise UserError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and (*path, key) not in _OPEN:
            if not isinstance(value, dict):
                raise UserError(f"config key {where!r} must be a mapping")
            _merge(base[key], value, (*path, key))
        else:
            base[key] = value
    return base


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UserError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise UserError(f"config file {path}: {exc}") from None
        _merge(cfg, doc)
    for item in overrides:
        if "=" not in item:
            raise UserError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        update: dict = {}
        node = update
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(raw)
        _merge(cfg, update)
    return cfg


def _echo(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True)


def synth_config(cfg: dict) -> SynthConfig:
    d = {k: v for k, v in cfg["synth"].items() if k != "output"}
    if d["seed"] is None:
        d["seed"] = cfg["seed"]
    d["peak_hours"] = tuple(d["peak_hours"])
    return SynthConfig(**d)


def model_config(cfg: dict, kind: str | None = None, lookup: int | None = None) -> ModelConfig:
    m = dict(cfg["model"])
    branch = BranchConfig(**m.pop("branch"))
    if kind is not None:
        m["kind"] = kind
    return ModelConfig(branch=branch, lookup=lookup or cfg["train"]["lookup"], seed=cfg["seed"], **m).resolved()


def train_config(cfg: dict, lookup: int | None = None, max_epochs: int | None = None) -> TrainConfig:
    t = dict(cfg["train"])
    if lookup is not None:
        t["lookup"] = lookup
    if max_epochs is not None:
        t["max_epochs"] = max_epochs
        if t["patience"] is not None and t["patience"] >= max_epochs:
            t["patience"] = None
    tc = TrainConfig(seed=cfg["seed"], **t)
    tc.validate()
    return tc


def load_dataset(cfg: dict, modalities=None):
    d = cfg["data"]
    if d["path"] is None:
        data = synth(synth_config(cfg))
        return data if modalities is None else data.select(["flow", *[m for m in modalities if m != "flow"]])
    kwargs = {"schema": d["schema"], "interval_minutes": d["interval_minutes"]}
    if modalities is not None:
        kwargs["modalities"] = modalities
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data = ingest_csv(d["path"], **kwargs)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return data


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(cfg: dict, what: str) -> list[str]:
    return [f"hmdlf {__version__} {what}", f"config {_echo(cfg)}"]


def cmd_synth(cfg: dict) -> int:
    data = synth(synth_config(cfg))
    out = Path(cfg["synth"]["output"])
    if not out.is_absolute():
        out = _out_dir(cfg) / out
    try:
        export_csv(data, out, comments=_header(cfg, "synthetic data"))
    except OSError as exc:
        raise UserError(f"cannot write {out}: {exc}") from None
    print(f"wrote {len(data)} records to {out}")
    return 0


def cmd_train(cfg: dict) -> int:
    mcfg = model_config(cfg)
    tcfg = train_config(cfg)
    data = load_dataset(cfg, mcfg.modalities)
    d = cfg["data"]
    prep = prepare(data, mcfg.modalities, tcfg.lookup, d["train_range"], d["test_range"], d["test_fraction"])
    model, report, record = fit_network(mcfg, tcfg, prep, log=lambda s: print(s, file=sys.stderr))
    report.config = cfg
    out = _out_dir(cfg)
    save_model(model, out / "model.hmdlf", meta={"config": cfg})
    (out / "train_report.tsv").write_text(report.to_text(), encoding="utf-8")
    (out / "train_timing.tsv").write_text(report.timing_text(), encoding="utf-8")
    from .plotting import plot_curves

    plot_curves([e["epoch"] for e in report.epochs], [e["train_mse"] for e in report.epochs],
                [e["val_mse"] for e in report.epochs], out / "train_curve.svg", report.best_epoch)
    print(f"{mcfg.kind}: best epoch {report.best_epoch}/{report.stopped_epoch}, "
          f"val MSE {report.best_val_mse:.6g}, test RMSE {record.rmse:.4f} over {record.count} samples")
    print(f"wrote {out / 'model.hmdlf'} and {out / 'train_report.tsv'}")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    ecfg = cfg["evaluate"]
    if not ecfg["model_path"]:
        raise UserError("evaluate.model_path is required")
    model = load_model(ecfg["model_path"])
    if model.scaler is None:
        raise UserError(f"{ecfg['model_path']} carries no scaler; it was not produced by 'train'")
    scaler = Scaler.from_dict(model.scaler)
    missing = [m for m in model.modalities if m not in scaler.ranges]
    if missing:
        raise UserError(f"model scaler lacks modality {missing[0]!r}")
    data = load_dataset(cfg, model.modalities)
    lo, hi = data.index_range(*ecfg["range"]) if ecfg["range"] else (0, len(data))
    norm = scaler.transform(data.select(model.modalities))
    test = window(norm, model.config.lookup, model.modalities, target_start=lo, target_stop=hi)
    prep = Prepared(scaler, test, test, model.config.lookup)
    record, actual, pred = score(prep, predict(model, prep.test), tag=model.config.kind,
                                 data_tag=str(cfg["data"]["path"] or "synthetic"))
    out = _out_dir(cfg)
    lines = [f"# {h}" for h in _header(cfg, "predictions")]
    lines.append("timestamp,actual,predicted")
    lines += [f"{format_time(t)},{a!r},{p!r}" for t, a, p in zip(prep.test.timestamps, actual.tolist(), pred.tolist())]
    (out / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    metrics = {"artifact_version": __version__, "config": cfg, "metrics": record.as_dict()}
    (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    from .plotting import plot_predictions

    plot_predictions(prep.test.timestamps, actual, pred, out / "predictions.svg",
                     title=f"{model.config.kind}  RMSE {record.rmse:.2f}")
    print(f"{record.model}: RMSE {record.rmse:.4f} over {record.count} samples; wrote {out / 'predictions.csv'}")
    return 0


def cmd_gradcheck(cfg: dict, corrupt: str | None = None) -> int:
    rows = run_gradcheck(corrupt=corrupt)
    print(format_table(rows), end="")
    return 0 if all(r.passed for r in rows) else 2


def _compare_cell(kind: str, cfg: dict, data, lookup: int, epochs: int | None) -> MetricsRecord:
    d = cfg["data"]
    if kind in SHALLOW:
        prep = prepare(data, ["flow", "speed", "journey_time"] if kind in ("lr", "ridge") else ["flow"],
                       lookup, d["train_range"], d["test_range"], d["test_fraction"])
        return run_shallow(kind, prep, cfg["compare"]["ridge_lambda"],
                           season_period(data, cfg["compare"]["season_days"]))
    mcfg = model_config(cfg, kind=kind, lookup=lookup)
    prep = prepare(data, mcfg.modalities, lookup, d["train_range"], d["test_range"], d["test_fraction"])
    return fit_network(mcfg, train_config(cfg, lookup, epochs), prep)[2]


def run_compare(cfg: dict, data=None, log=None) -> dict:
    """RMSE for every (model, lookup, epoch budget) cell; failures become NaN rows."""
    c = cfg["compare"]
    if data is None:
        data = load_dataset(cfg)
    epochs = c["epochs"] or [None]
    table = {}
    for kind in c["roster"]:
        row = {}
        for lookup in c["lookups"]:
            for ep in epochs:
                try:
                    rec = _compare_cell(kind, cfg, data, lookup, ep)
                    row[(lookup, ep)] = (rec.rmse, "")
                except (TrainingDivergedError, FloatingPointError, np.linalg.LinAlgError, DataError) as exc:
                    row[(lookup, ep)] = (float("nan"), f"{type(exc).__name__}: {exc}")
                if log:
                    log(f"{kind} lookup={lookup} epochs={ep}: {row[(lookup, ep)][0]:.4f}")
        table[kind] = row
    return table


def _setting(lookup, ep) -> str:
    return f"lookup={lookup}" + ("" if ep is None else f",epochs={ep}")


def cmd_compare(cfg: dict) -> int:
    for kind in cfg["compare"]["roster"]:
        if kind not in SHALLOW:
            model_config(cfg, kind=kind)  # fail fast on unknown kinds
    table = run_compare(cfg, log=lambda s: print(s, file=sys.stderr))
    c = cfg["compare"]
    epochs = c["epochs"] or [None]
    settings = [(lk, ep) for lk in c["lookups"] for ep in epochs]
    out = _out_dir(cfg)
    head = [f"# {h}" for h in _header(cfg, "comparison")]
    lines = head + ["model\t" + "\t".join(_setting(*s) for s in settings) + "\tnote"]
    for kind, row in table.items():
        notes = "; ".join(n for _, n in row.values() if n)
        cells = [("DIVERGED" if np.isnan(row[s][0]) else f"{row[s][0]:.4f}") for s in settings]
        lines.append(kind + "\t" + "\t".join(cells) + "\t" + notes)
    (out / "comparison.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines[len(head):]))

    from .plotting import plot_sweep

    if len(c["lookups"]) > 1:
        ep = epochs[0]
        sweep = head + ["model\t" + "\t".join(str(lk) for lk in c["lookups"])]
        sweep += [k + "\t" + "\t".join(repr(row[(lk, ep)][0]) for lk in c["lookups"]) for k, row in table.items()]
        (out / "lookup_sweep.tsv").write_text("\n".join(sweep) + "\n", encoding="utf-8")
        plot_sweep(c["lookups"], {k: [row[(lk, ep)][0] for lk in c["lookups"]] for k, row in table.items()},
                   out / "lookup_sweep.svg")
    if len(epochs) > 1:
        lk = c["lookups"][0]
        sweep = head + ["model\t" + "\t".join(str(e) for e in epochs)]
        sweep += [k + "\t" + "\t".join(repr(row[(lk, e)][0]) for e in epochs) for k, row in table.items()]
        (out / "epoch_sweep.tsv").write_text("\n".join(sweep) + "\n", encoding="utf-8")
        plot_sweep(epochs, {k: [row[(lk, e)][0] for e in epochs] for k, row in table.items()},
                   out / "epoch_sweep.svg", xlabel="max epochs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmdlf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hmdlf {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("synth", "write a synthetic multimodal CSV"),
                        ("train", "train a model, write model file and epoch report"),
                        ("evaluate", "score a model file on data, write predictions CSV"),
                        ("gradcheck", "finite-difference check of every backward pass"),
                        ("compare", "RMSE table over a model roster and lookup/epoch grids")]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", "-c", help="JSON config document")
        sp.add_argument("overrides", nargs="*", metavar="key=value", help="dotted-key overrides")
        if name == "gradcheck":
            sp.add_argument("--corrupt", choices=COMPONENTS, help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.corrupt)
        return cmd_compare(cfg)
    except (TrainingDivergedError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UserError, ConfigError, DataError, ModelFileError, FileNotFoundError, KeyError, TypeError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
