import numpy as np
import pytest

from hmdlf.data import MultimodalDataset, SynthConfig, synth
from hmdlf.experiment import prepare
from hmdlf.model import BranchConfig, ModelConfig, build_baseline
from hmdlf.training import (AdamState, Scaler, TrainConfig, TrainingDivergedError, adam_step, evaluate_mse,
                            fit_scaler, predict, train)
from toys import MEMO_BRANCH, memorize_config, toy_model, toy_samples

# -- Adam --------------------------------------------------------------------


def test_adam_first_step_moves_by_lr():
    # bias correction makes the first step lr * g / (|g| + eps)
    p = {"w": np.array([1.0, -2.0, 0.5])}
    adam_step(AdamState(lr=1e-3), p, {"w": np.array([3.0, -0.2, 1e-2])})
    np.testing.assert_allclose(p["w"], [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3], rtol=0, atol=1e-9)


def test_adam_hand_second_step():
    s = AdamState(lr=0.1)
    p = {"w": np.array([0.0])}
    s.step(p, {"w": np.array([1.0])})
    s.step(p, {"w": np.array([-1.0])})
    m = 0.9 * 0.1 - 0.1
    v = 0.999 * 0.001 + 0.001
    expected = -0.1 / (1 + 1e-8) - 0.1 * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(p["w"], [expected], rtol=1e-12)


def test_adam_zero_gradient_is_a_no_op():
    p = {"w": np.array([[1.0, 2.0]])}
    s = AdamState()
    for _ in range(5):
        s.step(p, {"w": np.zeros((1, 2))})
    assert np.array_equal(p["w"], [[1.0, 2.0]])


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        AdamState().step({"w": np.zeros(2)}, {"w": np.zeros(3)})
    with pytest.raises(ValueError):
        AdamState().step({"w": np.zeros(2)}, {})


# -- scaler ------------------------------------------------------------------


def test_scaler_hand_case_and_round_trip():
    sc = fit_scaler(np.array([10.0, 20.0, 30.0]))
    np.testing.assert_array_equal(sc.apply([10.0, 20.0, 30.0]), [0.0, 0.5, 1.0])
    x = np.random.default_rng(0).uniform(-50, 80, size=100)
    assert np.max(np.abs(sc.invert(sc.apply(x)) - x)) <= 1e-12


def test_constant_series_maps_to_zero():
    sc = fit_scaler(np.full(5, 7.0))
    np.testing.assert_array_equal(sc.apply(np.full(5, 7.0)), 0.0)
    assert sc.invert(np.array([0.0]))[0] == 7.0


def test_scaler_dict_round_trip():
    sc = fit_scaler(synth(SynthConfig(days=2)))
    back = Scaler.from_dict(sc.to_dict())
    assert back.to_dict() == sc.to_dict()
    with pytest.raises(KeyError):
        sc.apply([1.0], "occupancy")


def test_scaler_fitted_on_training_records_only():
    ds = synth(SynthConfig(days=5, seed=1))
    before = prepare(ds, ["flow", "speed"], 20).scaler.to_dict()
    mutated = {k: v.copy() for k, v in ds.series.items()}
    n = len(ds)
    for k in mutated:
        mutated[k][int(n * 0.8):] *= 1000.0  # test period only
    after = prepare(MultimodalDataset(ds.timestamps, mutated), ["flow", "speed"], 20).scaler.to_dict()
    assert before == after


# -- training loop -----------------------------------------------------------


def test_frozen_validation_stops_at_one_plus_patience():
    s = toy_samples(n=40)
    model = toy_model()
    cfg = TrainConfig(batch_size=16, max_epochs=50, patience=4, lookup=8, lr=0.0, l2=0.0)
    model, rep = train(model, s, cfg)
    assert rep.stopped_epoch == 1 + cfg.patience
    assert rep.best_epoch == 1
    assert len({e["val_mse"] for e in rep.epochs}) == 1


def test_restored_weights_reproduce_best_val_mse_bit_exactly():
    s = toy_samples(n=40)
    cfg = TrainConfig(batch_size=8, max_epochs=60, patience=3, lookup=8, lr=5e-2, l2=0.0, seed=3)
    model, rep = train(toy_model(dropout=0.2), s, cfg)
    val = s.subset(slice(32, 40))
    assert rep.stopped_epoch - rep.best_epoch == cfg.patience or rep.stopped_epoch == cfg.max_epochs
    assert evaluate_mse(model, val) == rep.best_val_mse


def test_monotone_improvement_runs_to_max_epochs():
    # full-batch small steps on the validation set itself improve it every epoch
    s = toy_samples(n=24)
    cfg = TrainConfig(batch_size=64, max_epochs=12, patience=1, lookup=8, lr=1e-4, l2=0.0)
    _, rep = train(toy_model(), s, cfg, validation=s)
    vals = [e["val_mse"] for e in rep.epochs]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert rep.stopped_epoch == cfg.max_epochs == len(vals)


def test_memorises_a_tiny_set():
    s = toy_samples()
    model, _ = train(toy_model(branch=MEMO_BRANCH), s, memorize_config(), validation=s)
    rmse = np.sqrt(np.mean((predict(model, s) - s.targets) ** 2))
    assert rmse < 0.05 * np.std(s.targets)


def test_report_is_deterministic():
    s = toy_samples(n=40)
    cfg = TrainConfig(batch_size=8, max_epochs=5, patience=None, lookup=8, lr=1e-2, seed=11)
    a = train(toy_model(dropout=0.2), s, cfg)[1]
    b = train(toy_model(dropout=0.2), s, cfg)[1]
    assert a.to_text() == b.to_text()
    assert a.to_text().count("\n") > 5


def test_divergence_is_reported():
    s = toy_samples(n=16)
    s.targets[3] = np.inf
    with pytest.raises(TrainingDivergedError):
        train(toy_model(), s, TrainConfig(batch_size=16, max_epochs=2, patience=None, lookup=8))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(patience=300, max_epochs=300).validate()


def test_baseline_trains_and_predicts_in_unit_range():
    s = toy_samples(n=40, modalities=("flow",))
    model = build_baseline("gru", ModelConfig(lookup=8, branch=BranchConfig(hidden=8), seed=2))
    model, rep = train(model, s, TrainConfig(batch_size=8, max_epochs=30, patience=5, lookup=8, lr=1e-2))
    assert rep.best_val_mse < rep.epochs[0]["val_mse"] or rep.best_epoch == 1
    assert predict(model, s).shape == (40,)
