import numpy as np
import pytest

import sleepguard as sg


def test_model_shapes_and_prediction():
    m = sg.build_paper_model(seed=1)
    assert m.parameter_count == 1026989
    p = m.predict(np.zeros((100, 100)))
    assert 0.0 < p < 1.0
    again = sg.Model.from_bytes(m.to_bytes())
    x = np.random.default_rng(0).random((100, 100))
    assert again.predict(x) == m.predict(x)


def test_fgsm_stays_in_budget():
    m = sg.build_paper_model(seed=2)
    x = np.random.default_rng(1).random((100, 100))
    r = sg.attack(m, x, sg.CLOSED, family="fgsm", epsilon=0.05)
    delta = r["adversarial"] - x
    assert np.abs(delta).max() <= 0.05 + 1e-12
    assert r["adversarial"].min() >= 0.0 and r["adversarial"].max() <= 1.0
    zero = sg.attack(m, x, sg.CLOSED, family="fgsm", epsilon=0.0)
    assert np.array_equal(zero["adversarial"], x)


def test_metrics_and_tie_rule():
    m = sg.compute_metrics([0.5, 0.2, 0.9, 0.1], [1, 0, 0, 1])
    assert (m["tp"], m["fp"], m["tn"], m["fn"]) == (1, 1, 1, 1)
    assert m["accuracy"] == 0.5


def test_augment_flip_twice_is_identity():
    x = np.random.default_rng(2).random((10, 10))
    assert np.array_equal(sg.augment(sg.augment(x, flip=True), flip=True), x)
    y = sg.random_augment(x, seed=3)
    assert y.shape == x.shape and y.min() >= 0.0 and y.max() <= 1.0


def test_tiny_experiment_row():
    cfg = {"name": "py", "train_size": 8, "val_size": 4, "test_size": 4, "epochs": 1, "adv_epochs": 1,
           "attack": "fgsm", "seed": 3}
    row = sg.run_experiment(cfg)
    assert row["status"] == "ok"
    assert row["before"] is not None and row["after"] is not None
    assert row["config_hash"] == sg.config_hash(cfg)
    with pytest.raises(sg.ConfigError):
        sg.config_hash({"not_a_key": 1})


def test_dataset_round_trip(tmp_path):
    d = sg.generate_synthetic(4, style="face", seed=5)
    assert len(d) == 8
    d.save(tmp_path / "d")
    back = sg.load_directory(tmp_path / "d")
    assert back.ids == d.ids
    assert np.abs(back.image(0) - d.image(0)).max() <= 0.5 / 255 + 1e-12
    with pytest.raises(sg.DataError):
        sg.load_directory(tmp_path / "missing")
