import json

import numpy as np
import pytest

from improvnet.corpus import WindowedDataset
from improvnet.model import (
    ModelBundle, TrainConfig, TrainingError, evaluate, evaluate_naive, make_cnn_spec,
    naive_predict, rmse_report, train,
)
from improvnet.neuralnet import forward


class TestTraining:
    def test_log_and_best_params(self, tiny_cnn, small_data):
        _, dva, _ = small_data
        log = tiny_cnn.log
        assert [e["epoch"] for e in log] == list(range(len(log)))
        assert set(log[0]) == {"epoch", "lr", "train_loss", "val_loss", "l2"}
        pred = forward(tiny_cnn.spec, tiny_cnn.params, dva.inputs)
        assert np.mean((pred - dva.targets) ** 2) == pytest.approx(tiny_cnn.best_val_loss, rel=1e-12)

    def test_deterministic(self, small_data):
        dtr, dva, scaler = small_data
        cfg = TrainConfig(epochs=1, seed=9)
        a = train(make_cnn_spec(), dtr, dva, cfg, scaler)
        b = train(make_cnn_spec(), dtr, dva, cfg, scaler)
        assert np.array_equal(a.params.data, b.params.data)

    def test_phase_switch_lowers_rate(self, small_data):
        dtr, dva, scaler = small_data
        # patience 0: the first non-improving epoch moves to the second rate
        b = train(make_cnn_spec(), dtr, dva, TrainConfig(epochs=12, patience=0, seed=1), scaler)
        rates = [e["lr"] for e in b.log]
        assert rates[0] == 1e-3
        assert rates == sorted(rates, reverse=True)

    def test_unscaled_data_rejected(self, small_data):
        dtr, dva, scaler = small_data
        raw = WindowedDataset(dtr.inputs, dtr.targets, scaled=False)
        with pytest.raises(TrainingError):
            train(make_cnn_spec(), raw, dva, TrainConfig(epochs=1), scaler)


class TestPersistence:
    @pytest.mark.parametrize("which", ["tiny_cnn", "tiny_rnn"])
    def test_save_load_bit_identical(self, which, request, tmp_path, small_data):
        bundle = request.getfixturevalue(which)
        path = tmp_path / "m.json"
        bundle.save(path)
        back = ModelBundle.load(path)
        assert np.array_equal(back.params.data, bundle.params.data)
        x = small_data[1].inputs[:20]
        assert np.array_equal(back.predict_scaled(x), bundle.predict_scaled(x))
        assert back.spec == bundle.spec
        d = json.loads(path.read_text())
        assert d["format"] == "improvnet-model"
        assert d["directory"][0]["layer"] == "conv"

    def test_rejects_foreign_file(self):
        with pytest.raises(ValueError):
            ModelBundle.from_dict({"format": "other"})


class TestEvaluation:
    def test_rmse_report_oracle(self):
        pred = np.zeros((2, 13))
        target = np.zeros((2, 13))
        target[0, 0] = 3.0
        target[1, 12] = 4.0
        r = rmse_report(pred, target)
        assert r.rmse_overall == pytest.approx(np.sqrt(25 / 26))
        assert r.rmse_p1 == pytest.approx(np.sqrt(4.5))
        assert r.rmse_ioi == pytest.approx(np.sqrt(8.0))
        assert r.row()[3:] == ["N.A.", "N.A."]

    def test_naive_repeats_last_event(self, rng):
        w = rng.normal(size=(4, 10, 13))
        assert np.array_equal(naive_predict(w), w[:, -1])

    def test_naive_raw_units(self, small_data):
        _, dva, scaler = small_data
        r = evaluate_naive(dva, scaler)
        x, y = scaler.invert(dva.inputs), scaler.invert(dva.targets)
        assert r.rmse_overall == pytest.approx(np.sqrt(np.mean((x[:, -1] - y) ** 2)))

    def test_model_report(self, tiny_cnn, small_data):
        r = evaluate(tiny_cnn, small_data[1])
        assert r.param_count == 7565
        assert r.validation_loss == pytest.approx(tiny_cnn.best_val_loss)
