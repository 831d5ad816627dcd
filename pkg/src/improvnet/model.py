"""The two event-prediction architectures, the naive baseline, training and evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import RobustScaler, WindowedDataset
from .events import IOI, VECTOR_SIZE
from .neuralnet import (
    LayerSpec, NetworkSpec, ParameterStore, TrainState, backward, forward,
    forward_train, init_params, l2_penalty, mse_loss, optimizer_step, param_count,
)

logger = logging.getLogger(__name__)

FORMAT = "improvnet-model"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


def make_cnn_spec(lags: int = 10, l2: float = 0.01) -> NetworkSpec:
    """Dilated CNN: 64 filters, kernel 4, dilation 8, then pool, flatten, dense.

    With 10 lags this has 7565 parameters: 3392 in the convolution and
    4173 in the 320-to-13 dense output.
    """
    return NetworkSpec((
        LayerSpec("conv1d", units=64, kernel=4, dilation=8, padding="causal",
                  activation="relu", dropout=0.5, name="conv"),
        LayerSpec("maxpool1d", pool=2, name="pool"),
        LayerSpec("flatten", name="flatten"),
        LayerSpec("dense", units=VECTOR_SIZE, name="out"),
    ), (lags, VECTOR_SIZE), l2)


def make_cnn_rnn_spec(lags: int = 10, l2: float = 0.01) -> NetworkSpec:
    """Dilated CNN (32 filters) feeding a 32-unit LSTM; 10445 parameters."""
    return NetworkSpec((
        LayerSpec("conv1d", units=32, kernel=4, dilation=8, padding="causal",
                  activation="relu", dropout=0.5, name="conv"),
        LayerSpec("lstm", units=32, dropout=0.5, recurrent_dropout=0.5, name="lstm"),
        LayerSpec("dense", units=VECTOR_SIZE, name="out"),
    ), (lags, VECTOR_SIZE), l2)


ARCHITECTURES = {"cnn": make_cnn_spec, "cnn-rnn": make_cnn_rnn_spec}


def naive_predict(window) -> np.ndarray:
    """Predict that the next event repeats the last one."""
    return np.array(np.asarray(window, dtype=float)[..., -1, :])


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr_phases: tuple[float, ...] = (1e-3, 1e-4)
    patience: int = 20
    seed: int = 0


@dataclass
class ModelBundle:
    spec: NetworkSpec
    params: ParameterStore
    scaler: RobustScaler
    log: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def predict_scaled(self, windows) -> np.ndarray:
        return forward(self.spec, self.params, windows)

    def predict(self, windows) -> np.ndarray:
        """Predictions in raw units from raw-unit windows."""
        return self.scaler.invert(self.predict_scaled(self.scaler.apply(windows)))

    @property
    def best_val_loss(self) -> float:
        return min(e["val_loss"] for e in self.log)

    def to_dict(self) -> dict:
        names = self.spec.layer_names()
        directory = [{"layer": n, "params": {k: {"offset": o, "shape": list(s)} for k, (o, s) in e.items()}}
                     for n, e in zip(names, self.params.layout)]
        return {
            "format": FORMAT,
            "format_version": FORMAT_VERSION,
            "tool_version": __version__,
            "spec": self.spec.to_dict(),
            "directory": directory,
            "weights": [float(w) for w in self.params.data],
            "scaler": self.scaler.to_dict(),
            "log": self.log,
            "metadata": self.metadata,
        }

    def save(self, path) -> None:
        # json writes floats with repr, which round-trips float64 exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> ModelBundle:
        if d.get("format") != FORMAT:
            raise ValueError("not a model file")
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model file version {d.get('format_version')}")
        spec = NetworkSpec.from_dict(d["spec"])
        params = ParameterStore(spec, np.array(d["weights"], dtype=np.float64))
        return cls(spec, params, RobustScaler.from_dict(d["scaler"]), d["log"], d["metadata"])

    @classmethod
    def load(cls, path) -> ModelBundle:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _val_loss(spec, params, data: WindowedDataset, batch: int = 1024) -> float:
    total = 0.0
    for s in range(0, len(data), batch):
        pred = forward(spec, params, data.inputs[s:s + batch])
        total += float(np.sum((pred - data.targets[s:s + batch]) ** 2))
    return total / data.targets.size


def train(spec: NetworkSpec, train_data: WindowedDataset, val_data: WindowedDataset,
          cfg: TrainConfig, scaler: RobustScaler, metadata: dict | None = None) -> ModelBundle:
    """Fit ``spec`` with sequential minibatches and early stopping.

    Batches are taken in corpus order. Training starts at the first
    learning rate; after ``patience`` epochs without a new validation
    minimum it restores the best parameters and moves to the next rate,
    and after the last rate it stops. The returned bundle holds the
    parameters from the epoch with the lowest validation loss.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise TrainingError("empty training or validation dataset")
    if not (train_data.scaled and val_data.scaled):
        raise TrainingError("datasets must be scaled with the bundle's scaler")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(spec, int(rng.integers(2**31)))
    state = TrainState.for_params(params, lr=cfg.lr_phases[0], seed=cfg.seed)
    phase = 0
    best = math.inf
    best_data = params.data.copy()
    wait = 0
    log: list[dict] = []
    n = len(train_data)
    for epoch in range(cfg.epochs):
        losses = []
        for s in range(0, n, cfg.batch_size):
            x = train_data.inputs[s:s + cfg.batch_size]
            y = train_data.targets[s:s + cfg.batch_size]
            out, cache = forward_train(spec, params, x, rng)
            loss, dout = mse_loss(out, y)
            grads = backward(spec, params, cache, dout)
            optimizer_step(state, params, grads)
            losses.append(loss * len(y))
        train_loss = sum(losses) / n
        val_loss = _val_loss(spec, params, val_data)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        log.append({"epoch": epoch, "lr": state.lr, "train_loss": train_loss,
                    "val_loss": val_loss, "l2": l2_penalty(params)})
        logger.info("epoch %d lr %.0e train %.5f val %.5f", epoch, state.lr, train_loss, val_loss)
        if val_loss < best:
            best, best_data, wait = val_loss, params.data.copy(), 0
            continue
        wait += 1
        if wait > cfg.patience:
            if phase + 1 >= len(cfg.lr_phases):
                break
            phase += 1
            params.data[:] = best_data
            params.version += 1
            state = TrainState.for_params(params, lr=cfg.lr_phases[phase], seed=cfg.seed)
            wait = 0
    params.data[:] = best_data
    params.version += 1
    meta = {"seed": cfg.seed, "tool_version": __version__, "param_count": param_count(spec),
            "train_config": {"epochs": cfg.epochs, "batch_size": cfg.batch_size,
                             "lr_phases": list(cfg.lr_phases), "patience": cfg.patience}}
    meta.update(metadata or {})
    return ModelBundle(spec, params, scaler, log, meta)


@dataclass
class EvalReport:
    rmse_overall: float
    rmse_ioi: float
    rmse_p1: float
    validation_loss: float | None
    param_count: int | None

    def row(self) -> list:
        vl = "N.A." if self.validation_loss is None else f"{self.validation_loss:.4f}"
        pc = "N.A." if self.param_count is None else str(self.param_count)
        return [f"{self.rmse_overall:.2f}", f"{self.rmse_ioi:.2f}", f"{self.rmse_p1:.2f}", vl, pc]


def rmse_report(pred, target, validation_loss=None, n_params=None) -> EvalReport:
    err = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return EvalReport(
        rmse_overall=float(np.sqrt(np.mean(err ** 2))),
        rmse_ioi=float(np.sqrt(np.mean(err[:, IOI] ** 2))),
        rmse_p1=float(np.sqrt(np.mean(err[:, 0] ** 2))),
        validation_loss=validation_loss,
        param_count=n_params,
    )


def evaluate(bundle: ModelBundle, val_data: WindowedDataset) -> EvalReport:
    """RMSE in raw units plus validation loss in scaled units.

    ``val_data`` may be scaled (with the bundle's scaler) or raw.
    """
    if val_data.scaled:
        xs, ys = val_data.inputs, val_data.targets
    else:
        xs, ys = bundle.scaler.apply(val_data.inputs), bundle.scaler.apply(val_data.targets)
    pred_s = np.concatenate([bundle.predict_scaled(xs[s:s + 1024]) for s in range(0, len(xs), 1024)])
    val_loss = float(np.mean((pred_s - ys) ** 2))
    return rmse_report(bundle.scaler.invert(pred_s), bundle.scaler.invert(ys),
                       val_loss, param_count(bundle.spec))


def evaluate_naive(val_data: WindowedDataset, scaler: RobustScaler | None = None) -> EvalReport:
    xs, ys = val_data.inputs, val_data.targets
    if val_data.scaled:
        if scaler is None:
            raise ValueError("a scaler is needed to unscale a scaled dataset")
        xs, ys = scaler.invert(xs), scaler.invert(ys)
    return rmse_report(naive_predict(xs), ys)
