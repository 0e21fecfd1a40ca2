"""Losses, Adam, the per-layer supervision scheme, and the training loop.

Multi-layer topologies are trained with one task loss per supervised
transformer layer plus one on the final head, mixed by per-topology weight
tables that always sum to exactly 1.0.  Weights follow an even split:
0.35 for the first stage, 0.35 for the second (halved across parallel
layers), 0.3 for the final head.  Single-layer topologies put all weight on
the final prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .config import ConfigError, TrainConfig
from .data import ProcessedSample
from .models import ForwardOutput, FusionModel, FusionTopology, build_model
from .tensor import Tape, Tensor, backward

BCE_EPS = 1e-7

DEFAULT_LOSS_WEIGHTS: dict[FusionTopology, list[float]] = {
    FusionTopology.ONE_STREAM: [1.0],
    FusionTopology.FACE_ONLY: [1.0],
    FusionTopology.POSE_ONLY: [1.0],
    FusionTopology.CROSS_ATTENTION: [1.0],
    FusionTopology.ONE_TO_ONE: [0.35, 0.35, 0.3],
    FusionTopology.ONE_TO_TWO: [0.35, 0.35 * 0.5, 0.35 * 0.5, 0.3],
    FusionTopology.TWO_TO_ONE: [0.35 * 0.5, 0.35 * 0.5, 0.35, 0.3],
    FusionTopology.CROSS_TO_ONE: [0.35 * 0.5, 0.35 * 0.5, 0.35, 0.3],
}


def loss_weights_for(topology: FusionTopology | str,
                     override: Optional[Sequence[float]] = None) -> list[float]:
    """Weight list over (supervised layers..., final head); must sum to 1.0."""
    weights = list(override) if override is not None else \
        list(DEFAULT_LOSS_WEIGHTS[FusionTopology(topology)])
    if sum(weights) != 1.0:
        raise ConfigError(f"loss weights must sum to exactly 1.0, got {weights}")
    return weights


def _label_array(y, shape) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64)
    if arr.shape == ():
        arr = np.full(shape, float(arr))
    if arr.shape != tuple(shape):
        raise ValueError(f"label shape {arr.shape} does not match prediction shape {shape}")
    return arr


def bce_loss(p: Tensor, y) -> Tensor:
    """Binary cross entropy, averaged over elements; p clamped away from {0, 1}."""
    p = T.as_tensor(p)
    y_arr = _label_array(y, p.shape)
    if not np.all((y_arr == 0.0) | (y_arr == 1.0)):
        raise ValueError(f"detection labels must be 0 or 1, got {np.unique(y_arr)}")
    pc = T.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    pos = T.mul(T.log(pc), Tensor(y_arr))
    negt = T.mul(T.log(T.add(T.neg(pc), 1.0)), Tensor(1.0 - y_arr))
    return T.neg(T.tmean(T.add(pos, negt)))


def mse_loss(pred: Tensor, y) -> Tensor:
    """Mean squared error over elements."""
    pred = T.as_tensor(pred)
    diff = T.sub(pred, Tensor(_label_array(y, pred.shape)))
    return T.tmean(T.mul(diff, diff))


def combined_loss(output: ForwardOutput, y, weights: Sequence[float], task: str) -> Tensor:
    """Task loss on every intermediate prediction and the final one, mixed by ``weights``.

    ``weights`` is ordered (supervised layers..., final); its length must be
    one more than the number of intermediates.
    """
    if len(weights) != len(output.intermediates) + 1:
        raise ConfigError(
            f"expected {len(output.intermediates) + 1} loss weights "
            f"({len(output.intermediates)} intermediates + final), got {len(weights)}")
    loss_fn = bce_loss if task == "detection" else mse_loss
    preds = [p for _, p in output.intermediates] + [output.final]
    total: Optional[Tensor] = None
    for w, pred in zip(weights, preds):
        term = T.scale(loss_fn(pred, y), w)
        total = term if total is None else T.add(total, term)
    return total


# -- Adam ------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment buffers and the shared step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params],
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState,
              lr: float, weight_decay: float = 0.0) -> None:
    """One bias-corrected Adam update; weight decay enters the gradient (coupled L2)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads, and optimizer state are misaligned")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        if weight_decay != 0.0:
            g = g + weight_decay * p.data
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


# -- evaluation --------------------------------------------------------------------

def predict(model: FusionModel, sample: ProcessedSample) -> float:
    out = model.forward(Tensor(sample.face_seq), Tensor(sample.pose_seq), training=False)
    return out.final.data.item()


def evaluate_metrics(model: FusionModel, samples: Sequence[ProcessedSample],
                     task: str) -> dict:
    """Accuracy at threshold 0.5 (detection) or mean squared error (agreement)."""
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    preds = np.array([predict(model, s) for s in samples])
    labels = np.array([s.label for s in samples])
    if task == "detection":
        value = float(np.mean((preds >= 0.5) == (labels == 1.0)))
        name = "accuracy"
    else:
        value = float(np.mean((preds - labels) ** 2))
        name = "mse"
    return {"metric_name": name, "value": value, "n": len(samples)}


# -- training loop -------------------------------------------------------------------

@dataclass
class TrainResult:
    model: FusionModel
    history: list[tuple[int, float, float]]
    best_epoch: int
    best_val_metric: float
    weights: list[float] = field(default_factory=list)


def run_training(corpus: dict[str, list[ProcessedSample]], config: TrainConfig) -> TrainResult:
    """Train one topology; returns the model restored to its best-validation epoch.

    Mini-batches are reshuffled every epoch from a seeded generator; after every
    epoch the validation metric decides whether to snapshot the parameters
    (higher accuracy / lower MSE wins; ties keep the earlier epoch).  The
    history holds one (epoch, train_loss, val_metric) row per epoch.
    """
    config.validate()
    train = corpus.get("train") or []
    val = corpus.get("validation") or []
    if not train or not val:
        raise ConfigError("training needs nonempty 'train' and 'validation' splits")
    if config.dtype != T.get_default_dtype().name:
        T.set_default_dtype(config.dtype)
    sample = train[0]
    if sample.face_seq.shape[1] != config.model.face_dim or \
            sample.pose_seq.shape[1] != config.model.pose_dim:
        raise ConfigError(
            f"corpus widths (face {sample.face_seq.shape[1]}, pose {sample.pose_seq.shape[1]}) "
            f"do not match model config ({config.model.face_dim}, {config.model.pose_dim})")

    model = build_model(config.topology, config.task, config.model, rng_seed=config.seed)
    weights = loss_weights_for(config.topology, config.loss_weights)
    params = model.parameters()
    state = AdamState.for_params(params, config.beta1, config.beta2, config.adam_eps)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])

    detection = config.task == "detection"
    best_metric = -np.inf if detection else np.inf
    best_epoch = 0
    best_params: list[np.ndarray] = [p.data.copy() for p in params]
    history: list[tuple[int, float, float]] = []

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        loss_sum, n_seen = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[lo:lo + config.batch_size]]
            with Tape() as tape:
                total: Optional[Tensor] = None
                for s in batch:
                    out = model.forward(Tensor(s.face_seq), Tensor(s.pose_seq),
                                        training=True, rng=dropout_rng)
                    loss = combined_loss(out, s.label, weights, config.task)
                    total = loss if total is None else T.add(total, loss)
                batch_loss = T.scale(total, 1.0 / len(batch))
            value = batch_loss.data.item()
            if not np.isfinite(value):
                raise RuntimeError(f"training diverged: non-finite loss at epoch {epoch}")
            backward(batch_loss, tape)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            adam_step(params, grads, state, config.learning_rate, config.weight_decay)
            for p in params:
                p.zero_grad()
            loss_sum += value * len(batch)
            n_seen += len(batch)
        train_loss = loss_sum / n_seen
        val_metric = evaluate_metrics(model, val, config.task)["value"]
        history.append((epoch, train_loss, val_metric))
        improved = val_metric > best_metric if detection else val_metric < best_metric
        if improved:
            best_metric = val_metric
            best_epoch = epoch
            best_params = [p.data.copy() for p in params]

    for p, snap in zip(params, best_params):
        p.data = snap
    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       best_val_metric=float(best_metric), weights=weights)


def write_history_csv(path: str | Path, history: Sequence[tuple[int, float, float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_loss,val_metric\n")
        for epoch, train_loss, val_metric in history:
            fh.write("%d,%.17g,%.17g\n" % (epoch, train_loss, val_metric))


def metrics_record(task: str, topology: str, split: str, metrics: dict) -> dict:
    return {"task": task, "topology": str(topology), "split": split,
            "metric_name": metrics["metric_name"], "value": metrics["value"],
            "n": metrics["n"]}


def write_metrics_json(path: str | Path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, sort_keys=True) + "\n", encoding="utf-8")
