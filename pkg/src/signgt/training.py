"""Cross-entropy, AdamW, and the full-batch training loop."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import GraphDataset, NodeDataset
from .errors import InvalidInputError, InvalidParameterError, NonFiniteError, TrainingFailure
from .model import ModelConfig, SignGTModel, model_forward

logger = logging.getLogger(__name__)

# hyperparameter grid searched for SignGT
GRID = {
    "num_layers": (1, 2, 3),
    "d_model": (128, 256, 512),
    "k": (1, 2, 3, 4, 5),
    "learning_rate": (1e-2, 5e-3, 1e-3),
    "weight_decay": (1e-4, 5e-4, 1e-5),
    "dropout_rate": (0.1, 0.3, 0.5),
}

Dataset = Union[NodeDataset, GraphDataset]


@dataclass
class TrainConfig:
    learning_rate: float = 5e-3
    weight_decay: float = 5e-4
    dropout_rate: Optional[float] = None
    max_epochs: int = 500
    patience: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise InvalidParameterError("learning_rate must be > 0 and weight_decay >= 0")
        if self.max_epochs < 1 or self.patience < 1:
            raise InvalidParameterError("max_epochs and patience must be >= 1")
        if self.dropout_rate is not None and not 0 <= self.dropout_rate < 1:
            raise InvalidParameterError("dropout_rate must lie in [0, 1)")


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimizerState":
        return cls(
            [np.zeros(p.shape) for p in params],
            [np.zeros(p.shape) for p in params],
            0,
            beta1,
            beta2,
            eps,
        )


@dataclass
class RunHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    best_epoch: int = 0
    epoch_seconds: list = field(default_factory=list, compare=False)

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_acc(self) -> float:
        return self.val_acc[self.best_epoch - 1]

    @property
    def best_test_acc(self) -> float:
        return self.test_acc[self.best_epoch - 1]

    def records(self) -> list:
        return [
            {
                "epoch": i + 1,
                "train_loss": self.train_loss[i],
                "train_acc": self.train_acc[i],
                "val_acc": self.val_acc[i],
                "test_acc": self.test_acc[i],
                "seconds": self.epoch_seconds[i] if i < len(self.epoch_seconds) else None,
            }
            for i in range(self.epochs)
        ]


def cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean negative log-likelihood over the rows listed in ``mask`` (all rows if None)."""
    labels = np.asarray(labels, dtype=np.int64)
    if mask is None:
        mask = np.arange(logits.shape[0])
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise InvalidInputError("cross_entropy over an empty mask")
    if mask.min() < 0 or mask.max() >= logits.shape[0]:
        raise InvalidInputError("mask index out of range")
    rows = ad.take_rows(logits, mask)
    picked = ad.pick(ad.log_softmax_rows(rows), labels[mask])
    return ad.neg(ad.mean_all(picked))


def adamw_step(params: Sequence[Tensor], grads, state: OptimizerState, lr: float, wd: float) -> OptimizerState:
    """One AdamW update in place; weight decay is decoupled from the moment update."""
    grads = [np.zeros(p.shape) if g is None else np.asarray(g) for p, g in zip(params, grads)]
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient; step aborted")
    state.step += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data *= 1.0 - lr * wd
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def accuracy(logits: np.ndarray, labels) -> float:
    # np.argmax breaks ties by the lowest index
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def predict_logits(model: SignGTModel, dataset: Dataset) -> np.ndarray:
    if isinstance(dataset, GraphDataset):
        return np.concatenate([model_forward(model, g, "eval").data for g in dataset.graphs])
    return model_forward(model, dataset.graph, "eval").data


def _labels(dataset: Dataset) -> np.ndarray:
    return dataset.labels if isinstance(dataset, GraphDataset) else dataset.graph.labels


def evaluate(model: SignGTModel, dataset: Dataset, split_part: str = "test", logits=None) -> float:
    idx = dataset.split.part(split_part)
    if len(idx) == 0:
        raise InvalidInputError(f"split part {split_part!r} is empty")
    if logits is None:
        logits = predict_logits(model, dataset)
    return accuracy(logits[idx], _labels(dataset)[idx])


def _train_loss(model, dataset, rng) -> tuple:
    tape = Tape()
    with tape:
        if isinstance(dataset, GraphDataset):
            train = dataset.split.train
            logits = ad.concat_rows(
                [model_forward(model, dataset.graphs[i], "train", rng) for i in train]
            )
            loss = cross_entropy(logits, dataset.labels[train])
        else:
            logits = model_forward(model, dataset.graph, "train", rng)
            loss = cross_entropy(logits, dataset.graph.labels, dataset.split.train)
    return loss, tape


def fit(model: SignGTModel, dataset: Dataset, config: Optional[TrainConfig] = None):
    """Train with AdamW, keep the best-validation parameters, stop on patience.

    Returns ``(model, history)``; the model is updated in place.
    """
    config = config or TrainConfig()
    if config.dropout_rate is not None:
        model.config.dropout = config.dropout_rate
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    params = model.parameters()
    state = OptimizerState.for_params(params, config.beta1, config.beta2, config.eps)
    labels = _labels(dataset)
    split = dataset.split
    history = RunHistory()
    best_state = model.state_dict()
    best_val = -1.0

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        try:
            model.zero_grad()
            loss, tape = _train_loss(model, dataset, rng)
            ad.backward(loss, tape)
            adamw_step(params, [p.grad for p in params], state, config.learning_rate, config.weight_decay)
            logits = predict_logits(model, dataset)
        except NonFiniteError as exc:
            raise TrainingFailure(epoch, f"training diverged at epoch {epoch}: {exc}") from exc
        history.train_loss.append(loss.item())
        history.train_acc.append(accuracy(logits[split.train], labels[split.train]))
        history.val_acc.append(
            accuracy(logits[split.val], labels[split.val]) if len(split.val) else 0.0
        )
        history.test_acc.append(
            accuracy(logits[split.test], labels[split.test]) if len(split.test) else 0.0
        )
        history.epoch_seconds.append(time.perf_counter() - t0)
        if history.val_acc[-1] > best_val:
            best_val = history.val_acc[-1]
            history.best_epoch = epoch
            best_state = model.state_dict()
        elif epoch - history.best_epoch >= config.patience:
            logger.debug("early stop at epoch %d (best %d)", epoch, history.best_epoch)
            break

    model.load_state_dict(best_state)
    model.zero_grad()
    return model, history


def iter_grid(grid: Optional[dict] = None):
    """Yield dicts over the cartesian product of ``grid`` (values must come from GRID)."""
    grid = dict(GRID if grid is None else grid)
    for key, values in grid.items():
        if key not in GRID:
            raise InvalidParameterError(f"unknown grid key {key!r}")
        bad = [v for v in values if v not in GRID[key]]
        if bad:
            raise InvalidParameterError(f"grid values {bad} for {key} are outside {GRID[key]}")
    keys = list(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, combo))


def split_grid_point(point: dict) -> tuple:
    model_keys = {"num_layers", "d_model", "k"}
    model_kw = {k: v for k, v in point.items() if k in model_keys}
    train_kw = {k: v for k, v in point.items() if k not in model_keys}
    return model_kw, train_kw


def grid_search(make_config, dataset: Dataset, train_config: TrainConfig, grid: Optional[dict] = None, seeds=(0,)):
    """Pick the grid point with the best mean validation accuracy over ``seeds``.

    ``make_config(**model_kw)`` builds a ModelConfig. Returns
    ``(best_point, best_mean_val)``.
    """
    best, best_val = None, -1.0
    for point in iter_grid(grid):
        model_kw, train_kw = split_grid_point(point)
        vals = []
        for seed in seeds:
            tc = replace(train_config, seed=seed, **train_kw)
            model = SignGTModel.init(make_config(**model_kw), seed)
            _, hist = fit(model, dataset, tc)
            vals.append(hist.best_val_acc)
        mean_val = float(np.mean(vals))
        logger.info("grid %s -> val %.4f", point, mean_val)
        if mean_val > best_val:
            best, best_val = point, mean_val
    return best, best_val


def default_model_config(dataset: Dataset, **kw) -> ModelConfig:
    if isinstance(dataset, GraphDataset):
        in_dim = dataset.graphs[0].features.shape[1]
        kw.setdefault("task", "graph")
    else:
        in_dim = dataset.graph.features.shape[1]
    return ModelConfig(in_dim=in_dim, num_classes=dataset.num_classes, **kw)
