"""Adam optimisation, early stopping and top-k checkpoint tracking."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import DatasetSplit
from .kanformer import KanformerModel, classify
from .metrics import ScoreSet, TdcfParams, compute_eer, compute_min_tdcf
from .numerics import ConfigurationError, Parameter, backward, no_grad, ops

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 50
    patience: int = 7
    top_k: int = 5
    batch_size: int = 16
    seed: int = 0
    averaging: str = "metrics"

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        """``desk`` (defaults) or ``paper`` (learning rate 1e-6)."""
        presets = {"desk": {}, "paper": {"learning_rate": 1e-6}}
        if name not in presets:
            raise ConfigurationError(f"unknown training preset {name!r}")
        return cls(**{**presets[name], **overrides})

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def validate(self) -> "TrainConfig":
        bad = []
        if not self.learning_rate > 0:
            bad.append("learning_rate")
        if self.weight_decay < 0:
            bad.append("weight_decay")
        if self.patience < 1:
            bad.append("patience")
        if self.top_k < 1:
            bad.append("top_k")
        if self.max_epochs < 1:
            bad.append("max_epochs")
        if self.batch_size < 1:
            bad.append("batch_size")
        if self.averaging not in ("metrics", "weights"):
            bad.append("averaging")
        if bad:
            raise ConfigurationError(f"invalid train config fields: {', '.join(bad)}")
        return self


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Parameter], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update with decoupled weight decay.

    Gradients are read from ``p.grad``.  All gradients are checked before
    any parameter moves.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name or '<unnamed>'}")
    state.step += 1
    lr = cfg.learning_rate
    c1 = 1.0 - cfg.beta1**state.step
    c2 = 1.0 - cfg.beta2**state.step
    for i, p in enumerate(params):
        m = state.m.setdefault(i, np.zeros_like(p.data))
        v = state.v.setdefault(i, np.zeros_like(p.data))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * p.grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * p.grad * p.grad
        if cfg.weight_decay:
            p.data -= lr * cfg.weight_decay * p.data
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


# -- stopping and checkpoint bookkeeping --------------------------------------


class EarlyStopping:
    """Signals a stop once the monitored loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.bad_epochs = 0

    def update(self, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class Snapshot:
    epoch: int
    dev_eer: float
    dev_loss: float
    metrics: dict
    state: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def rank_key(self):
        return (self.dev_eer, self.dev_loss, self.epoch)


class TopK:
    """The ``k`` best snapshots by (dev EER, dev loss, epoch)."""

    def __init__(self, k: int):
        self.k = k
        self.items: list[Snapshot] = []

    def offer(self, snap: Snapshot) -> bool:
        self.items.append(snap)
        self.items.sort(key=Snapshot.rank_key)
        dropped = self.items[self.k :]
        del self.items[self.k :]
        return snap not in dropped


# -- evaluation ----------------------------------------------------------------


def class_weights(labels: np.ndarray, n_classes: int = 2) -> np.ndarray:
    """Weights ``N / (n_classes * N_c)``; all ones on a balanced set."""
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    if np.any(counts == 0):
        return np.ones(n_classes)
    return labels.size / (n_classes * counts)


def predict(model: KanformerModel, x: np.ndarray, batch_size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode logits and scores for a stacked feature array."""
    was_training = model.training
    model.eval()
    logits, scores = [], []
    with no_grad():
        for lo in range(0, len(x), batch_size):
            lg, sc = classify(model, x[lo : lo + batch_size])
            logits.append(lg.data)
            scores.append(sc.data)
    model.train(was_training)
    return np.concatenate(logits), np.concatenate(scores)


def score_set(ids, labels: np.ndarray, scores: np.ndarray) -> ScoreSet:
    s = ScoreSet()
    for utt, lab, sc in zip(ids, labels, scores):
        (s.bonafide if lab == 0 else s.spoof).append((utt, float(sc)))
    return s


def evaluate_split(model, x, y, ids, weights, tdcf: TdcfParams, batch_size: int = 32) -> dict:
    logits, scores = predict(model, x, batch_size)
    loss = ops.cross_entropy(ops.as_tensor(logits), y, weights).item()
    out = {"loss": loss}
    ss = score_set(ids, y, scores)
    if ss.bonafide and ss.spoof:
        out["eer"] = compute_eer(ss)[0]
        out["min_tdcf"] = compute_min_tdcf(ss, tdcf)[0]
    return out


# -- training loop -----------------------------------------------------------------


@dataclass
class TrainReport:
    epochs: list[dict]
    stopped_epoch: int
    stop_reason: str
    top_k: list[dict]
    averaged: dict
    weight_averaged: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(**d)


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def train_loop(
    model: KanformerModel,
    splits: dict[str, DatasetSplit],
    cfg: TrainConfig,
    t_fix: int,
    tdcf: TdcfParams | None = None,
) -> tuple[TrainReport, list[Snapshot]]:
    """Train until early stopping or ``max_epochs``.

    Returns the report and the final top-k snapshots, best first.  On
    return the model holds the best snapshot's weights.
    """
    cfg.validate()
    tdcf = tdcf or TdcfParams()
    for role in ("train", "dev"):
        if role not in splits or len(splits[role]) == 0:
            raise ConfigurationError(f"{role} split is empty")
    x_train, y_train = splits["train"].arrays(t_fix)
    weights = class_weights(y_train)
    held_out = {}
    for role in ("dev", "eval"):
        if role in splits and len(splits[role]):
            x, y = splits[role].arrays(t_fix)
            held_out[role] = (x, y, [r.id for r in splits[role].records])

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    adam = AdamState()
    stopper = EarlyStopping(cfg.patience)
    topk = TopK(cfg.top_k)
    history: list[dict] = []
    stop_reason = "max_epochs"

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = rng.permutation(len(x_train))
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            model.zero_grad()
            logits, _ = classify(model, x_train[idx])
            loss = ops.cross_entropy(logits, y_train[idx], weights)
            backward(loss)
            adam_step(params, adam, cfg)
            losses.append(loss.item())

        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        for role, (x, y, ids) in held_out.items():
            for key, value in evaluate_split(model, x, y, ids, weights, tdcf).items():
                row[f"{role}_{key}"] = value
        history.append(row)
        log.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in row.items() if k != "epoch"})

        dev_eer = row.get("dev_eer", np.inf)
        topk.offer(Snapshot(epoch, dev_eer, row["dev_loss"], row, {k: v.copy() for k, v in model.state_dict().items()}))
        if stopper.update(row["dev_loss"]):
            stop_reason = "early_stopping"
            break

    best = topk.items
    averaged = {
        key: _mean([s.metrics.get(key) for s in best])
        for key in ("dev_loss", "dev_eer", "dev_min_tdcf", "eval_loss", "eval_eer", "eval_min_tdcf")
        if any(key in s.metrics for s in best)
    }
    weight_avg = None
    if cfg.averaging == "weights":
        avg_state = {k: np.mean([s.state[k] for s in best], axis=0) for k in best[0].state}
        model.load_state_dict(avg_state)
        weight_avg = {}
        for role, (x, y, ids) in held_out.items():
            for key, value in evaluate_split(model, x, y, ids, weights, tdcf).items():
                weight_avg[f"{role}_{key}"] = value
    model.load_state_dict(best[0].state)
    model.eval()
    report = TrainReport(
        epochs=history,
        stopped_epoch=history[-1]["epoch"],
        stop_reason=stop_reason,
        top_k=[s.metrics for s in best],
        averaged=averaged,
        weight_averaged=weight_avg,
    )
    return report, best
