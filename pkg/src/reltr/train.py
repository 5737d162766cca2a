"""Joint cross-entropy objective and the minibatch SGD training loop."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .evaluation import evaluate
from .model import PREDCLS, SGCLS, TASKS, ForwardOutput, RelationTransformer
from .optim import PlateauState, plateau_update, sgd_step
from .rng import Rng
from .tensor import Tensor, cross_entropy, zero_grads

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    patience: int = 3
    decay_factor: float = 0.1
    dropout: float = 0.25
    seed: int = 42
    object_weight: float = 1.0
    predicate_weight: float = 1.0
    mode: str = PREDCLS
    val_ks: tuple = (20, 50, 100)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 are required")
        if self.mode not in TASKS:
            raise ValueError(f"mode must be one of {TASKS}")
        self.val_ks = tuple(int(k) for k in self.val_ks)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["val_ks"] = list(self.val_ks)
        return d


def relation_targets(sample, directed: np.ndarray) -> np.ndarray:
    """Gt predicate per ordered pair; 0 (background) where no triple exists.

    When a pair carries several gt predicates the first listed one is the target.
    """
    gt = {}
    for s, r, o in sample.gt_triples:
        gt.setdefault((s, o), r)
    return np.array([gt.get((int(s), int(o)), 0) for s, o in directed], dtype=np.int64)


def loss(out: ForwardOutput, sample, mode: str, object_weight: float = 1.0,
         predicate_weight: float = 1.0) -> Tensor:
    """Weighted object + predicate cross-entropy. The object term is dropped in PREDCLS."""
    total = Tensor(0.0)
    if mode == SGCLS and object_weight:
        total = total + cross_entropy(out.object_logits, sample.gt_classes()) * object_weight
    if out.relation_logits is not None and predicate_weight:
        targets = relation_targets(sample, out.directed)
        total = total + cross_entropy(out.relation_logits, targets) * predicate_weight
    return total


def mean_loss(model: RelationTransformer, samples: Sequence, cfg: TrainConfig) -> float:
    """Average per-sample loss in inference mode (no dropout)."""
    values = [loss(model.forward(s, cfg.mode), s, cfg.mode, cfg.object_weight, cfg.predicate_weight).item()
              for s in samples]
    return float(np.mean(values)) if values else 0.0


def train(model: RelationTransformer, train_samples: Sequence, val_samples: Sequence,
          cfg: TrainConfig, on_epoch: Callable[[dict], None] | None = None):
    """Minibatch SGD with reduce-on-plateau driven by validation mean recall.

    The model ends up holding the parameters of the best validation epoch
    (initial parameters when ``epochs == 0``).  Returns the per-epoch log.
    """
    if not train_samples:
        raise ValueError("training split is empty")
    model.cfg.dropout = cfg.dropout
    params = model.parameters()
    rng = Rng(cfg.seed)
    sched = PlateauState(learning_rate=cfg.lr, patience=cfg.patience,
                         decay_factor=cfg.decay_factor, mode="max")
    best_state = copy.deepcopy(model.state_dict())
    best_metric = -math.inf
    history = []
    order_rng = rng.spawn(1)
    drop_rng = rng.spawn(2)
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(len(train_samples))
        losses = []
        for b_idx, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_samples[i] for i in order[start:start + cfg.batch_size]]
            zero_grads(params)
            for sample in batch:
                out = model.forward(sample, cfg.mode, training=True, rng=drop_rng)
                value = loss(out, sample, cfg.mode, cfg.object_weight, cfg.predicate_weight)
                if not math.isfinite(value.item()):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, batch {b_idx}, sample {sample.sample_id}")
                losses.append(value.item())
                if value.requires_grad:
                    (value * (1.0 / len(batch))).backward()
            sgd_step(params, sched.learning_rate)
        zero_grads(params)
        lr_used = sched.learning_rate
        if val_samples:
            report = evaluate(model, val_samples, cfg.val_ks, tasks=(cfg.mode,))
            metric = report.mean
        else:
            metric = -float(np.mean(losses))
        plateau_update(sched, metric)
        record = {"epoch": epoch, "loss": float(np.mean(losses)), "val_recall": metric, "lr": lr_used}
        history.append(record)
        log.info("epoch %d loss %.4f val %.4f lr %.2e", epoch, record["loss"], metric, lr_used)
        if on_epoch:
            on_epoch(record)
        if metric > best_metric:
            best_metric = metric
            best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    return history


def format_log_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True)
