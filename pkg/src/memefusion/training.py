"""Multi-label training: weighted BCE, AdamW with linear warmup, early stopping."""

from __future__ import annotations

import copy
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .config import default_seed, defaults
from .data_ingest import LABEL_NAMES
from .evaluation import PredictionSet, decide, round_floats, weighted_f1
from .features import Example, collate
from .model import FusionClassifier

log = logging.getLogger(__name__)

TASKS = ("A", "B", "joint")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    warmup_steps: int = 150
    weight_decay: float = 0.01
    batch_size: int = 16
    max_epochs: int = 30
    patience: int = 2
    seed: int = 0
    split_seed: int | None = None
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    oversample: bool = False
    oversample_ratio: float = 1.0
    loss_weighting: bool = True
    task: str = "joint"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    threshold: float = 0.5
    target_loss: float | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.split_ratios = tuple(self.split_ratios)
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.warmup_steps < 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("warmup_steps >= 0, batch_size >= 1 and max_epochs >= 1 are required")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.oversample and self.loss_weighting:
            warnings.warn("both oversampling and loss weighting are enabled", stacklevel=2)

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "TrainConfig":
        """Shipped defaults for one model variant, then ``overrides``."""
        table = defaults()["train"]
        values = {**table["common"], **table[variant]}
        values.setdefault("seed", default_seed())
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_json(cls, path: str | Path, variant: str | None = None, **overrides) -> "TrainConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"{path}: unknown training options {sorted(unknown)}")
        if variant is None:
            return cls(**{**data, **{k: v for k, v in overrides.items() if v is not None}})
        return cls.for_variant(variant, **{**data, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# loss pieces


def class_weights(counts: Mapping[str, int] | Sequence[int], n_records: int) -> np.ndarray:
    """Positive-term weight ``(n - n_c) / n_c`` per label."""
    if isinstance(counts, Mapping):
        names = [k for k in LABEL_NAMES if k in counts]
        values = np.array([counts[k] for k in names], dtype=np.float64)
    else:
        names = [f"label_{k}" for k in range(len(counts))]
        values = np.asarray(counts, dtype=np.float64)
    for name, c in zip(names, values):
        if c <= 0:
            raise ValueError(
                f"label {name!r} has no positive examples; loss weighting is undefined, "
                "use oversampling or drop the label"
            )
    return (n_records - values) / values


def weighted_bce(logits: torch.Tensor, labels: torch.Tensor, weights) -> torch.Tensor:
    """Mean of ``-[w y log s(z) + (1 - y) log(1 - s(z))]`` from logits.

    Uses ``log s(z) = -softplus(-z)`` and ``log(1 - s(z)) = -softplus(z)``.
    """
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=logits.dtype)
    weights = torch.as_tensor(weights, dtype=logits.dtype)
    if logits.shape != labels.shape:
        raise ValueError(f"logits {tuple(logits.shape)} and labels {tuple(labels.shape)} differ")
    if not torch.isfinite(logits).all():
        raise FloatingPointError("non-finite logits")
    per = weights * labels * torch.nn.functional.softplus(-logits) + (1 - labels) * torch.nn.functional.softplus(logits)
    return per.mean()


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup from 0 to ``lr``, constant afterwards."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if config.warmup_steps == 0 or step >= config.warmup_steps:
        return config.lr
    return config.lr * step / config.warmup_steps


def oversample(
    records: Sequence,
    seed: int = 0,
    ratio: float = 1.0,
    key: Callable | None = None,
) -> list:
    """Duplicate minority-type records until every type label reaches
    ``ratio`` times the largest type count.

    Duplicates are drawn with replacement and appended after the originals.
    ``key`` maps an item to its four type bits (defaults to ``.types``).
    """
    key = key or (lambda r: r.types)
    bits = np.array([list(key(r)) for r in records], dtype=np.int64).reshape(len(records), -1)
    counts = bits.sum(axis=0)
    if (counts <= 0).any():
        raise ValueError("every type label needs at least one positive record to oversample")
    target = math.ceil(ratio * counts.max())
    rng = np.random.default_rng(seed)
    out = list(records)
    while (counts < target).any():
        label = int(np.argmax(target - counts))
        pool = np.flatnonzero(bits[:, label])
        pick = int(pool[rng.integers(len(pool))])
        out.append(records[pick])
        counts += bits[pick]
    return out


# ---------------------------------------------------------------------------
# loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_weighted_f1: float
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stop_reason: str | None = None

    def losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    def scores(self) -> list[float]:
        return [e.val_weighted_f1 for e in self.epochs]

    def to_jsonl(self) -> str:
        rows = [round_floats({**asdict(e), "best": e.epoch == self.best_epoch}) for e in self.epochs]
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


class EarlyStopping:
    """Stop once ``patience`` epochs pass without a strictly better score."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -math.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, epoch: int, score: float) -> bool:
        if score > self.best_score:
            self.best_score, self.best_epoch, self.bad_epochs = score, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: TrainHistory):
        super().__init__(message)
        self.history = history


@dataclass
class TrainResult:
    model: FusionClassifier
    history: TrainHistory
    class_weights: np.ndarray


def _batches(examples, batch_size, order=None):
    order = range(len(examples)) if order is None else order
    order = list(order)
    for start in range(0, len(order), batch_size):
        yield [examples[i] for i in order[start : start + batch_size]]


def _collate_for(model: FusionClassifier, examples):
    cfg = model.config
    dtype = next(model.parameters()).dtype
    return collate(examples, cfg.num_nodes if cfg.uses_graph else None, dtype=dtype, presence=cfg.presence)


def predict(model: FusionClassifier, examples: Sequence[Example], batch_size: int = 64) -> PredictionSet:
    model.eval()
    ids, pa, pb = [], [], []
    for chunk in _batches(examples, batch_size):
        batch = _collate_for(model, chunk)
        probs = model.predict_proba(batch)
        ids.extend(batch.record_ids)
        pa.append(probs["a"].double().numpy()[:, 0])
        pb.append(probs["b"].double().numpy())
    return PredictionSet(ids, np.concatenate(pa), np.concatenate(pb))


def validation_score(predictions: PredictionSet, examples: Sequence[Example], task: str = "joint", threshold: float = 0.5) -> float:
    """Support-weighted F1 of the columns the task is trained on."""
    gold = np.stack([e.labels for e in examples]).astype(np.int64)
    dec = decide(predictions.prob_a, predictions.probs_b, threshold)
    if task == "A":
        return weighted_f1(dec.task_a[:, None], gold[:, :1]).weighted_f1
    if task == "B":
        return weighted_f1(dec.task_b, gold[:, 1:5]).weighted_f1
    pred = np.column_stack([dec.task_a, dec.task_b])
    return weighted_f1(pred, gold[:, :5]).weighted_f1


def batch_loss(model: FusionClassifier, batch, weights: torch.Tensor, task: str = "joint") -> torch.Tensor:
    logits = model(batch)
    loss = 0
    if task in ("A", "joint"):
        loss = loss + weighted_bce(logits["a"], batch.labels_a, weights[:1])
    if task in ("B", "joint"):
        loss = loss + weighted_bce(logits["b"], batch.labels_b, weights[1:])
    return loss


def make_optimizer(model: FusionClassifier, config: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=lr_at(0, config), betas=config.betas, eps=config.eps,
        weight_decay=config.weight_decay, foreach=False,
    )


def train(
    model: FusionClassifier,
    train_examples: Sequence[Example],
    validation_examples: Sequence[Example],
    config: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Fit ``model`` in place and restore the best-validation parameters."""
    if not train_examples or not validation_examples:
        raise ValueError("training and validation sets must be non-empty")
    dtype = next(model.parameters()).dtype
    train_examples = list(train_examples)
    if config.oversample:
        train_examples = oversample(train_examples, config.seed, config.oversample_ratio, key=lambda e: e.labels[1:5])

    labels = np.stack([e.labels for e in train_examples])
    if config.loss_weighting:
        counts = dict(zip(LABEL_NAMES, labels.sum(axis=0).astype(int)))
        cw = class_weights(counts, len(train_examples))
    else:
        cw = np.ones(len(LABEL_NAMES))
    weights = torch.as_tensor(cw, dtype=dtype)

    # dropout draws from the global generator; fork it so callers keep their state
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        optimizer = make_optimizer(model, config)
        generator = torch.Generator().manual_seed(config.seed)
        stopper = EarlyStopping(config.patience)
        history = TrainHistory()
        best_state = None
        step = 0

        for epoch in range(1, config.max_epochs + 1):
            model.train()
            order = torch.randperm(len(train_examples), generator=generator).tolist()
            total, n_batches = 0.0, 0
            for chunk in _batches(train_examples, config.batch_size, order):
                batch = _collate_for(model, chunk)
                for group in optimizer.param_groups:
                    group["lr"] = lr_at(step, config)
                optimizer.zero_grad(set_to_none=True)
                try:
                    loss = batch_loss(model, batch, weights, config.task)
                except FloatingPointError as exc:
                    history.stop_reason = "diverged"
                    raise TrainingDiverged(f"epoch {epoch}: {exc}", history) from exc
                if not torch.isfinite(loss):
                    history.stop_reason = "diverged"
                    raise TrainingDiverged(f"epoch {epoch}: loss is {loss.item()}", history)
                loss.backward()
                optimizer.step()
                step += 1
                total += loss.item()
                n_batches += 1

            preds = predict(model, validation_examples)
            score = validation_score(preds, validation_examples, config.task, config.threshold)
            record = EpochRecord(epoch, total / n_batches, score, optimizer.param_groups[0]["lr"])
            history.epochs.append(record)
            log.info("epoch %d loss %.6f val weighted-F1 %.4f", epoch, record.train_loss, score)
            if on_epoch is not None:
                on_epoch(record)
            if stopper.update(epoch, score):
                best_state = copy.deepcopy(model.state_dict())
            if stopper.should_stop:
                history.stop_reason = "early_stopping"
                break
            if config.target_loss is not None and record.train_loss < config.target_loss:
                history.stop_reason = "target_loss"
                break
        else:
            history.stop_reason = "max_epochs"

    history.best_epoch = stopper.best_epoch
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, cw)
