"""Classification metrics, decision rules and the soft-voting ensemble."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data_ingest import LABEL_NAMES, TYPE_LABELS

TASK_A_LABELS = ("misogynous",)
TASK_B_LABELS = TYPE_LABELS
PROB_B_LABELS = LABEL_NAMES[1:]  # four types + non_misogynous


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class LabelMetrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def support(self) -> int:
        return self.tp + self.fn

    def __add__(self, other: "LabelMetrics") -> "LabelMetrics":
        return LabelMetrics(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def to_dict(self) -> dict:
        return {**asdict(self), "precision": self.precision, "recall": self.recall, "f1": self.f1, "support": self.support}


def _bits(values, name) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr.astype(bool)


def label_metrics(preds, golds) -> LabelMetrics:
    p, g = _bits(preds, "preds"), _bits(golds, "golds")
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {g.shape}")
    if p.size == 0:
        raise ValueError("label_metrics needs at least one prediction")
    return LabelMetrics(
        tp=int(np.sum(p & g)), fp=int(np.sum(p & ~g)), fn=int(np.sum(~p & g)), tn=int(np.sum(~p & ~g))
    )


@dataclass(frozen=True)
class WeightedF1Report:
    labels: tuple[str, ...]
    per_label: tuple[LabelMetrics, ...]

    @property
    def supports(self) -> tuple[int, ...]:
        return tuple(m.support for m in self.per_label)

    def _weighted(self, attr: str) -> float:
        total = sum(self.supports)
        return sum(m.support * getattr(m, attr) for m in self.per_label) / total

    @property
    def weighted_f1(self) -> float:
        return self._weighted("f1")

    @property
    def weighted_precision(self) -> float:
        return self._weighted("precision")

    @property
    def weighted_recall(self) -> float:
        return self._weighted("recall")

    @property
    def macro_f1(self) -> float:
        return float(np.mean([m.f1 for m in self.per_label]))

    @property
    def macro_precision(self) -> float:
        return float(np.mean([m.precision for m in self.per_label]))

    @property
    def macro_recall(self) -> float:
        return float(np.mean([m.recall for m in self.per_label]))

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "per_label": {name: m.to_dict() for name, m in zip(self.labels, self.per_label)},
            "weighted": {"precision": self.weighted_precision, "recall": self.weighted_recall, "f1": self.weighted_f1},
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall, "f1": self.macro_f1},
        }


def weighted_f1(preds, golds, labels: Sequence[str] | None = None) -> WeightedF1Report:
    """Per-label F1 averaged with gold-positive support as weights."""
    p, g = np.atleast_2d(np.asarray(preds)), np.atleast_2d(np.asarray(golds))
    if np.asarray(preds).ndim == 1:
        p, g = p.T, g.T
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    if p.shape[1] < 1:
        raise ValueError("weighted_f1 needs at least one label")
    labels = tuple(labels) if labels is not None else tuple(f"label_{k}" for k in range(p.shape[1]))
    if len(labels) != p.shape[1]:
        raise ValueError("one name per label column is required")
    report = WeightedF1Report(labels, tuple(label_metrics(p[:, k], g[:, k]) for k in range(p.shape[1])))
    if sum(report.supports) == 0:
        raise ValueError("every label has zero gold support; weighted F1 is undefined")
    return report


def confusion_matrix(preds, golds) -> np.ndarray:
    """``[[tn, fp], [fn, tp]]`` for one label."""
    m = label_metrics(preds, golds)
    return np.array([[m.tn, m.fp], [m.fn, m.tp]], dtype=np.int64)


def render_confusion(matrix: np.ndarray, label: str) -> str:
    (tn, fp), (fn, tp) = matrix.tolist()
    width = max(len(str(v)) for v in (tn, fp, fn, tp)) + 2
    return (
        f"{label}\n"
        f"{'':>10}{'pred 0':>{width + 5}}{'pred 1':>{width + 5}}\n"
        f"{'gold 0':>10}{tn:>{width + 5}}{fp:>{width + 5}}\n"
        f"{'gold 1':>10}{fn:>{width + 5}}{tp:>{width + 5}}"
    )


# ---------------------------------------------------------------------------
# ensemble and decisions


def soft_vote(members: Sequence) -> np.ndarray:
    """Unweighted mean of member probability matrices."""
    if len(members) == 0:
        raise ValueError("soft voting needs at least one member")
    stack = [np.asarray(m, dtype=np.float64) for m in members]
    shape = stack[0].shape
    for k, m in enumerate(stack):
        if m.shape != shape:
            raise ValueError(f"member {k} has shape {m.shape}, expected {shape}")
    stacked = np.stack(stack)
    # centring on one member keeps identical members exact; the clip keeps the
    # mean inside the member range despite rounding
    mean = stacked[0] + np.mean(stacked - stacked[0], axis=0)
    return np.clip(mean, stacked.min(axis=0), stacked.max(axis=0))


@dataclass(frozen=True)
class Decisions:
    task_a: np.ndarray  # (n,)
    task_b: np.ndarray  # (n, 4)


def decide(
    prob_a,
    probs_b,
    threshold: float = 0.5,
    repair: bool = False,
    veto: bool = False,
    task_a_rule: str = "head",
) -> Decisions:
    """Threshold probabilities into task-A and task-B labels.

    ``probs_b`` columns are the four types followed by non-misogynous; the
    last column only acts when ``veto`` is set (types are cleared when it
    reaches the threshold). ``repair`` clears types whenever task A is 0.
    ``task_a_rule="any-type"`` derives task A from the type decisions.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if task_a_rule not in ("head", "any-type"):
        raise ValueError("task_a_rule must be 'head' or 'any-type'")
    pa = np.asarray(prob_a, dtype=np.float64).reshape(-1)
    pb = np.asarray(probs_b, dtype=np.float64).reshape(len(pa), -1)
    types = (pb[:, :4] >= threshold).astype(np.int64)
    if veto and pb.shape[1] > 4:
        types[pb[:, 4] >= threshold] = 0
    if task_a_rule == "any-type":
        task_a = types.any(axis=1).astype(np.int64)
    else:
        task_a = (pa >= threshold).astype(np.int64)
    if repair:
        types[task_a == 0] = 0
    return Decisions(task_a, types)


# ---------------------------------------------------------------------------
# predictions.jsonl / report.json


def fmt_float(x: float) -> float:
    """Round to 9 significant digits for stable golden files."""
    return float(f"{float(x):.9g}")


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class PredictionSet:
    ids: list[str]
    prob_a: np.ndarray  # (n,)
    probs_b: np.ndarray  # (n, 5)

    def __post_init__(self):
        self.prob_a = np.asarray(self.prob_a, dtype=np.float64).reshape(-1)
        self.probs_b = np.asarray(self.probs_b, dtype=np.float64).reshape(len(self.ids), -1)
        if len(self.prob_a) != len(self.ids):
            raise ValueError("one task-A probability per id is required")

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.prob_a, self.probs_b])

    def dumps(self) -> str:
        lines = []
        for rid, pa, pb in zip(self.ids, self.prob_a, self.probs_b):
            row = {"id": rid, "prob_a": fmt_float(pa), "probs_b": [fmt_float(v) for v in pb]}
            lines.append(json.dumps(row, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PredictionSet":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"predictions file not found: {path}")
        ids, pa, pb = [], [], []
        for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            if len(row["probs_b"]) != len(PROB_B_LABELS):
                raise ValueError(f"{path}: line {line_no}: probs_b must have {len(PROB_B_LABELS)} entries")
            ids.append(row["id"])
            pa.append(row["prob_a"])
            pb.append(row["probs_b"])
        return cls(ids, np.array(pa), np.array(pb).reshape(len(ids), len(PROB_B_LABELS)))


def ensemble_predictions(members: Sequence[PredictionSet]) -> PredictionSet:
    if not members:
        raise ValueError("soft voting needs at least one member")
    ids = members[0].ids
    for k, m in enumerate(members[1:], start=1):
        if m.ids != ids:
            raise ValueError(f"member {k} lists records in a different order or set")
    mean = soft_vote([m.matrix() for m in members])
    return PredictionSet(list(ids), mean[:, 0], mean[:, 1:])


def evaluation_report(predictions: PredictionSet, records, threshold: float = 0.5, **decide_kw) -> dict:
    """Task-A and task-B metrics plus per-class confusion matrices."""
    by_id = {r.id: r for r in records}
    missing = [i for i in predictions.ids if i not in by_id]
    if missing:
        raise KeyError(f"predictions reference unknown records, e.g. {missing[0]!r}")
    gold = np.array([by_id[i].label_vector() for i in predictions.ids], dtype=np.int64)
    dec = decide(predictions.prob_a, predictions.probs_b, threshold, **decide_kw)
    task_a = weighted_f1(dec.task_a[:, None], gold[:, :1], TASK_A_LABELS)
    task_b = weighted_f1(dec.task_b, gold[:, 1:5], TASK_B_LABELS)
    pred_all = np.column_stack([dec.task_a, dec.task_b])
    confusion = {
        name: confusion_matrix(pred_all[:, k], gold[:, k]).tolist()
        for k, name in enumerate(TASK_A_LABELS + TASK_B_LABELS)
    }
    return {
        "n_records": len(predictions.ids),
        "threshold": threshold,
        "task_a": task_a.to_dict(),
        "task_b": task_b.to_dict(),
        "confusion_matrices": confusion,
    }


def round_floats(obj):
    if isinstance(obj, float):
        return fmt_float(obj)
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj
