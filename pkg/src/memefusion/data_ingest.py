"""Loading, validation and splitting of meme records and precomputed features.

Three on-disk formats are read here:

* ``dataset.tsv`` -- one header row, columns ``id, text, misogynous,
  shaming, stereotype, objectification, violence`` and an optional
  ``cleaned_text`` column written by the preprocessing command.
* ``regions.jsonl`` -- detected image regions per meme.
* ``sentiment.jsonl`` -- one image-sentiment vector per meme.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

TYPE_LABELS = ("shaming", "stereotype", "objectification", "violence")
LABEL_NAMES = ("misogynous",) + TYPE_LABELS + ("non_misogynous",)
DATASET_COLUMNS = ("id", "text", "misogynous") + TYPE_LABELS
CLEANED_COLUMN = "cleaned_text"


class DataError(ValueError):
    """Raised for malformed or inconsistent input files."""


class LabelInvariantError(DataError):
    pass


@dataclass(frozen=True)
class MemeRecord:
    id: str
    raw_text: str
    misogynous: int
    types: tuple[int, int, int, int]
    cleaned_text: str = ""

    @property
    def non_misogynous(self) -> int:
        return int(not any(self.types))

    def label_vector(self) -> tuple[int, ...]:
        """Labels in ``LABEL_NAMES`` order."""
        return (self.misogynous, *self.types, self.non_misogynous)

    @property
    def text(self) -> str:
        return self.cleaned_text or self.raw_text


def check_labels(misogynous: int, types: Sequence[int]) -> str | None:
    """Return a description of the violated label invariant, or None."""
    if misogynous == 0 and any(types):
        return "misogynous=0 but a type label is set"
    if misogynous == 1 and not any(types):
        return "misogynous=1 but no type label is set"
    return None


@dataclass(frozen=True)
class Region:
    feature: np.ndarray
    box: tuple[float, float, float, float]
    class_id: int
    confidence: float


@dataclass(frozen=True)
class RegionSet:
    record_id: str
    regions: tuple[Region, ...]
    image_size: tuple[int, int]

    def filtered(self, min_confidence: float) -> "RegionSet":
        kept = tuple(r for r in self.regions if r.confidence >= min_confidence)
        return replace(self, regions=kept)

    def __eq__(self, other):
        if not isinstance(other, RegionSet):
            return NotImplemented
        if (self.record_id, self.image_size, len(self.regions)) != (
            other.record_id, other.image_size, len(other.regions)
        ):
            return False
        return all(
            a.box == b.box
            and a.class_id == b.class_id
            and a.confidence == b.confidence
            and np.array_equal(a.feature, b.feature)
            for a, b in zip(self.regions, other.regions)
        )

    __hash__ = None


@dataclass(frozen=True)
class SentimentVector:
    record_id: str
    values: np.ndarray


@dataclass(frozen=True)
class DatasetSplit:
    train: list[MemeRecord]
    dev: list[MemeRecord]
    validation: list[MemeRecord]
    seed: int
    ratios: tuple[float, float, float]

    def parts(self) -> tuple[list[MemeRecord], list[MemeRecord], list[MemeRecord]]:
        return self.train, self.dev, self.validation


# ---------------------------------------------------------------------------
# dataset.tsv


def _parse_bit(value: str, column: str, line: int) -> int:
    value = value.strip()
    if value not in ("0", "1"):
        raise DataError(f"line {line}: column {column!r} must be 0 or 1, got {value!r}")
    return int(value)


def load_dataset(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    on_invalid: str = "reject",
) -> list[MemeRecord]:
    """Read a dataset TSV into records.

    ``schema`` maps the canonical column names to the names used in the
    file header, for corpora that label their columns differently.
    ``on_invalid`` is ``"reject"`` (raise on the first label-invariant
    violation) or ``"repair"`` (set ``misogynous`` to the OR of the types).
    """
    if on_invalid not in ("reject", "repair"):
        raise ValueError(f"on_invalid must be 'reject' or 'repair', got {on_invalid!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    schema = dict(schema or {})
    names = {col: schema.get(col, col) for col in DATASET_COLUMNS + (CLEANED_COLUMN,)}

    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        index = {name: i for i, name in enumerate(header)}
        missing = [names[c] for c in DATASET_COLUMNS if names[c] not in index]
        if missing:
            raise DataError(f"{path}: header lacks columns {missing}")
        cleaned_at = index.get(names[CLEANED_COLUMN])

        records = []
        seen = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {line_no}: expected {len(header)} columns, got {len(row)}"
                )
            rid = row[index[names["id"]]]
            if rid in seen:
                raise DataError(f"{path}: line {line_no}: duplicate id {rid!r}")
            seen.add(rid)
            mis = _parse_bit(row[index[names["misogynous"]]], "misogynous", line_no)
            types = tuple(_parse_bit(row[index[names[t]]], t, line_no) for t in TYPE_LABELS)
            problem = check_labels(mis, types)
            if problem is not None:
                if on_invalid == "reject":
                    raise LabelInvariantError(f"{path}: line {line_no}: {problem}")
                mis = int(any(types))
            records.append(
                MemeRecord(
                    id=rid,
                    raw_text=row[index[names["text"]]],
                    misogynous=mis,
                    types=types,
                    cleaned_text=row[cleaned_at] if cleaned_at is not None else "",
                )
            )
    return records


def write_dataset(path: str | Path, records: Iterable[MemeRecord], with_cleaned: bool = True) -> None:
    header = list(DATASET_COLUMNS) + ([CLEANED_COLUMN] if with_cleaned else [])
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(header) + "\n")
        for r in records:
            row = [r.id, r.raw_text, str(r.misogynous), *map(str, r.types)]
            if with_cleaned:
                row.append(r.cleaned_text)
            for cell in row:
                if "\t" in cell or "\n" in cell:
                    raise DataError(f"record {r.id}: field contains a tab or newline")
            fh.write("\t".join(row) + "\n")


# ---------------------------------------------------------------------------
# feature stores


def _iter_jsonl(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"feature file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {line_no}: invalid JSON ({exc.msg})") from None


def load_region_features(path: str | Path, min_confidence: float = 0.0) -> dict[str, RegionSet]:
    """Read ``regions.jsonl`` and drop regions below ``min_confidence``."""
    if not 0.0 <= min_confidence <= 1.0:
        raise ValueError(f"min_confidence must lie in [0, 1], got {min_confidence}")
    path = Path(path)
    out: dict[str, RegionSet] = {}
    dim = None
    for line_no, obj in _iter_jsonl(path):
        rid = str(obj["id"])
        if rid in out:
            raise DataError(f"{path}: line {line_no}: duplicate record id {rid!r}")
        width, height = int(obj["width"]), int(obj["height"])
        regions = []
        for raw in obj.get("regions", []):
            feature = np.asarray(raw["feature"], dtype=np.float64)
            if dim is None:
                dim = feature.shape[0]
            elif feature.shape != (dim,):
                raise DataError(
                    f"{path}: line {line_no}: feature dimension {feature.shape[0]} != {dim}"
                )
            box = tuple(float(v) for v in raw["box"])
            if len(box) != 4 or not (box[0] < box[2] and box[1] < box[3]):
                raise DataError(f"{path}: line {line_no}: invalid box {raw['box']}")
            conf = float(raw["confidence"])
            if not 0.0 <= conf <= 1.0:
                raise DataError(f"{path}: line {line_no}: confidence {conf} outside [0, 1]")
            class_id = int(raw["class_id"])
            if class_id < 0:
                raise DataError(f"{path}: line {line_no}: negative class_id")
            regions.append(Region(feature, box, class_id, conf))
        out[rid] = RegionSet(rid, tuple(regions), (width, height)).filtered(min_confidence)
    return out


def region_feature_dim(regions: Mapping[str, RegionSet]) -> int:
    for rs in regions.values():
        if rs.regions:
            return int(rs.regions[0].feature.shape[0])
    raise DataError("region store contains no regions; feature dimension is undefined")


def load_sentiment_features(path: str | Path) -> dict[str, SentimentVector]:
    path = Path(path)
    out: dict[str, SentimentVector] = {}
    dim = None
    for line_no, obj in _iter_jsonl(path):
        rid = str(obj["id"])
        if rid in out:
            raise DataError(f"{path}: line {line_no}: duplicate record id {rid!r}")
        values = np.asarray(obj["vector"], dtype=np.float64)
        if dim is None:
            dim = values.shape[0]
        elif values.shape != (dim,):
            raise DataError(f"{path}: line {line_no}: vector length {values.shape[0]} != {dim}")
        out[rid] = SentimentVector(rid, values)
    return out


# ---------------------------------------------------------------------------
# splitting and counting


def _part_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment with every part non-empty."""
    raw = [n * r for r in ratios]
    sizes = [math.floor(x) for x in raw]
    order = sorted(range(len(ratios)), key=lambda k: (-(raw[k] - sizes[k]), k))
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    for k in range(len(sizes)):
        while sizes[k] == 0:
            donor = max(range(len(sizes)), key=lambda j: (sizes[j], -j))
            sizes[donor] -= 1
            sizes[k] += 1
    return sizes


def _stratum_allocation(strata_sizes: Sequence[int], ratios: Sequence[float], part_sizes: Sequence[int]):
    """Integer table alloc[s][k] with row sums = strata sizes, column sums =
    part sizes and every cell within one of ``n_s * ratio_k``."""
    n_parts = len(ratios)
    alloc = [[math.floor(n_s * r) for r in ratios] for n_s in strata_sizes]
    row_left = [n_s - sum(row) for n_s, row in zip(strata_sizes, alloc)]
    col_left = [part_sizes[k] - sum(row[k] for row in alloc) for k in range(n_parts)]

    # Part sizes may have been forced away from the floor allocation; take
    # units back from the most over-allocated cells first.
    for k in range(n_parts):
        while col_left[k] < 0:
            s = max(
                (s for s in range(len(alloc)) if alloc[s][k] > 0),
                key=lambda s: alloc[s][k] - strata_sizes[s] * ratios[k],
            )
            alloc[s][k] -= 1
            row_left[s] += 1
            col_left[k] += 1

    cells = sorted(
        ((s, k) for s in range(len(alloc)) for k in range(n_parts)),
        key=lambda sk: (-(strata_sizes[sk[0]] * ratios[sk[1]] - alloc[sk[0]][sk[1]]), sk),
    )
    for capped in (True, False):
        for s, k in cells:
            while row_left[s] > 0 and col_left[k] > 0:
                alloc[s][k] += 1
                row_left[s] -= 1
                col_left[k] -= 1
                if capped:
                    break
    return alloc


def split_dataset(
    records: Sequence[MemeRecord],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Seeded train/dev/validation split, stratified on the misogynous bit.

    Each part keeps the records' input order.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ValueError("exactly three ratios (train, dev, validation) are required")
    if any(r <= 0 for r in ratios):
        raise ValueError(f"all ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(records)
    if n < len(ratios):
        raise ValueError(f"cannot split {n} records into {len(ratios)} non-empty parts")

    rng = np.random.default_rng(seed)
    strata = [
        [i for i, r in enumerate(records) if r.misogynous == 1],
        [i for i, r in enumerate(records) if r.misogynous == 0],
    ]
    sizes = _part_sizes(n, ratios)
    alloc = _stratum_allocation([len(s) for s in strata], ratios, sizes)

    assignment = [[] for _ in ratios]
    for stratum, counts in zip(strata, alloc):
        shuffled = [stratum[i] for i in rng.permutation(len(stratum))]
        start = 0
        for k, c in enumerate(counts):
            assignment[k].extend(shuffled[start : start + c])
            start += c
    parts = [[records[i] for i in sorted(idx)] for idx in assignment]
    return DatasetSplit(parts[0], parts[1], parts[2], seed, ratios)


def class_counts(records: Iterable[MemeRecord]) -> dict[str, int]:
    """Positive count per label, in ``LABEL_NAMES`` order."""
    counts = dict.fromkeys(LABEL_NAMES, 0)
    for r in records:
        for name, bit in zip(LABEL_NAMES, r.label_vector()):
            counts[name] += bit
    return counts
