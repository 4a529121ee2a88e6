"""Turn records plus feature stores into padded model inputs."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import torch

from .data_ingest import MemeRecord, RegionSet, SentimentVector
from .preprocess import CleaningLevel, TokenSequence, Vocab, clean_text, node_ids, tokenize

log = logging.getLogger(__name__)

LOCATION_DIM = 7


def region_location(box: Sequence[float], image_size: Sequence[int]) -> np.ndarray:
    """Normalized box geometry: corners, width, height and area fractions."""
    width, height = image_size
    if width <= 0 or height <= 0:
        raise ValueError(f"zero-size image {tuple(image_size)}")
    x1, y1, x2, y2 = box
    w, h = x2 - x1, y2 - y1
    return np.array(
        [x1 / width, y1 / height, x2 / width, y2 / height, w / width, h / height, w * h / (width * height)],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class Example:
    record_id: str
    tokens: TokenSequence
    region_features: np.ndarray  # (R, F)
    region_locations: np.ndarray  # (R, 7)
    nodes: Counter
    sentiment: np.ndarray | None
    labels: np.ndarray  # (6,) misogynous, 4 types, non_misogynous


@dataclass
class Batch:
    record_ids: list[str]
    token_ids: torch.Tensor
    text_mask: torch.Tensor
    region_features: torch.Tensor
    region_locations: torch.Tensor
    region_mask: torch.Tensor
    node_counts: torch.Tensor | None
    sentiment: torch.Tensor | None
    labels: torch.Tensor

    def __len__(self) -> int:
        return len(self.record_ids)

    @property
    def labels_a(self) -> torch.Tensor:
        return self.labels[:, :1]

    @property
    def labels_b(self) -> torch.Tensor:
        return self.labels[:, 1:]


def record_text(record: MemeRecord) -> str:
    """Cleaned caption, falling back to default-level cleaning of the raw text."""
    return record.cleaned_text or clean_text(record.raw_text, CleaningLevel.L1)


def corpus_nodes(
    records: Iterable[MemeRecord],
    vocab: Vocab,
    regions: Mapping[str, RegionSet],
    num_object_classes: int,
    max_len: int = 64,
) -> Iterator[Counter]:
    """Graph-node multisets for a co-occurrence corpus, one per record."""
    for record in records:
        rs = regions.get(record.id)
        region_list = rs.regions if rs is not None else ()
        yield node_ids(tokenize(record_text(record), vocab, max_len), region_list, vocab, num_object_classes)


def build_example(
    record: MemeRecord,
    vocab: Vocab,
    regions: Mapping[str, RegionSet],
    region_dim: int,
    num_object_classes: int,
    sentiment: Mapping[str, SentimentVector] | None = None,
    max_len: int = 64,
) -> Example:
    tokens = tokenize(record_text(record), vocab, max_len)
    rs = regions.get(record.id)
    if rs is None:
        log.warning("no region entry for record %s; using text only", record.id)
        region_list, size = (), (1, 1)
    else:
        region_list, size = rs.regions, rs.image_size
    feats = np.zeros((len(region_list), region_dim))
    locs = np.zeros((len(region_list), LOCATION_DIM))
    for k, region in enumerate(region_list):
        if region.feature.shape != (region_dim,):
            raise ValueError(f"record {record.id}: region feature dim {region.feature.shape[0]} != {region_dim}")
        feats[k] = region.feature
        locs[k] = region_location(region.box, size)
    sent = None
    if sentiment is not None:
        if record.id not in sentiment:
            raise KeyError(f"missing sentiment vector for record {record.id}")
        sent = np.asarray(sentiment[record.id].values, dtype=np.float64)
    return Example(
        record_id=record.id,
        tokens=tokens,
        region_features=feats,
        region_locations=locs,
        nodes=node_ids(tokens, region_list, vocab, num_object_classes),
        sentiment=sent,
        labels=np.asarray(record.label_vector(), dtype=np.float64),
    )


def collate(
    examples: Sequence[Example],
    num_nodes: int | None = None,
    dtype: torch.dtype = torch.float32,
    presence: str = "count",
) -> Batch:
    """Stack examples; regions are right-padded to the batch maximum.

    ``num_nodes`` enables the dense node-count matrix used by the graph
    branch; ``presence="binary"`` clips counts to 1.
    """
    b = len(examples)
    r_max = max((e.region_features.shape[0] for e in examples), default=0)
    f_dim = examples[0].region_features.shape[1]
    feats = np.zeros((b, r_max, f_dim))
    locs = np.zeros((b, r_max, 7))
    rmask = np.zeros((b, r_max), dtype=bool)
    for i, e in enumerate(examples):
        r = e.region_features.shape[0]
        feats[i, :r] = e.region_features
        locs[i, :r] = e.region_locations
        rmask[i, :r] = True

    node_counts = None
    if num_nodes is not None:
        node_counts = torch.zeros((b, num_nodes), dtype=dtype)
        for i, e in enumerate(examples):
            for node, c in e.nodes.items():
                if node >= num_nodes:
                    raise ValueError(f"node id {node} outside graph of {num_nodes} nodes")
                node_counts[i, node] = 1.0 if presence == "binary" else float(c)

    sentiment = None
    if examples[0].sentiment is not None:
        sentiment = torch.as_tensor(np.stack([e.sentiment for e in examples]), dtype=dtype)

    return Batch(
        record_ids=[e.record_id for e in examples],
        token_ids=torch.tensor([e.tokens.ids for e in examples], dtype=torch.long),
        text_mask=torch.tensor([e.tokens.attention_mask for e in examples], dtype=torch.bool),
        region_features=torch.as_tensor(feats, dtype=dtype),
        region_locations=torch.as_tensor(locs, dtype=dtype),
        region_mask=torch.as_tensor(rmask),
        node_counts=node_counts,
        sentiment=sentiment,
        labels=torch.as_tensor(np.stack([e.labels for e in examples]), dtype=dtype),
    )
