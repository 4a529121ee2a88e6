"""Heterogeneous token/object co-occurrence graph with NPMI edge weights.

Nodes live in one id space: text-token ids ``0 .. num_text_tokens-1``
followed by object-class ids offset by ``num_text_tokens``. Two nodes
co-occur when they appear in the same record (caption tokens plus detected
objects of one meme); multiplicities are collapsed to presence.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

GRAPH_FORMAT_VERSION = 1


class GraphFormatError(ValueError):
    pass


@dataclass
class CooccurrenceCounts:
    n_records: int = 0
    node_count: Counter = field(default_factory=Counter)
    pair_count: Counter = field(default_factory=Counter)

    def add(self, record: Iterable[int]) -> None:
        nodes = sorted(set(int(n) for n in record))
        self.n_records += 1
        self.node_count.update(nodes)
        self.pair_count.update(itertools.combinations(nodes, 2))

    def merge(self, other: "CooccurrenceCounts") -> "CooccurrenceCounts":
        """Combine counts of two corpus shards (associative, commutative)."""
        return CooccurrenceCounts(
            self.n_records + other.n_records,
            self.node_count + other.node_count,
            self.pair_count + other.pair_count,
        )

    def pair(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return self.pair_count.get((i, j), 0)


def count_cooccurrences(corpus: Iterable[Iterable[int]]) -> CooccurrenceCounts:
    counts = CooccurrenceCounts()
    for record in corpus:
        counts.add(record)
    if counts.n_records == 0:
        raise ValueError("cannot count co-occurrences of an empty corpus")
    return counts


def npmi(counts: CooccurrenceCounts, i: int, j: int) -> float:
    """Normalized PMI of record-level co-occurrence, in [-1, 1].

    Never co-occurring pairs get -1; a pair present in every record gets +1
    (the limit of the removable singularity).
    """
    for node in (i, j):
        if counts.node_count.get(node, 0) <= 0:
            raise KeyError(f"node {node} does not occur in the corpus")
    n = counts.n_records
    joint = counts.pair(i, j)
    if joint == 0:
        return -1.0
    if joint == n:
        return 1.0
    p_ij = joint / n
    p_i = counts.node_count[i] / n
    p_j = counts.node_count[j] / n
    return math.log(p_ij / (p_i * p_j)) / -math.log(p_ij)


def pmi(counts: CooccurrenceCounts, i: int, j: int) -> float:
    n = counts.n_records
    joint = counts.pair(i, j)
    if joint == 0:
        return -math.inf
    return math.log(joint * n / (counts.node_count[i] * counts.node_count[j]))


@dataclass(frozen=True)
class VocabularyGraph:
    num_text_tokens: int
    num_object_classes: int
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int, float], ...]
    min_npmi: float
    edge_weight: str = "npmi"

    @property
    def num_nodes(self) -> int:
        return self.num_text_tokens + self.num_object_classes

    def node_kind(self, node: int) -> tuple[str, int]:
        if node < self.num_text_tokens:
            return "token", node
        return "object", node - self.num_text_tokens

    def node_table(self) -> dict[int, tuple[str, int]]:
        return {n: self.node_kind(n) for n in self.nodes}


def build_graph(
    counts: CooccurrenceCounts,
    min_npmi: float = 0.3,
    num_text_tokens: int | None = None,
    num_object_classes: int = 0,
    edge_weight: str = "npmi",
) -> VocabularyGraph:
    """Keep every co-occurring pair whose NPMI reaches ``min_npmi``.

    ``edge_weight="pmi"`` stores raw PMI as the weight while still
    thresholding on NPMI.
    """
    if not -1.0 <= min_npmi <= 1.0:
        raise ValueError(f"min_npmi must lie in [-1, 1], got {min_npmi}")
    if edge_weight not in ("npmi", "pmi"):
        raise ValueError(f"edge_weight must be 'npmi' or 'pmi', got {edge_weight!r}")
    nodes = tuple(sorted(counts.node_count))
    if num_text_tokens is None:
        num_text_tokens = (max(nodes) + 1 if nodes else 0) - num_object_classes
    if nodes and max(nodes) >= num_text_tokens + num_object_classes:
        raise ValueError("corpus contains node ids beyond the declared id space")
    edges = []
    for (i, j), c in sorted(counts.pair_count.items()):
        if c <= 0:
            continue
        score = npmi(counts, i, j)
        if score >= min_npmi:
            weight = score if edge_weight == "npmi" else pmi(counts, i, j)
            edges.append((i, j, weight))
    return VocabularyGraph(num_text_tokens, num_object_classes, nodes, tuple(edges), float(min_npmi), edge_weight)


def adjacency(graph: VocabularyGraph) -> sp.csr_matrix:
    """Symmetric weighted adjacency without self-loops."""
    n = graph.num_nodes
    if not graph.edges:
        return sp.csr_matrix((n, n))
    i, j, w = (np.asarray(col) for col in zip(*graph.edges))
    rows = np.concatenate([i, j]).astype(np.int64)
    cols = np.concatenate([j, i]).astype(np.int64)
    return sp.csr_matrix((np.concatenate([w, w]).astype(np.float64), (rows, cols)), shape=(n, n))


def normalize(graph: VocabularyGraph) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with negative weights clamped to zero."""
    a = adjacency(graph)
    a.data = np.maximum(a.data, 0.0)
    a = a + sp.identity(graph.num_nodes, format="csr")
    degree = np.asarray(a.sum(axis=1)).ravel()
    coo = a.tocoo()
    # a_ij / sqrt(d_i d_j) is bitwise symmetric; scaling twice is not
    values = coo.data / np.sqrt(degree[coo.row] * degree[coo.col])
    out = sp.csr_matrix((values, (coo.row, coo.col)), shape=a.shape)
    out.sort_indices()
    return out


# ---------------------------------------------------------------------------
# persistence


def _payload(graph: VocabularyGraph) -> dict:
    return {
        "version": GRAPH_FORMAT_VERSION,
        "num_text_tokens": graph.num_text_tokens,
        "num_object_classes": graph.num_object_classes,
        "nodes": [[n, *graph.node_kind(n)] for n in graph.nodes],
        "edges": [[i, j, w] for i, j, w in graph.edges],
        "min_npmi": graph.min_npmi,
        "edge_weight": graph.edge_weight,
    }


def _checksum(payload: Mapping) -> str:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def dumps_graph(graph: VocabularyGraph) -> str:
    payload = _payload(graph)
    payload["checksum"] = _checksum(payload)
    return json.dumps(payload, sort_keys=True, allow_nan=False) + "\n"


def save_graph(graph: VocabularyGraph, path: str | Path) -> None:
    Path(path).write_text(dumps_graph(graph), encoding="utf-8")


def loads_graph(text: str) -> VocabularyGraph:
    payload = json.loads(text)
    stored = payload.pop("checksum", None)
    if payload.get("version") != GRAPH_FORMAT_VERSION:
        raise GraphFormatError(
            f"unsupported graph format version {payload.get('version')!r}, expected {GRAPH_FORMAT_VERSION}"
        )
    if stored != _checksum(payload):
        raise GraphFormatError("graph checksum mismatch; the file is corrupt or was edited")
    return VocabularyGraph(
        num_text_tokens=int(payload["num_text_tokens"]),
        num_object_classes=int(payload["num_object_classes"]),
        nodes=tuple(int(row[0]) for row in payload["nodes"]),
        edges=tuple((int(i), int(j), float(w)) for i, j, w in payload["edges"]),
        min_npmi=float(payload["min_npmi"]),
        edge_weight=payload.get("edge_weight", "npmi"),
    )


def load_graph(path: str | Path) -> VocabularyGraph:
    return loads_graph(Path(path).read_text(encoding="utf-8"))


def graph_stats(graph: VocabularyGraph) -> dict:
    kinds = Counter(graph.node_kind(n)[0] for n in graph.nodes)
    weights = [w for _, _, w in graph.edges]
    return {
        "nodes": len(graph.nodes),
        "token_nodes": kinds.get("token", 0),
        "object_nodes": kinds.get("object", 0),
        "edges": len(graph.edges),
        "mean_weight": float(np.mean(weights)) if weights else None,
        "min_npmi": graph.min_npmi,
    }
