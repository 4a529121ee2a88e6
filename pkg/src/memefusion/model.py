"""Early-fusion transformer classifiers for memes.

Two variants share one encoder over ``[text tokens | image regions | graph
tokens]``:

* ``vgcn`` -- a graph convolution over the pre-built vocabulary graph turns
  the meme's token/object nodes into ``graph_tokens`` extra embeddings that
  join the sequence before the first attention layer.
* ``sentiment`` -- the pooled output is concatenated with a precomputed
  image-sentiment vector before the classification heads.

Both variants emit one logit for the misogynous head and five for the
type head (four misogyny types plus "non-misogynous").
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
import torch
from torch import nn
from torch.nn import functional as F

from .features import LOCATION_DIM, Batch

N_LABELS_A = 1
N_LABELS_B = 5
VARIANTS = ("sentiment", "vgcn")

PRESETS = {
    # narrow encoders need a wider init than 0.02 to train in a few epochs
    "toy": dict(d_model=64, n_heads=4, n_layers=2, d_ff=256, init_std=0.07),
    "base-like": dict(d_model=768, n_heads=12, n_layers=12, d_ff=3072),
    # 1024 is not divisible by 24 heads; 16 heads over 24 layers is the
    # shape-consistent reading of the large encoder.
    "large-like": dict(d_model=1024, n_heads=16, n_layers=24, d_ff=4096),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    vocab_size: int
    num_object_classes: int
    region_dim: int
    sentiment_dim: int = 0
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 64
    graph_tokens: int = 16
    gcn_hidden: int = 32
    presence: str = "count"
    preset: str = "toy"
    init_std: float = 0.02
    dropout: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.graph_tokens < 0:
            raise ValueError("graph_tokens must be non-negative")
        if self.variant == "sentiment" and self.sentiment_dim <= 0:
            raise ValueError("the sentiment variant needs sentiment_dim > 0")
        if self.presence not in ("count", "binary"):
            raise ValueError("presence must be 'count' or 'binary'")

    @classmethod
    def from_preset(cls, preset: str, **fields) -> "ModelConfig":
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        return cls(preset=preset, **{**PRESETS[preset], **fields})

    @property
    def num_nodes(self) -> int:
        return self.vocab_size + self.num_object_classes

    @property
    def uses_graph(self) -> bool:
        return self.variant == "vgcn"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def to_torch_sparse(matrix: sp.spmatrix, dtype=torch.float32) -> torch.Tensor:
    coo = sp.coo_matrix(matrix)
    indices = torch.as_tensor(np.vstack([coo.row, coo.col]), dtype=torch.long)
    values = torch.as_tensor(coo.data, dtype=dtype)
    return torch.sparse_coo_tensor(indices, values, coo.shape, check_invariants=True).coalesce()


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.dropout = nn.Dropout(dropout)
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.query = nn.Linear(d_model, d_model)
        self.key = nn.Linear(d_model, d_model)
        self.value = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x, mask):
        b, n, d = x.shape

        def heads(t):
            return t.view(b, n, self.n_heads, self.d_head).transpose(1, 2)

        q, k, v = heads(self.query(x)), heads(self.key(x)), heads(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        weights = scores.softmax(dim=-1)
        ctx = (self.dropout(weights) @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(ctx), weights


class EncoderLayer(nn.Module):
    """Pre-LayerNorm transformer block."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.attn_norm = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads, dropout)
        self.ff_norm = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask):
        attended, weights = self.attn(self.attn_norm(x), mask)
        x = x + self.dropout(attended)
        x = x + self.dropout(self.ff(self.ff_norm(x)))
        return x, weights


class FusionClassifier(nn.Module):
    SEG_TEXT, SEG_IMAGE, SEG_GRAPH = 0, 1, 2

    def __init__(self, config: ModelConfig, adjacency: sp.spmatrix | None = None):
        super().__init__()
        self.config = config
        d = config.d_model
        self.token_embedding = nn.Embedding(config.vocab_size, d)
        self.position_embedding = nn.Embedding(config.max_len, d)
        self.segment_embedding = nn.Embedding(3, d)
        self.text_norm = nn.LayerNorm(d)
        self.region_proj = nn.Linear(config.region_dim, d)
        self.location_proj = nn.Linear(LOCATION_DIM, d)
        self.region_norm = nn.LayerNorm(d)
        self.layers = nn.ModuleList(
            EncoderLayer(d, config.n_heads, config.d_ff, config.dropout) for _ in range(config.n_layers)
        )
        self.embedding_dropout = nn.Dropout(config.dropout)
        self.final_norm = nn.LayerNorm(d)
        self.pooler = nn.Linear(d, d)

        head_in = d
        if config.uses_graph:
            self.object_embedding = nn.Embedding(config.num_object_classes, d)
            self.graph_position = nn.Parameter(torch.zeros(d))
            self.graph_norm = nn.LayerNorm(d)
            self.gcn_w1 = nn.Parameter(torch.zeros(config.num_nodes, config.gcn_hidden))
            self.gcn_w2 = nn.Parameter(torch.zeros(config.gcn_hidden, config.graph_tokens))
            self._adjacency = None
            if adjacency is not None:
                self.set_adjacency(adjacency)
        else:
            head_in += config.sentiment_dim
        self.head_a = nn.Linear(head_in, N_LABELS_A)
        self.head_b = nn.Linear(head_in, N_LABELS_B)

    # -- setup ---------------------------------------------------------------

    def reset_parameters(self, seed: int = 0) -> "FusionClassifier":
        """Truncated-normal weights (std ``init_std``), zero biases, unit LayerNorm gains."""
        gen = torch.Generator().manual_seed(seed)
        std = self.config.init_std
        for name, p in sorted(self.named_parameters()):
            owner = self.get_submodule(name.rpartition(".")[0])
            with torch.no_grad():
                if isinstance(owner, nn.LayerNorm):
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias") or name == "graph_position":
                    p.zero_()
                else:
                    nn.init.trunc_normal_(p, std=std, a=-2 * std, b=2 * std, generator=gen)
        return self

    def set_adjacency(self, adjacency: sp.spmatrix) -> None:
        n = self.config.num_nodes
        if adjacency.shape != (n, n):
            raise ValueError(f"adjacency shape {adjacency.shape} does not match {n} graph nodes")
        dtype = self.gcn_w1.dtype
        self._adjacency = to_torch_sparse(adjacency, dtype=dtype)

    def _apply(self, fn, recurse=True):
        out = super()._apply(fn, recurse)
        if getattr(self, "_adjacency", None) is not None:
            self._adjacency = fn(self._adjacency)
        return out

    # -- forward pieces --------------------------------------------------------

    def embed_text(self, token_ids: torch.Tensor) -> torch.Tensor:
        if token_ids.numel() and (token_ids.min() < 0 or token_ids.max() >= self.config.vocab_size):
            raise IndexError("token id outside the embedding table")
        positions = torch.arange(token_ids.shape[1], device=token_ids.device)
        x = self.token_embedding(token_ids) + self.position_embedding(positions) + self.segment_embedding.weight[self.SEG_TEXT]
        return self.text_norm(x)

    def embed_regions(self, features: torch.Tensor, locations: torch.Tensor) -> torch.Tensor:
        x = self.region_proj(features) + self.location_proj(locations) + self.segment_embedding.weight[self.SEG_IMAGE]
        return self.region_norm(x)

    def node_embeddings(self) -> torch.Tensor:
        """Embedding row for every graph node: tokens first, then objects."""
        return torch.cat([self.token_embedding.weight, self.object_embedding.weight], dim=0)

    def graph_columns(self, node_counts: torch.Tensor) -> torch.Tensor:
        """``ReLU(M A W1) W2`` per meme, where column k of M is ``v_k E[k]``.

        Returned transposed, as ``(B, graph_tokens, d_model)``.
        """
        if self._adjacency is None:
            raise RuntimeError("the vgcn variant needs an adjacency matrix; call set_adjacency")
        if node_counts.shape[-1] != self.config.num_nodes:
            raise ValueError("node-count width does not match the graph")
        propagated = torch.sparse.mm(self._adjacency, self.gcn_w1)  # (|V|, h)
        active = torch.nonzero(node_counts.sum(dim=0), as_tuple=True)[0]
        emb = self.node_embeddings()[active]  # (k, d)
        weighted = node_counts[:, active, None] * emb[None]  # (B, k, d)
        hidden = torch.einsum("bkd,kh->bdh", weighted, propagated[active])
        return (F.relu(hidden) @ self.gcn_w2).transpose(1, 2)

    def vgcn_embed(self, node_counts: torch.Tensor) -> torch.Tensor:
        """Graph columns plus the graph segment and shared graph position
        embeddings, layer-normalized like the text and region embeddings."""
        graph = self.graph_columns(node_counts)
        return self.graph_norm(graph + self.segment_embedding.weight[self.SEG_GRAPH] + self.graph_position)

    def encode(self, x: torch.Tensor, mask: torch.Tensor, return_attention: bool = False):
        attention = []
        for layer in self.layers:
            x, weights = layer(x, mask)
            attention.append(weights)
        hidden = self.final_norm(x)
        pooled = torch.tanh(self.pooler(hidden[:, 0]))
        if return_attention:
            return hidden, pooled, attention
        return hidden, pooled

    def classify(self, pooled: torch.Tensor, sentiment: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
        if self.config.variant == "sentiment":
            if sentiment is None:
                raise ValueError("the sentiment variant needs a sentiment vector per record")
            if sentiment.shape[-1] != self.config.sentiment_dim:
                raise ValueError(f"sentiment dim {sentiment.shape[-1]} != {self.config.sentiment_dim}")
            pooled = torch.cat([pooled, sentiment], dim=-1)
        return {"a": self.head_a(pooled), "b": self.head_b(pooled)}

    def fuse(self, batch: Batch):
        parts = [self.embed_text(batch.token_ids), self.embed_regions(batch.region_features, batch.region_locations)]
        masks = [batch.text_mask, batch.region_mask]
        if self.config.uses_graph and self.config.graph_tokens > 0:
            parts.append(self.vgcn_embed(batch.node_counts))
            masks.append(torch.ones(len(batch), self.config.graph_tokens, dtype=torch.bool, device=batch.text_mask.device))
        return torch.cat(parts, dim=1), torch.cat(masks, dim=1)

    def forward(self, batch: Batch) -> dict[str, torch.Tensor]:
        x, mask = self.fuse(batch)
        _, pooled = self.encode(self.embedding_dropout(x), mask)
        return self.classify(pooled, batch.sentiment)

    @torch.no_grad()
    def predict_proba(self, batch: Batch) -> dict[str, torch.Tensor]:
        logits = self(batch)
        return {k: torch.sigmoid(v) for k, v in logits.items()}


def build_model(config: ModelConfig, adjacency=None, seed: int = 0, dtype=torch.float32) -> FusionClassifier:
    if config.uses_graph and adjacency is None:
        raise ValueError("the vgcn variant needs the normalized graph adjacency")
    model = FusionClassifier(config).reset_parameters(seed).to(dtype)
    if config.uses_graph:
        model.set_adjacency(adjacency)
    return model
