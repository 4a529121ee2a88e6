"""
Soft voting over a small ensemble
=================================

Train three short-lived members with different seeds and variants, average
their probabilities, and compare each member with the ensemble.

    python3 demos/soft_voting.py
"""

from pathlib import Path

import torch

from memefusion import synthetic
from memefusion.data_ingest import (
    load_dataset,
    load_region_features,
    load_sentiment_features,
    region_feature_dim,
    split_dataset,
)
from memefusion.evaluation import ensemble_predictions, evaluation_report
from memefusion.features import build_example
from memefusion.model import ModelConfig, build_model
from memefusion.training import TrainConfig, predict, train
from memefusion.vocab_graph import load_graph, normalize

TESTS = Path(__file__).resolve().parents[1] / "tests" / "data"
torch.set_num_threads(1)

vocab = synthetic.fixture_vocab()
records = load_dataset(TESTS / "synthetic" / "dataset.tsv")
regions = load_region_features(TESTS / "synthetic" / "regions.jsonl", 0.7)
sentiment = load_sentiment_features(TESTS / "synthetic" / "sentiment.jsonl")
graph = load_graph(TESTS / "golden" / "corpus_graph.json")
split = split_dataset(records, (0.8, 0.1, 0.1), seed=1)
dim = region_feature_dim(regions)


def member(variant, seed):
    make = lambda part: [build_example(r, vocab, regions, dim, graph.num_object_classes, sentiment) for r in part]
    train_ex, dev_ex, held_ex = (make(p) for p in split.parts())
    config = ModelConfig.from_preset(
        "toy", variant=variant, vocab_size=len(vocab), num_object_classes=graph.num_object_classes, region_dim=dim,
        sentiment_dim=len(sentiment[records[0].id].values) if variant == "sentiment" else 0,
        graph_tokens=16 if variant == "vgcn" else 0,
    )
    model = build_model(config, normalize(graph) if variant == "vgcn" else None, seed=seed)
    # deliberately short runs so the members disagree
    cfg = TrainConfig.for_variant(variant, lr=1e-3, warmup_steps=20, batch_size=8, max_epochs=6, patience=6, seed=seed)
    return predict(train(model, train_ex, dev_ex, cfg).model, held_ex)


members = {"vgcn seed 0": member("vgcn", 0), "vgcn seed 1": member("vgcn", 1), "sentiment seed 0": member("sentiment", 0)}
members["ensemble"] = ensemble_predictions(list(members.values()))

for label, preds in members.items():
    report = evaluation_report(preds, split.validation)
    print(f"{label:>17}: task A {report['task_a']['weighted']['f1']:.3f}  task B {report['task_b']['weighted']['f1']:.3f}")
