"""
Training a toy graph-fused classifier
=====================================

Fit the small vgcn variant on the separable synthetic memes, then score
the held-out validation split. Takes about half a minute on one CPU core.

    python3 demos/train_toy_classifier.py
"""

from pathlib import Path

import torch

from memefusion import synthetic
from memefusion.data_ingest import load_dataset, load_region_features, region_feature_dim, split_dataset
from memefusion.evaluation import evaluation_report
from memefusion.features import build_example
from memefusion.model import ModelConfig, build_model
from memefusion.training import TrainConfig, predict, train
from memefusion.vocab_graph import load_graph, normalize

TESTS = Path(__file__).resolve().parents[1] / "tests" / "data"
torch.set_num_threads(1)

vocab = synthetic.fixture_vocab()
records = load_dataset(TESTS / "synthetic" / "dataset.tsv")
regions = load_region_features(TESTS / "synthetic" / "regions.jsonl", 0.7)
graph = load_graph(TESTS / "golden" / "corpus_graph.json")

# a stratified 80/10/10 split keeps the misogynous rate equal across parts
split = split_dataset(records, (0.8, 0.1, 0.1), seed=1)
dim = region_feature_dim(regions)


def examples(part):
    return [build_example(r, vocab, regions, dim, graph.num_object_classes) for r in part]


train_ex, dev_ex, held_ex = (examples(p) for p in split.parts())

config = ModelConfig.from_preset("toy", variant="vgcn", vocab_size=len(vocab),
                                 num_object_classes=graph.num_object_classes, region_dim=dim)
model = build_model(config, normalize(graph), seed=0)
print(f"{sum(p.numel() for p in model.parameters())} parameters")

# the synthetic set is tiny, so a higher rate and a longer patience than
# the shipped defaults
cfg = TrainConfig.from_json(TESTS / "train_synthetic.json", variant="vgcn")
result = train(model, train_ex, dev_ex, cfg,
               on_epoch=lambda e: print(f"epoch {e.epoch:2d} loss {e.train_loss:.4f} dev F1 {e.val_weighted_f1:.3f}"))
print(f"best epoch {result.history.best_epoch} ({result.history.stop_reason})")

report = evaluation_report(predict(result.model, held_ex), split.validation)
print(f"held-out task A weighted-F1 {report['task_a']['weighted']['f1']:.3f}")
print(f"held-out task B weighted-F1 {report['task_b']['weighted']['f1']:.3f}")
