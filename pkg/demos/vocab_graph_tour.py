"""
Building a token/object co-occurrence graph
===========================================

Count which caption tokens and detected object classes appear together in
the fixture corpus, keep the pairs with a high normalized PMI, then look at
the normalized adjacency the graph branch consumes.

    python3 demos/vocab_graph_tour.py
"""

from pathlib import Path

import numpy as np

from memefusion import synthetic
from memefusion.data_ingest import load_dataset, load_region_features
from memefusion.features import corpus_nodes
from memefusion.vocab_graph import build_graph, count_cooccurrences, graph_stats, normalize

DATA = Path(__file__).resolve().parents[1] / "tests" / "data" / "corpus"

# one node multiset per meme: wordpiece ids first, then |V_text| + class id
vocab = synthetic.fixture_vocab()
records = load_dataset(DATA / "dataset.tsv")
regions = load_region_features(DATA / "regions.jsonl", min_confidence=0.7)
bags = list(corpus_nodes(records, vocab, regions, synthetic.NUM_OBJECT_CLASSES))
print(f"{len(bags)} memes, {sum(len(b) for b in bags)} node occurrences")

# counting is by presence, so a token repeated in one caption counts once
counts = count_cooccurrences(bags)
graph = build_graph(counts, min_npmi=0.3, num_text_tokens=len(vocab),
                    num_object_classes=synthetic.NUM_OBJECT_CLASSES)
print(graph_stats(graph))


def name(node):
    kind, local = graph.node_kind(node)
    return vocab.tokens[local] if kind == "token" else f"<object {local}>"


# the strongest associations that cross modalities
cross = [e for e in graph.edges if graph.node_kind(e[0])[0] != graph.node_kind(e[1])[0]]
print(f"{len(cross)} token/object edges, for example:")
for i, j, w in sorted(cross, key=lambda e: -e[2])[:8]:
    print(f"  {name(i):>14} -- {name(j):<14} npmi {w:.3f}")

# the convolution uses D^-1/2 (A + I) D^-1/2, whose spectrum lies in [-1, 1]
a_hat = normalize(graph)
nodes = sorted(graph.nodes)
dense = a_hat[nodes][:, nodes].toarray()
eig = np.linalg.eigvalsh(dense)
print(f"restricted to {len(nodes)} active nodes: eigenvalues in [{eig.min():.3f}, {eig.max():.3f}]")
