"""Building attributed graphs, normalizing adjacency, and round-tripping a dataset file.

Run: python demos/02_graphs_and_datasets.py
"""

import tempfile
from pathlib import Path

import numpy as np

from rdmn import AttributedGraph, DatasetInstance, DatasetSchema, Edge, load_dataset, save_dataset, split_dataset

# Three nodes with 2-d features; relation 1 is undirected, relation 2 a directed arc.
graph = AttributedGraph(
    node_features=np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
    edges=(Edge(1, 0, 1), Edge(1, 1, 2), Edge(2, 2, 0, directed=True)),
    n_relations=2,
)
print("raw adjacency, relation 1:\n", graph.adjacency[0])
# Columns are divided by their sums, so each node averages its incoming messages.
print("column-normalized, relation 1:\n", graph.normalized_adjacency[0])
print("relation 2 (only the arc target, node 0, has a nonzero column):\n", graph.normalized_adjacency[1])

schema = DatasetSchema(d_x=2, n_relations=2, n_classes=2, n_tasks=1)
data = [DatasetInstance(0, [graph], label=i % 2, id=f"g{i}") for i in range(10)]
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "toy.jsonl"
    save_dataset(path, data, schema)
    print("\nfirst two lines of the file:")
    print("\n".join(path.read_text().splitlines()[:2]))
    loaded, _ = load_dataset(path, schema)
    assert [x.to_dict() for x in loaded] == [x.to_dict() for x in data]

train, valid, test = split_dataset(data, (0.6, 0.2, 0.2), seed=0)
print("\nstratified split sizes:", len(train), len(valid), len(test))
