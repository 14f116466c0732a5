"""Predicting a property of a pair of graphs, against a structure-blind baseline.

A pair is positive when both graphs contain an edge with the same pair of
endpoint colors. With hops=0 the model only sees mean-pooled node features,
so it cannot see edges at all. Takes several minutes.

Run: python demos/05_pair_interaction.py
"""

from rdmn import RDMN, ModelConfig, TaskSpec, TrainConfig, evaluate, generate, split_dataset, train

data, schema = generate(TaskSpec("pair", n_instances=4000, n_colors=4, min_nodes=3, max_nodes=8, seed=1))
tr, va, te = split_dataset(data, (0.8, 0.1, 0.1), seed=0)

for hops in (3, 0):
    model = RDMN(ModelConfig.for_schema(schema, d_q=32, d_m=32, d_a=32, hops=hops, dropout=0.0))
    train(model, tr, va, TrainConfig(lr=3e-3, epochs=25))
    name = "mean-pooled baseline" if hops == 0 else f"{hops} hops"
    print(f"{name}: {evaluate(model, te).summary()}")
