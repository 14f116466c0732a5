"""Dense query vectors instead of task indices.

With side_info=True the query is a feature vector (here the mean color
histogram of the pair), encoded by a linear map rather than a lookup.

Run: python demos/06_side_information_query.py
"""

from rdmn import RDMN, ModelConfig, TaskSpec, TrainConfig, evaluate, generate, split_dataset, train

data, schema = generate(TaskSpec("pair", n_instances=800, side_info=True, seed=2))
print("query of the first instance:", data[0].query)
tr, va, te = split_dataset(data, (0.8, 0.1, 0.1), seed=0)
model = RDMN(ModelConfig.for_schema(schema, d_q=16, d_m=16, d_a=8, hops=2, dropout=0.0))
train(model, tr, va, TrainConfig(lr=3e-3, epochs=5))
print(evaluate(model, te).summary())
