"""One untrained reasoning episode, with the attention and gate trace printed per hop.

Run: python demos/03_reasoning_episode.py
"""

import numpy as np

from rdmn import RDMN, ModelConfig, TaskSpec, generate

data, schema = generate(TaskSpec("pair", n_instances=4, seed=3))
instance = data[0]
model = RDMN(ModelConfig.for_schema(schema, d_q=8, d_m=8, d_a=4, hops=3, heads=2, dropout=0.0))

probs, trace = model.forward(instance)
print(f"{len(instance.graphs)} graphs with {[g.n_nodes for g in instance.graphs]} nodes, label {instance.label}")
print("p(label = 1) =", probs.value[1])

np.set_printoptions(precision=3, suppress=True)
for (hop, component, head), weights in sorted(trace.attention.items()):
    print(f"hop {hop} graph {component} head {head}: {weights}")
for hop, gate in enumerate(trace.controller_gates, start=1):
    print(f"hop {hop} mean controller gate {gate.mean():.3f}")
