"""Synthetic (query, graphs, label) problems with brute-force label oracles.

Three families, all over randomly colored graphs whose node features are
one-hot colors:

``multitask``
    one graph, query = task ``k``; positive iff some edge joins two nodes
    of color ``k``.
``pair``
    two graphs; positive iff they share an edge motif, i.e. an unordered
    endpoint color pair present in both.
``relation``
    one graph with ``R >= 2`` edge types; positive iff a type-1 path
    ``a - b - c`` (three distinct nodes) has ``color(a) == color(c)``.
    Edges of other types are decoys.

Generators label instances with vectorized adjacency algebra; the oracle
in :func:`oracle_label` re-derives every label by plain enumeration over
edges and node triples.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import permutations

import numpy as np

from .graphs import AttributedGraph, DatasetInstance, DatasetSchema, Edge

FAMILIES = ("multitask", "pair", "relation")


class GenerationError(RuntimeError):
    """Could not produce an instance with the requested label."""


@dataclass(frozen=True)
class TaskSpec:
    family: str
    n_instances: int = 1000
    min_nodes: int = 4
    max_nodes: int = 8
    n_colors: int = 4
    n_relations: int = 1
    n_tasks: int = 1
    edge_prob: float = 0.3
    positive_rate: float = 0.5
    side_info: bool = False
    max_retries: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.min_nodes < 2 or self.max_nodes < self.min_nodes:
            raise ValueError(f"node count range [{self.min_nodes}, {self.max_nodes}] invalid (need 2 <= min <= max)")
        if self.n_colors < 2:
            raise ValueError(f"need at least 2 colors, got {self.n_colors}")
        if self.n_instances < 1:
            raise ValueError("n_instances must be >= 1")
        if not 0.0 <= self.positive_rate <= 1.0:
            raise ValueError(f"positive_rate must lie in [0, 1], got {self.positive_rate}")
        if self.family == "multitask" and not 2 <= self.n_tasks <= self.n_colors:
            raise ValueError(f"multitask needs 2 <= n_tasks <= n_colors, got n_tasks={self.n_tasks}")
        if self.family == "relation" and self.n_relations < 2:
            raise ValueError("relation family needs n_relations >= 2")
        if self.side_info and self.family != "pair":
            raise ValueError("side-information queries are only defined for the pair family")

    def schema(self):
        if self.side_info:
            return DatasetSchema(self.n_colors, self.n_relations, 2, n_tasks=0, query_dim=self.n_colors)
        n_tasks = self.n_tasks if self.family == "multitask" else 1
        return DatasetSchema(self.n_colors, self.n_relations, 2, n_tasks=n_tasks)


# ---------------------------------------------------------------- random graphs


def random_colored_graph(rng, spec, n_colors=None):
    """Erdos-Renyi graph with uniform colors and uniform relation types."""
    n_colors = n_colors or spec.n_colors
    m = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
    colors = rng.integers(0, n_colors, size=m)
    feats = np.zeros((m, spec.n_colors))
    feats[np.arange(m), colors] = 1.0
    edges = []
    for i in range(m):
        for j in range(i + 1, m):
            if rng.random() < spec.edge_prob:
                r = int(rng.integers(1, spec.n_relations + 1))
                edges.append(Edge(r, i, j, False))
    return AttributedGraph(feats, tuple(edges), spec.n_relations)


def _colors(graph):
    return graph.node_features.argmax(axis=1)


def _onehot(graph):
    return graph.node_features


def _sym(graph, relation=None):
    a = graph.adjacency if relation is None else graph.adjacency[relation - 1 : relation]
    a = a.sum(axis=0)
    return ((a + a.T) > 0).astype(float)


def _motif_matrix(graph):
    c = _onehot(graph)
    p = c.T @ _sym(graph) @ c
    return p > 0


def fast_label(family, graphs, query):
    """Vectorized labelling used by the generators."""
    if family == "multitask":
        c = _onehot(graphs[0])[:, query]
        return int(c @ _sym(graphs[0]) @ c > 0)
    if family == "pair":
        return int(np.any(_motif_matrix(graphs[0]) & _motif_matrix(graphs[1])))
    if family == "relation":
        g = graphs[0]
        a1 = _sym(g, 1)
        two_step = a1 @ a1
        np.fill_diagonal(two_step, 0.0)
        c = _onehot(g)
        same = c @ c.T
        return int(np.any(two_step * same > 0))
    raise ValueError(f"unknown family {family!r}")


# ---------------------------------------------------------------- oracle


def oracle_label(family, graphs, query=0):
    """Label by direct enumeration (edges, motif sets, node triples)."""
    if family == "multitask":
        g = graphs[0]
        col = [int(np.argmax(x)) for x in g.node_features]
        return int(any(col[e.source] == query and col[e.target] == query for e in g.edges if e.source != e.target))
    if family == "pair":
        motif_sets = []
        for g in graphs:
            col = [int(np.argmax(x)) for x in g.node_features]
            motif_sets.append({tuple(sorted((col[e.source], col[e.target]))) for e in g.edges if e.source != e.target})
        return int(bool(motif_sets[0] & motif_sets[1]))
    if family == "relation":
        g = graphs[0]
        col = [int(np.argmax(x)) for x in g.node_features]
        linked = set()
        for e in g.edges:
            if e.relation == 1:
                linked.add((e.source, e.target))
                linked.add((e.target, e.source))
        for a, b, c in permutations(range(g.n_nodes), 3):
            if (a, b) in linked and (b, c) in linked and col[a] == col[c]:
                return 1
        return 0
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


# ---------------------------------------------------------------- generators


def _sample(rng, spec, want, make):
    for _ in range(spec.max_retries):
        graphs, query = make()
        if fast_label(spec.family, graphs, query) == want:
            return graphs, query
    raise GenerationError(
        f"{spec.family}: no instance with label {want} after {spec.max_retries} draws; "
        "adjust edge_prob, node range or positive_rate"
    )


def _side_vector(graphs, n_colors):
    hists = [np.bincount(_colors(g), minlength=n_colors) / g.n_nodes for g in graphs]
    return np.mean(hists, axis=0)


def _generate(spec, make):
    rng = np.random.default_rng(spec.seed)
    out = []
    for n in range(spec.n_instances):
        want = int(rng.random() < spec.positive_rate)
        graphs, query = _sample(rng, spec, want, lambda: make(rng))
        out.append(DatasetInstance(query, graphs, want, id=str(n)))
    return out, spec.schema()


def gen_single_graph_multitask(spec):
    if spec.family != "multitask":
        spec = replace(spec, family="multitask")

    def make(rng):
        task = int(rng.integers(0, spec.n_tasks))
        return [random_colored_graph(rng, spec)], task

    return _generate(spec, make)


def gen_graph_pair_interaction(spec):
    if spec.family != "pair":
        spec = replace(spec, family="pair")

    def make(rng):
        graphs = [random_colored_graph(rng, spec), random_colored_graph(rng, spec)]
        query = _side_vector(graphs, spec.n_colors) if spec.side_info else 0
        return graphs, query

    return _generate(spec, make)


def gen_relation_type_task(spec):
    if spec.family != "relation":
        spec = replace(spec, family="relation")

    def make(rng):
        return [random_colored_graph(rng, spec)], 0

    return _generate(spec, make)


GENERATORS = {
    "multitask": gen_single_graph_multitask,
    "pair": gen_graph_pair_interaction,
    "relation": gen_relation_type_task,
}


def generate(spec):
    """Dispatch on ``spec.family``; returns ``(instances, schema)``."""
    return GENERATORS[spec.family](spec)


def restrict_to_task(instances, task):
    """Instances of one task, re-queried as task 0 (for single-task training)."""
    return [DatasetInstance(0, inst.graphs, inst.label, inst.id) for inst in instances if inst.query == task]
