"""Attributed multi-relational graphs, datasets of (query, graphs, label) and their JSONL format.

Dataset file layout (JSON Lines)::

    {"header": {"d_x": 4, "n_relations": 2, "n_classes": 2, "n_tasks": 3, "query_dim": 0}}
    {"id": "0", "query": {"task": 1}, "graphs": [{"nodes": [[...], ...],
        "edges": [{"r": 1, "i": 0, "j": 2, "directed": false}, ...]}], "label": 1}
    ...

Relation types are 1-based. ``query`` is either ``{"task": k}`` (one-hot task
lookup, requires ``n_tasks > 0``) or ``{"vec": [...]}`` (dense side
information of length ``query_dim``). Edges may carry ``"feat": [...]``;
features are kept but the model does not consume them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np


class GraphError(ValueError):
    """An attributed graph violates its structural contract."""


class DatasetError(ValueError):
    """A dataset file or instance failed to parse or validate."""


@dataclass(frozen=True)
class Edge:
    relation: int
    source: int
    target: int
    directed: bool = False
    features: Optional[tuple] = None

    def to_dict(self):
        d = {"r": self.relation, "i": self.source, "j": self.target, "directed": self.directed}
        if self.features is not None:
            d["feat"] = list(self.features)
        return d


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Nodes with feature vectors plus typed edges.

    ``node_features`` is an ``M x d_x`` array; row ``i`` belongs to node ``i``.
    """

    node_features: np.ndarray
    edges: tuple = ()
    n_relations: int = 1

    def __post_init__(self):
        feats = np.array(self.node_features, dtype=np.float64)
        if feats.ndim != 2:
            raise GraphError(f"node features must form an M x d_x matrix, got shape {feats.shape}")
        if feats.shape[0] < 1:
            raise GraphError("graph has no nodes")
        feats.setflags(write=False)
        object.__setattr__(self, "node_features", feats)
        object.__setattr__(self, "edges", tuple(self.edges))
        if self.n_relations < 1:
            raise GraphError(f"n_relations must be >= 1, got {self.n_relations}")
        m = feats.shape[0]
        for k, e in enumerate(self.edges):
            if not (0 <= e.source < m and 0 <= e.target < m):
                raise GraphError(f"edge {k} ({e.source}->{e.target}) references a node outside 0..{m - 1}")
            if not (1 <= e.relation <= self.n_relations):
                raise GraphError(f"edge {k} has relation type {e.relation}, expected 1..{self.n_relations}")

    @property
    def n_nodes(self):
        return self.node_features.shape[0]

    @property
    def feature_dim(self):
        return self.node_features.shape[1]

    @cached_property
    def adjacency(self):
        """Binary adjacency, shape ``(R, M, M)``; ``A[r-1, i, j] = 1`` for an edge i -> j."""
        m = self.n_nodes
        a = np.zeros((self.n_relations, m, m))
        for e in self.edges:
            a[e.relation - 1, e.source, e.target] = 1.0
            if not e.directed:
                a[e.relation - 1, e.target, e.source] = 1.0
        a.setflags(write=False)
        return a

    @cached_property
    def normalized_adjacency(self):
        return normalize_adjacency(self)

    def permuted(self, perm):
        """Relabel nodes so that old node ``i`` becomes node ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        edges = tuple(
            Edge(e.relation, int(perm[e.source]), int(perm[e.target]), e.directed, e.features) for e in self.edges
        )
        return AttributedGraph(self.node_features[inv], edges, self.n_relations)

    def to_dict(self):
        return {"nodes": self.node_features.tolist(), "edges": [e.to_dict() for e in self.edges]}


def normalize_adjacency(graph):
    """Column-normalize each relation's adjacency: ``Ahat[i, j] = A[i, j] / sum_i A[i, j]``.

    Columns with no incoming edge stay all-zero.
    """
    a = graph.adjacency
    col = a.sum(axis=1, keepdims=True)
    out = np.divide(a, col, out=np.zeros_like(a), where=col > 0)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DatasetSchema:
    d_x: int
    n_relations: int
    n_classes: int
    n_tasks: int = 0
    query_dim: int = 0

    def __post_init__(self):
        if self.d_x < 1 or self.n_relations < 1 or self.n_classes < 2:
            raise DatasetError(f"invalid schema {self}")
        if (self.n_tasks > 0) == (self.query_dim > 0):
            raise DatasetError("schema needs exactly one of n_tasks > 0 (task queries) or query_dim > 0 (dense queries)")

    def to_dict(self):
        return {
            "d_x": self.d_x,
            "n_relations": self.n_relations,
            "n_classes": self.n_classes,
            "n_tasks": self.n_tasks,
            "query_dim": self.query_dim,
        }


Query = Union[int, np.ndarray]


@dataclass(frozen=True, eq=False)
class DatasetInstance:
    query: Query
    graphs: tuple
    label: int
    id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if not self.graphs:
            raise DatasetError(f"instance {self.id!r} has no graphs")
        if not isinstance(self.query, (int, np.integer)):
            q = np.array(self.query, dtype=np.float64)
            q.setflags(write=False)
            object.__setattr__(self, "query", q)
        else:
            object.__setattr__(self, "query", int(self.query))

    @property
    def is_task_query(self):
        return isinstance(self.query, int)

    def validate(self, schema):
        where = f"instance {self.id!r}"
        if self.is_task_query:
            if schema.n_tasks == 0 or not 0 <= self.query < schema.n_tasks:
                raise DatasetError(f"{where}: task query {self.query} outside 0..{schema.n_tasks - 1}")
        elif schema.query_dim == 0 or self.query.shape != (schema.query_dim,):
            raise DatasetError(f"{where}: dense query of shape {self.query.shape}, expected ({schema.query_dim},)")
        if not 0 <= self.label < schema.n_classes:
            raise DatasetError(f"{where}: label {self.label} outside 0..{schema.n_classes - 1}")
        for c, g in enumerate(self.graphs):
            if g.feature_dim != schema.d_x:
                raise DatasetError(f"{where}, graph {c}: node feature dim {g.feature_dim}, expected {schema.d_x}")
            if g.n_relations != schema.n_relations:
                raise DatasetError(f"{where}, graph {c}: declares {g.n_relations} relations, expected {schema.n_relations}")

    def to_dict(self):
        q = {"task": self.query} if self.is_task_query else {"vec": self.query.tolist()}
        d = {"query": q, "graphs": [g.to_dict() for g in self.graphs], "label": int(self.label)}
        if self.id is not None:
            d = {"id": self.id, **d}
        return d


# ---------------------------------------------------------------- JSONL I/O


def _graph_from_dict(d, n_relations, where):
    try:
        edges = tuple(
            Edge(
                int(e["r"]),
                int(e["i"]),
                int(e["j"]),
                bool(e.get("directed", False)),
                tuple(float(v) for v in e["feat"]) if e.get("feat") is not None else None,
            )
            for e in d.get("edges", [])
        )
        nodes = d["nodes"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: malformed graph record ({exc})") from None
    lengths = {len(x) for x in nodes}
    if len(lengths) > 1:
        raise DatasetError(f"{where}: node feature vectors have differing lengths {sorted(lengths)}")
    try:
        return AttributedGraph(np.array(nodes, dtype=np.float64), edges, n_relations)
    except GraphError as exc:
        raise DatasetError(f"{where}: {exc}") from None


def instance_from_dict(d, schema, where="record"):
    where = f"{where} (instance {d.get('id')!r})" if isinstance(d, dict) and "id" in d else where
    try:
        q = d["query"]
        query = int(q["task"]) if "task" in q else np.array(q["vec"], dtype=np.float64)
        graphs = [_graph_from_dict(g, schema.n_relations, f"{where}, graph {c}") for c, g in enumerate(d["graphs"])]
        label = int(d["label"])
    except DatasetError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: malformed instance ({exc!r})") from None
    inst = DatasetInstance(query, graphs, label, d.get("id"))
    try:
        inst.validate(schema)
    except DatasetError as exc:
        raise DatasetError(f"{where}: {exc}") from None
    return inst


def save_dataset(path, instances, schema):
    """Write header plus one instance per line. Output bytes depend only on the inputs."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": schema.to_dict()}) + "\n")
        for inst in instances:
            inst.validate(schema)
            fh.write(json.dumps(inst.to_dict(), separators=(",", ":")) + "\n")


def load_dataset(path, schema=None):
    """Parse and validate a JSONL dataset; returns ``(instances, schema)``.

    If ``schema`` is given the file header must match it.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file {path} does not exist")
    instances = []
    header = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if header is None:
                if not isinstance(record, dict) or "header" not in record:
                    raise DatasetError(f"{path}:{lineno}: first record must be a header")
                try:
                    header = DatasetSchema(**record["header"])
                except TypeError as exc:
                    raise DatasetError(f"{path}:{lineno}: bad header ({exc})") from None
                if schema is not None and header != schema:
                    raise DatasetError(f"{path}: header {header.to_dict()} does not match expected schema {schema.to_dict()}")
                continue
            instances.append(instance_from_dict(record, header, f"{path}:{lineno}"))
    if header is None:
        raise DatasetError(f"{path}: empty file, missing header")
    return instances, header


# ---------------------------------------------------------------- splitting


def split_dataset(data: Sequence, fractions=(0.8, 0.1, 0.1), seed=0):
    """Stratified, seeded split into (train, valid, test).

    Within each label the instances are shuffled and cut by the fractions
    (largest-remainder rounding); each split keeps the input order.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {tuple(fractions)}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(data), dtype=int)
    labels = np.array([inst.label for inst in data], dtype=int)
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(len(idx))]
        raw = fr * len(idx)
        counts = np.floor(raw).astype(int)
        short = len(idx) - counts.sum()
        for k in np.argsort(-(raw - counts), kind="stable")[:short]:
            counts[k] += 1
        bounds = np.cumsum(counts)
        assignment[idx[: bounds[0]]] = 0
        assignment[idx[bounds[0] : bounds[1]]] = 1
        assignment[idx[bounds[1] :]] = 2
    return tuple([data[i] for i in np.flatnonzero(assignment == s)] for s in range(3))
