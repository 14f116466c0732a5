"""Relational dynamic memory network.

One memory component per input graph; each node becomes a memory cell
(a column of ``M_c``). A recurrent controller, started at the encoded
query, runs ``hops`` reasoning steps. Each step reads every component
with ``heads`` soft-attention heads, averages the reads over components
and then over heads, updates the controller through a forgetting gate,
and rewrites every memory cell from the controller state, its own content
and its typed, degree-normalized neighbourhood, again through a gate.
A small feedforward decoder maps ``[h_T, q]`` to class probabilities.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .graphs import DatasetSchema

MODEL_FORMAT = "rdmn-model"
MODEL_VERSION = 1


class ModelError(ValueError):
    """Model configuration or model file is unusable for the request."""


@dataclass(frozen=True)
class ModelConfig:
    d_x: int
    n_relations: int = 1
    n_classes: int = 2
    n_tasks: int = 1
    query_dim: int = 0
    d_q: int = 64
    d_m: int = 64
    d_a: int = 32
    hops: int = 10
    heads: int = 1
    dropout: float = 0.2
    decoder_hidden: Optional[int] = None
    gate_bias: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("d_x", "n_relations", "d_q", "d_m", "d_a", "heads"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hops < 0:
            raise ModelError(f"hops must be >= 0 (0 selects the mean-pool pathway), got {self.hops}")
        if self.n_classes < 2:
            raise ModelError(f"n_classes must be >= 2, got {self.n_classes}")
        if (self.n_tasks > 0) == (self.query_dim > 0):
            raise ModelError("set exactly one of n_tasks (task queries) or query_dim (dense queries)")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def for_schema(cls, schema: DatasetSchema, **kw):
        return cls(
            d_x=schema.d_x,
            n_relations=schema.n_relations,
            n_classes=schema.n_classes,
            n_tasks=schema.n_tasks,
            query_dim=schema.query_dim,
            **kw,
        )

    @property
    def hidden(self):
        return self.decoder_hidden or self.d_q

    @property
    def n_outputs(self):
        return 1 if self.n_classes == 2 else self.n_classes

    def compatible_with(self, schema):
        return (
            self.d_x == schema.d_x
            and self.n_relations == schema.n_relations
            and self.n_classes == schema.n_classes
            and self.n_tasks == schema.n_tasks
            and self.query_dim == schema.query_dim
        )


@dataclass
class EpisodeTrace:
    """What happened during one reasoning episode, for inspection."""

    attention: dict = field(default_factory=dict)  # (hop, component, head) -> weights over cells
    states: list = field(default_factory=list)  # h_0 .. h_T
    controller_gates: list = field(default_factory=list)  # alpha_h per hop
    memory_gates: dict = field(default_factory=dict)  # (hop, component) -> d_m x M gate matrix


def _glorot(rng, shape):
    fan_out, fan_in = shape if len(shape) == 2 else (1, shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def param_shapes(cfg: ModelConfig):
    """Ordered ``name -> (shape, init)`` for every trainable tensor."""
    dq, dm, da = cfg.d_q, cfg.d_m, cfg.d_a
    s = {}
    if cfg.n_tasks:
        s["query.embed"] = ((cfg.n_tasks, dq), "glorot")
    else:
        s["query.w"] = ((dq, cfg.query_dim), "glorot")
        s["query.b"] = ((dq,), "zero")
    s["load.w"] = ((dm, cfg.d_x), "glorot")
    s["load.b"] = ((dm,), "zero")
    for k in range(cfg.heads):
        s[f"read{k}.v"] = ((da,), "glorot")
        s[f"read{k}.w"] = ((da, dm), "glorot")
        s[f"read{k}.u"] = ((da, dq), "glorot")
    s["ctrl.w"] = ((dq, dq), "glorot")
    s["ctrl.u"] = ((dq, dm), "glorot")
    # gate nets are one affine layer over the concatenated inputs, stored by input block
    s["ctrl_gate.wh"] = ((dq, dq), "glorot")
    s["ctrl_gate.wr"] = ((dq, dm), "glorot")
    s["ctrl_gate.b"] = ((dq,), "gate")
    s["mem.u"] = ((dm, dq), "glorot")
    s["mem.w"] = ((dm, dm), "glorot")
    for r in range(1, cfg.n_relations + 1):
        s[f"mem.v{r}"] = ((dm, dm), "glorot")
    s["mem_gate.wm"] = ((dm, dm), "glorot")
    s["mem_gate.wh"] = ((dm, dq), "glorot")
    s["mem_gate.b"] = ((dm,), "gate")
    s["dec.w1"] = ((cfg.hidden, 2 * dq), "glorot")
    s["dec.b1"] = ((cfg.hidden,), "zero")
    s["dec.w2"] = ((cfg.n_outputs, cfg.hidden), "glorot")
    s["dec.b2"] = ((cfg.n_outputs,), "zero")
    return s


def init_params(cfg: ModelConfig):
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, (shape, kind) in param_shapes(cfg).items():
        if kind == "glorot":
            val = _glorot(rng, shape)
        elif kind == "gate":
            val = np.full(shape, cfg.gate_bias)
        else:
            val = np.zeros(shape)
        params[name] = Parameter(val, name)
    return params


class RDMN:
    """The model: a config plus an ordered dict of :class:`Parameter`."""

    def __init__(self, config: ModelConfig, params=None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        expected = param_shapes(config)
        if list(self.params) != list(expected):
            raise ModelError(f"parameter names {list(self.params)} do not match config {list(expected)}")
        for name, (shape, _) in expected.items():
            if self.params[name].shape != shape:
                raise ModelError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def __getitem__(self, name):
        return self.params[name]

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def get_values(self):
        return {k: p.value.copy() for k, p in self.params.items()}

    def set_values(self, values):
        for k, v in values.items():
            self.params[k].value = np.array(v, dtype=np.float64)

    # ------------------------------------------------------------ operators

    def q_encode(self, query):
        cfg = self.config
        if isinstance(query, (int, np.integer)):
            if not cfg.n_tasks or not 0 <= query < cfg.n_tasks:
                raise ModelError(f"task query {query} outside 0..{cfg.n_tasks - 1}")
            return ad.row(self["query.embed"], int(query))
        vec = np.asarray(query, dtype=np.float64)
        if not cfg.query_dim or vec.shape != (cfg.query_dim,):
            raise ModelError(f"dense query of shape {vec.shape}, model expects ({cfg.query_dim},)")
        return ad.add(ad.matmul(self["query.w"], vec), self["query.b"])

    def m_load(self, graph, q=None):
        """Memory matrix (one column per node) and normalized adjacency for one graph.

        ``q`` is accepted for query-dependent loading; this loader ignores it.
        """
        if graph.feature_dim != self.config.d_x:
            raise ModelError(f"graph node features have dim {graph.feature_dim}, model expects {self.config.d_x}")
        x = Tensor(graph.node_features.T)
        mem = ad.relu(ad.add(ad.matmul(self["load.w"], x), self["load.b"]))
        return mem, graph.normalized_adjacency

    def attention(self, mem, h, k, query_term=None):
        """Softmax over cells of ``v_k . tanh(W_k M[i] + U_k h)``.

        ``query_term`` may carry a precomputed ``U_k h`` shared across components.
        """
        if query_term is None:
            query_term = ad.matmul(self[f"read{k}.u"], h)
        pre = ad.add(ad.matmul(self[f"read{k}.w"], mem), query_term)
        scores = ad.matmul(self[f"read{k}.v"], ad.tanh(pre))
        return ad.softmax(scores)

    def attention_read(self, mem, h, k, query_term=None):
        a = self.attention(mem, h, k, query_term)
        return ad.matmul(mem, a), a

    def read_step(self, memories, h, trace=None, hop=0):
        """Average each head's reads over components, then average the heads."""
        head_reads = []
        for k in range(self.config.heads):
            comp_reads = []
            uh = ad.matmul(self[f"read{k}.u"], h)
            for c, mem in enumerate(memories):
                r, a = self.attention_read(mem, h, k, uh)
                comp_reads.append(r)
                if trace is not None:
                    trace.attention[(hop, c, k)] = a.value
            head_reads.append(ad.average(comp_reads))
        return ad.average(head_reads)

    def s_update(self, h_prev, r, trace=None):
        cand = ad.relu(ad.add(ad.matmul(self["ctrl.w"], h_prev), ad.matmul(self["ctrl.u"], r)))
        gate = ad.sigmoid(
            ad.add(ad.add(ad.matmul(self["ctrl_gate.wh"], h_prev), ad.matmul(self["ctrl_gate.wr"], r)), self["ctrl_gate.b"])
        )
        if trace is not None:
            trace.controller_gates.append(gate.value)
        return ad.add(ad.mul(gate, h_prev), ad.mul(ad.one_minus(gate), cand))

    def m_update(self, mem_prev, h, adj, trace=None, key=None):
        """Gated rewrite of every cell from the controller, itself and its typed neighbours."""
        total = ad.add(ad.matmul(self["mem.w"], mem_prev), ad.matmul(self["mem.u"], h))
        for r in range(adj.shape[0]):
            if not adj[r].any():
                continue
            msg = ad.matmul(mem_prev, Tensor(adj[r]))
            total = ad.add(total, ad.matmul(self[f"mem.v{r + 1}"], msg))
        cand = ad.relu(total)
        gate = ad.sigmoid(
            ad.add(ad.add(ad.matmul(self["mem_gate.wm"], mem_prev), ad.matmul(self["mem_gate.wh"], h)), self["mem_gate.b"])
        )
        if trace is not None:
            trace.memory_gates[key] = gate.value
        return ad.add(ad.mul(gate, mem_prev), ad.mul(ad.one_minus(gate), cand))

    def decode(self, h, q):
        hidden = ad.relu(ad.add(ad.matmul(self["dec.w1"], ad.concat([h, q])), self["dec.b1"]))
        logits = ad.add(ad.matmul(self["dec.w2"], hidden), self["dec.b2"])
        if self.config.n_classes == 2:
            # sigmoid head written as softmax([0, z]) so both outputs form a distribution
            logits = ad.concat([Tensor(np.zeros(1)), logits])
        return ad.softmax(logits)

    # ------------------------------------------------------------ episode

    def forward(self, instance, training=False, rng=None):
        """Run one reasoning episode; returns ``(probabilities, trace)``.

        With ``hops == 0`` the controller sees a single uniform (mean-pooled)
        read of the freshly loaded memory and no memory update happens. This
        is the structure-blind baseline pathway.
        """
        cfg = self.config
        if training and cfg.dropout > 0 and rng is None:
            raise ModelError("training mode with dropout needs an rng")
        trace = EpisodeTrace()
        q = self.q_encode(instance.query)
        h = q
        trace.states.append(h.value)
        loaded = [self.m_load(g, q) for g in instance.graphs]
        memories = [m for m, _ in loaded]
        adjs = [a for _, a in loaded]

        if cfg.hops == 0:
            pooled = ad.average([ad.mean(m, axis=1) for m in memories])
            h = self.s_update(h, pooled, trace)
            trace.states.append(h.value)
            return self.decode(ad.dropout(h, cfg.dropout, training, rng), q), trace

        for t in range(1, cfg.hops + 1):
            r = self.read_step(memories, h, trace, t)
            h = self.s_update(h, r, trace)
            memories = [self.m_update(m, h, a, trace, (t, c)) for c, (m, a) in enumerate(zip(memories, adjs))]
            if t == 1 or t == cfg.hops:
                h = ad.dropout(h, cfg.dropout, training, rng)
                memories = [ad.dropout(m, cfg.dropout, training, rng) for m in memories]
            trace.states.append(h.value)
        return self.decode(h, q), trace

    def predict_proba(self, instance):
        with ad.no_record():
            probs, _ = self.forward(instance)
        return probs.value


# ---------------------------------------------------------------- serialization


def save_model(model: RDMN, path):
    """Write config and every parameter (name, shape, row-major float64 values) as JSON."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": asdict(model.config),
        "params": [
            {"name": name, "shape": list(p.shape), "values": p.value.reshape(-1).tolist()}
            for name, p in model.params.items()
        ],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_model(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelError(f"{path} is not an {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelError(f"{path}: unsupported model version {doc.get('version')}, expected {MODEL_VERSION}")
    try:
        cfg = ModelConfig(**doc["config"])
        params = {}
        for entry in doc["params"]:
            shape = tuple(entry["shape"])
            values = np.array(entry["values"], dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise ModelError(f"parameter {entry['name']}: {values.size} values for shape {shape}")
            params[entry["name"]] = Parameter(values.reshape(shape), entry["name"])
    except (KeyError, TypeError) as exc:
        raise ModelError(f"{path}: corrupt model file ({exc!r})") from None
    return RDMN(cfg, params)
