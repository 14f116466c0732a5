import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdmn import autodiff as ad
from rdmn.autodiff import Tensor
from rdmn.graphs import AttributedGraph, DatasetInstance
from rdmn.model import ModelConfig, ModelError, RDMN, load_model, save_model

import reference
from conftest import fd_max_error, make_graph, small_model


def set_params(model, **values):
    for name, v in values.items():
        model.params[name.replace("__", ".")].value = np.array(v, dtype=float)


def random_instance(rng, n_graphs=2, n_relations=2, n_tasks=2, n_colors=3):
    graphs = []
    for _ in range(n_graphs):
        m = int(rng.integers(1, 6))
        colors = rng.integers(0, n_colors, size=m)
        edges = [
            (int(rng.integers(1, n_relations + 1)), int(rng.integers(m)), int(rng.integers(m)), bool(rng.random() < 0.3))
            for _ in range(int(rng.integers(0, 2 * m)))
        ]
        graphs.append(make_graph(colors, edges, n_colors, n_relations))
    return DatasetInstance(int(rng.integers(n_tasks)), graphs, int(rng.integers(2)))


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(hops=-1), dict(heads=0), dict(d_m=0), dict(dropout=1.0), dict(n_tasks=0)])
    def test_invalid(self, bad):
        with pytest.raises(ModelError):
            ModelConfig(**{**dict(d_x=3, n_tasks=2), **bad})

    def test_default_hops(self):
        assert ModelConfig(d_x=2).hops == 10


class TestQueryEncode:
    def test_lookup_row(self):
        model = small_model(n_tasks=3)
        np.testing.assert_array_equal(model.q_encode(2).value, model["query.embed"].value[2])

    def test_same_task_same_vector(self):
        model = small_model()
        np.testing.assert_array_equal(model.q_encode(1).value, model.q_encode(1).value)

    def test_dense_zero(self):
        model = RDMN(ModelConfig(d_x=3, n_tasks=0, query_dim=4, d_q=5, d_m=4, d_a=3))
        np.testing.assert_array_equal(model.q_encode(np.zeros(4)).value, np.zeros(5))

    def test_errors(self):
        with pytest.raises(ModelError, match="task query 5"):
            small_model().q_encode(5)
        dense = RDMN(ModelConfig(d_x=3, n_tasks=0, query_dim=4, d_q=5))
        with pytest.raises(ModelError, match="dense query"):
            dense.q_encode(np.zeros(3))


class TestMemoryLoad:
    def test_zero_features_zero_memory(self):
        model = small_model()
        g = AttributedGraph(np.zeros((3, 3)), (), 2)
        mem, _ = model.m_load(g)
        np.testing.assert_array_equal(mem.value, np.zeros((4, 3)))

    def test_permutation_equivariance(self, rng):
        model = small_model()
        model["load.b"].value = rng.normal(size=4)
        g = make_graph([0, 1, 2, 2], [(1, 0, 1), (2, 2, 3)], n_relations=2)
        perm = [2, 0, 3, 1]
        a, _ = model.m_load(g)
        b, _ = model.m_load(g.permuted(perm))
        np.testing.assert_array_equal(b.value[:, perm], a.value)

    def test_single_node(self):
        model = small_model()
        mem, adj = model.m_load(make_graph([1], [], n_relations=2))
        assert mem.shape == (4, 1)
        assert not adj.any()

    def test_feature_dim_mismatch(self):
        with pytest.raises(ModelError, match="dim 2"):
            small_model().m_load(AttributedGraph(np.ones((2, 2)), (), 2))


class TestAttentionRead:
    def test_equal_columns(self, rng):
        model = small_model()
        v = rng.normal(size=4)
        mem = Tensor(np.tile(v[:, None], (1, 5)))
        for _ in range(3):
            r, a = model.attention_read(mem, Tensor(rng.normal(size=5)), 0)
            np.testing.assert_allclose(r.value, v, rtol=1e-12)

    def test_single_cell(self, rng):
        model = small_model()
        cell = rng.normal(size=(4, 1))
        r, a = model.attention_read(Tensor(cell), Tensor(rng.normal(size=5)), 1)
        np.testing.assert_array_equal(a.value, [1.0])
        np.testing.assert_allclose(r.value, cell[:, 0])

    def test_hand_evaluated_mixture(self):
        model = RDMN(ModelConfig(d_x=1, n_tasks=1, d_q=1, d_m=2, d_a=1, hops=1))
        set_params(model, read0__v=[2.0], read0__w=[[1.0, -0.5]], read0__u=[[0.3]])
        mem = np.array([[1.0, 0.0], [0.0, 2.0]])
        h = np.array([1.0])
        r, a = model.attention_read(Tensor(mem), Tensor(h), 0)
        s0 = 2.0 * math.tanh(1.0 * 1.0 - 0.5 * 0.0 + 0.3)
        s1 = 2.0 * math.tanh(1.0 * 0.0 - 0.5 * 2.0 + 0.3)
        a0 = math.exp(s0) / (math.exp(s0) + math.exp(s1))
        expected = [a0 * 1.0 + (1 - a0) * 0.0, a0 * 0.0 + (1 - a0) * 2.0]
        np.testing.assert_allclose(a.value, [a0, 1 - a0], rtol=1e-14)
        np.testing.assert_allclose(r.value, expected, rtol=1e-14)


class TestReadStep:
    def test_one_component_one_head(self, rng):
        model = small_model(heads=1)
        mem = Tensor(rng.normal(size=(4, 3)))
        h = Tensor(rng.normal(size=5))
        r, _ = model.attention_read(mem, h, 0)
        np.testing.assert_allclose(model.read_step([mem], h).value, r.value, rtol=1e-15)

    def test_identical_components(self, rng):
        model = small_model(heads=1)
        mem = rng.normal(size=(4, 3))
        h = Tensor(rng.normal(size=5))
        single = model.read_step([Tensor(mem)], h).value
        both = model.read_step([Tensor(mem), Tensor(mem.copy())], h).value
        np.testing.assert_allclose(both, single, rtol=1e-15)

    def test_two_heads_midpoint_by_hand(self):
        model = RDMN(ModelConfig(d_x=1, n_tasks=1, d_q=1, d_m=2, d_a=1, hops=1, heads=2))
        set_params(
            model,
            read0__v=[1.0], read0__w=[[1.0, 0.0]], read0__u=[[0.0]],
            read1__v=[1.0], read1__w=[[0.0, 1.0]], read1__u=[[0.0]],
        )
        mem = np.array([[3.0, 0.0], [0.0, 1.0]])

        def hand_read(scores):
            w = np.exp(scores) / np.exp(scores).sum()
            return mem @ w

        head0 = hand_read(np.tanh(np.array([3.0, 0.0])))
        head1 = hand_read(np.tanh(np.array([0.0, 1.0])))
        out = model.read_step([Tensor(mem)], Tensor([0.5]))
        np.testing.assert_allclose(out.value, (head0 + head1) / 2, rtol=1e-14)


class TestStateUpdate:
    def _saturate(self, model, bias):
        model["ctrl_gate.wh"].value[:] = 0
        model["ctrl_gate.wr"].value[:] = 0
        model["ctrl_gate.b"].value[:] = bias

    def test_gate_at_one_copies(self, rng):
        model = small_model()
        self._saturate(model, 30.0)
        h = rng.normal(size=5)
        out = model.s_update(Tensor(h), Tensor(rng.normal(size=4)))
        np.testing.assert_allclose(out.value, h, atol=1e-9)

    def test_gate_at_zero_takes_candidate(self, rng):
        model = small_model()
        self._saturate(model, -30.0)
        h, r = rng.normal(size=5), rng.normal(size=4)
        cand = np.maximum(model["ctrl.w"].value @ h + model["ctrl.u"].value @ r, 0)
        np.testing.assert_allclose(model.s_update(Tensor(h), Tensor(r)).value, cand, atol=1e-9)

    def test_matches_reference(self, rng):
        model = small_model()
        p = {k: v.value for k, v in model.params.items()}
        for _ in range(5):
            h, r = rng.normal(size=5), rng.normal(size=4)
            gate = reference.sigmoid(p["ctrl_gate.wh"] @ h + p["ctrl_gate.wr"] @ r + p["ctrl_gate.b"])
            want = gate * h + (1 - gate) * reference.relu(p["ctrl.w"] @ h + p["ctrl.u"] @ r)
            np.testing.assert_allclose(model.s_update(Tensor(h), Tensor(r)).value, want, rtol=1e-13, atol=1e-15)


class TestMemoryUpdate:
    def test_no_edges_ignores_relation_weights(self, rng):
        model = small_model()
        g = make_graph([0, 1, 2], [], n_relations=2)
        mem = Tensor(rng.normal(size=(4, 3)))
        h = Tensor(rng.normal(size=5))
        before = model.m_update(mem, h, g.normalized_adjacency).value
        model["mem.v1"].value = rng.normal(size=(4, 4))
        model["mem.v2"].value = rng.normal(size=(4, 4))
        np.testing.assert_array_equal(model.m_update(mem, h, g.normalized_adjacency).value, before)
        # each cell depends only on itself and h
        cols = [model.m_update(Tensor(mem.value[:, [i]]), h, np.zeros((2, 1, 1))).value[:, 0] for i in range(3)]
        np.testing.assert_allclose(np.stack(cols, axis=1), before, rtol=1e-14)

    def test_gates_at_one_freeze_memory(self, rng):
        model = small_model()
        model["mem_gate.wm"].value[:] = 0
        model["mem_gate.wh"].value[:] = 0
        model["mem_gate.b"].value[:] = 30.0
        g = make_graph([0, 1, 2], [(1, 0, 1), (2, 1, 2)], n_relations=2)
        mem = rng.normal(size=(4, 3))
        out = model.m_update(Tensor(mem), Tensor(rng.normal(size=5)), g.normalized_adjacency)
        np.testing.assert_allclose(out.value, mem, atol=1e-9)

    def test_path_graph_by_hand(self):
        model = RDMN(ModelConfig(d_x=1, n_tasks=1, d_q=2, d_m=2, d_a=1, hops=1))
        set_params(
            model,
            mem__u=[[1.0, 0.0], [0.0, 1.0]],
            mem__w=np.eye(2),
            mem__v1=[[0.0, 1.0], [1.0, 0.0]],
            mem_gate__wm=np.zeros((2, 2)),
            mem_gate__wh=np.zeros((2, 2)),
            mem_gate__b=[-30.0, -30.0],
        )
        g = AttributedGraph(np.zeros((3, 1)), (make_graph([0, 0, 0], [(1, 0, 1), (1, 1, 2)]).edges), 1)
        mem = np.array([[1.0, 2.0, 3.0], [0.0, 1.0, -4.0]])
        h = np.array([0.5, -1.0])
        # neighbour means: node0 <- node1, node1 <- mean(node0, node2), node2 <- node1
        n0 = np.array([2.0, 1.0])
        n1 = np.array([(1.0 + 3.0) / 2, (0.0 - 4.0) / 2])
        n2 = np.array([2.0, 1.0])
        swap = lambda v: np.array([v[1], v[0]])  # noqa: E731
        expected = np.stack(
            [
                np.maximum(h + mem[:, 0] + swap(n0), 0),
                np.maximum(h + mem[:, 1] + swap(n1), 0),
                np.maximum(h + mem[:, 2] + swap(n2), 0),
            ],
            axis=1,
        )
        out = model.m_update(Tensor(mem), Tensor(h), g.normalized_adjacency)
        np.testing.assert_allclose(out.value, expected, atol=1e-12)


class TestDecode:
    def test_zero_final_layer_uniform(self, rng):
        for n_classes in (2, 3, 5):
            model = small_model(n_classes=n_classes)
            model["dec.w2"].value[:] = 0
            model["dec.b2"].value[:] = 0
            p = model.decode(Tensor(rng.normal(size=5)), Tensor(rng.normal(size=5))).value
            np.testing.assert_allclose(p, np.full(n_classes, 1 / n_classes), rtol=1e-15)

    def test_distribution(self, rng):
        model = small_model(n_classes=4)
        for _ in range(20):
            p = model.decode(Tensor(rng.normal(size=5)), Tensor(rng.normal(size=5))).value
            assert abs(p.sum() - 1) <= 1e-9 and np.all(p >= 0)

    def test_binary_logit_zero(self, rng):
        model = small_model()
        model["dec.w2"].value[:] = 0
        model["dec.b2"].value[:] = 0
        p = model.decode(Tensor(rng.normal(size=5)), Tensor(rng.normal(size=5))).value
        assert p[1] == 0.5


class TestForward:
    def test_composition_t1(self, small_instance):
        model = small_model(hops=1, heads=1)
        inst = DatasetInstance(0, small_instance.graphs[:1], 1)
        q = model.q_encode(0)
        mem, adj = model.m_load(inst.graphs[0], q)
        r, _ = model.attention_read(mem, q, 0)
        h = model.s_update(q, r)
        mem = model.m_update(mem, h, adj)
        want = model.decode(h, q).value
        got, _ = model.forward(inst)
        np.testing.assert_array_equal(got.value, want)

    def test_matches_reference_implementation(self, rng):
        for seed in range(6):
            model = small_model(seed=seed, hops=3, n_classes=2 + seed % 2)
            inst = random_instance(rng)
            probs, trace = model.forward(inst)
            p = {k: v.value for k, v in model.params.items()}
            want, att = reference.forward(p, model.config, inst)
            np.testing.assert_allclose(probs.value, want, rtol=1e-12, atol=1e-14)
            assert set(att) == set(trace.attention)
            for key in att:
                np.testing.assert_allclose(trace.attention[key], att[key], rtol=1e-12, atol=1e-14)

    def test_eval_is_bit_identical(self, small_instance):
        model = small_model()
        a = model.forward(small_instance)[0].value
        b = model.forward(small_instance)[0].value
        assert a.tobytes() == b.tobytes()

    def test_component_order_invariance(self, rng):
        model = small_model(hops=3)
        inst = random_instance(rng, n_graphs=3)
        base = model.forward(inst)[0].value
        for order in itertools.permutations(range(3)):
            shuffled = DatasetInstance(inst.query, [inst.graphs[i] for i in order], inst.label)
            np.testing.assert_allclose(model.forward(shuffled)[0].value, base, atol=1e-12, rtol=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_node_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        model = small_model(hops=2, seed=seed % 5)
        inst = random_instance(rng, n_graphs=2)
        perms = [rng.permutation(g.n_nodes) for g in inst.graphs]
        relabeled = DatasetInstance(inst.query, [g.permuted(p) for g, p in zip(inst.graphs, perms)], inst.label)
        p0, t0 = model.forward(inst)
        p1, t1 = model.forward(relabeled)
        np.testing.assert_allclose(p1.value, p0.value, atol=1e-9, rtol=0)
        for (t, c, k), a in t0.attention.items():
            np.testing.assert_allclose(t1.attention[(t, c, k)][perms[c]], a, atol=1e-9)

    def test_saturated_gates_make_output_independent_of_hops(self, small_instance):
        outs = []
        for hops in (1, 2, 5):
            model = small_model(hops=hops, seed=3)
            for name in ("ctrl_gate.wh", "ctrl_gate.wr", "mem_gate.wm", "mem_gate.wh"):
                model[name].value[:] = 0
            model["ctrl_gate.b"].value[:] = 30.0
            model["mem_gate.b"].value[:] = 30.0
            outs.append(model.forward(small_instance)[0].value)
        for o in outs[1:]:
            np.testing.assert_allclose(o, outs[0], atol=1e-9)

    def test_trace_contents(self, small_instance):
        model = small_model(hops=3, heads=2)
        _, trace = model.forward(small_instance)
        assert len(trace.attention) == 3 * 2 * 2
        assert len(trace.states) == 4
        for a in trace.attention.values():
            assert abs(a.sum() - 1) <= 1e-9 and np.all(a >= 0)
        for g in trace.controller_gates + list(trace.memory_gates.values()):
            assert np.all((g > 0) & (g < 1))

    def test_dropout_only_in_training(self, small_instance):
        model = small_model(dropout=0.5)
        ev = model.forward(small_instance)[0].value
        assert ev.tobytes() == model.forward(small_instance)[0].value.tobytes()
        tr = model.forward(small_instance, training=True, rng=np.random.default_rng(0))[0].value
        assert not np.allclose(tr, ev)
        with pytest.raises(ModelError, match="rng"):
            model.forward(small_instance, training=True)

    def test_mean_pool_pathway_ignores_edges(self, small_instance):
        model = small_model(hops=0)
        bare = DatasetInstance(
            small_instance.query,
            [AttributedGraph(g.node_features, (), g.n_relations) for g in small_instance.graphs],
            small_instance.label,
        )
        np.testing.assert_array_equal(model.forward(small_instance)[0].value, model.forward(bare)[0].value)

    def test_dense_query_forward(self, rng):
        model = RDMN(ModelConfig(d_x=3, n_relations=2, n_tasks=0, query_dim=3, d_q=4, d_m=4, d_a=2, hops=2, dropout=0))
        inst = random_instance(rng)
        inst = DatasetInstance(rng.normal(size=3), inst.graphs, inst.label)
        p = model.forward(inst)[0].value
        want, _ = reference.forward({k: v.value for k, v in model.params.items()}, model.config, inst)
        np.testing.assert_allclose(p, want, rtol=1e-12)


def test_full_loss_gradient(small_instance):
    from rdmn.training import nll_loss

    model = small_model(hops=2, heads=2)
    leaves = model.parameters()

    def build():
        probs, _ = model.forward(small_instance)
        return nll_loss(probs, small_instance.label)

    assert fd_max_error(build, leaves) <= 1e-4


class TestSerialization:
    def test_round_trip_bit_identical(self, tmp_path, small_instance):
        model = small_model()
        save_model(model, tmp_path / "m.json")
        again = load_model(tmp_path / "m.json")
        assert again.config == model.config
        for k in model.params:
            assert again[k].value.tobytes() == model[k].value.tobytes()
        a = model.forward(small_instance)[0].value
        b = again.forward(small_instance)[0].value
        assert a.tobytes() == b.tobytes()
        save_model(again, tmp_path / "m2.json")
        assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()

    def test_corrupt(self, tmp_path):
        (tmp_path / "bad.json").write_text("{nope")
        with pytest.raises(ModelError, match="cannot read"):
            load_model(tmp_path / "bad.json")
        (tmp_path / "other.json").write_text('{"format": "something"}')
        with pytest.raises(ModelError, match="not an"):
            load_model(tmp_path / "other.json")

    def test_version_checked(self, tmp_path):
        save_model(small_model(), tmp_path / "m.json")
        text = (tmp_path / "m.json").read_text().replace('"version":1', '"version":99')
        (tmp_path / "m.json").write_text(text)
        with pytest.raises(ModelError, match="version 99"):
            load_model(tmp_path / "m.json")
