import numpy as np
import pytest

from rdmn import autodiff as ad
from rdmn.gradcheck import numerical_gradient, relative_error
from rdmn.graphs import AttributedGraph, DatasetInstance, Edge
from rdmn.model import ModelConfig, RDMN


def tape_gradients(build, leaves):
    """Gradients of the scalar returned by ``build()`` w.r.t. each leaf tensor."""
    for t in leaves:
        t.grad = None
        t.requires_grad = True
    with ad.Tape() as tape:
        loss = build()
        tape.backward(loss, leaves)
    return [np.zeros_like(t.value) if t.grad is None else t.grad.copy() for t in leaves]


def fd_max_error(build, leaves, step=1e-6):
    """Largest relative error between backward() and central differences over all leaves."""
    analytic = tape_gradients(build, leaves)
    worst = 0.0
    for t, g in zip(leaves, analytic):
        numeric = numerical_gradient(lambda: build().item(), t.value, step)
        worst = max(worst, relative_error(g, numeric))
    return worst


def make_graph(colors, edges, n_colors=3, n_relations=1):
    feats = np.zeros((len(colors), n_colors))
    feats[np.arange(len(colors)), colors] = 1.0
    return AttributedGraph(feats, tuple(Edge(*e) for e in edges), n_relations)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_instance():
    """Two 4-node graphs with two relation types and a task query."""
    g1 = make_graph([0, 1, 2, 0], [(1, 0, 1), (2, 1, 2), (1, 2, 3), (2, 0, 3, True)], n_relations=2)
    g2 = make_graph([2, 2, 1, 0], [(1, 0, 1), (1, 1, 2), (2, 2, 3), (2, 3, 0)], n_relations=2)
    return DatasetInstance(1, [g1, g2], 1, id="small")


def small_model(**kw):
    base = dict(d_x=3, n_relations=2, n_tasks=2, d_q=5, d_m=4, d_a=3, hops=2, heads=2, dropout=0.0, seed=7)
    base.update(kw)
    return RDMN(ModelConfig(**base))


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    """Keep one verdict line per acceptance criterion and print it immediately."""
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
