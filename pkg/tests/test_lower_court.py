import math

import numpy as np
import pytest

from smajudge import lower_court as lc
from smajudge import numerics as nm
from gradcheck import REL_TOL, check_group


def test_default_graph_is_valid():
    graph = lc.TaskGraph()
    assert graph.validate() == []
    assert graph.dependencies == ((), (0,), (0, 1))


def test_backward_edge_reported():
    assert lc.validate_task_graph(("a", "b", "c"), ((2,), (), ())) == [(3, 1)]


def test_self_edge_reported():
    assert lc.validate_task_graph(("a", "b"), ((), (1,))) == [(2, 2)]


def test_parallel_graph_is_legal():
    graph = lc.TaskGraph.parallel()
    assert graph.validate() == []
    assert all(d == () for d in graph.dependencies)


def test_constructor_rejects_bad_graph():
    with pytest.raises(ValueError):
        lc.TaskGraph(names=("a", "b"), dependencies=((1,), ()))


def test_graph_round_trip():
    g = lc.TaskGraph()
    assert lc.TaskGraph.from_dict(g.to_dict()) == g


def zero_cell(num_pred=1, cell_dim=2, fact_dim=2):
    cell = lc.DependencyCellParams(num_pred, cell_dim, fact_dim, nm.RngStream(0))
    for gate in cell.GATES:
        for w in cell.gate_weights[gate]:
            w.data[:] = 0.0
        cell.gate_biases[gate].data[:] = 0.0
    return cell


def test_cell_zero_params_virtual_predecessor():
    cell = zero_cell()
    zero = nm.zeros(2)
    h, c = lc.dependency_cell(nm.tensor([0.0, 0.0]), [(zero, zero)], cell)
    assert np.array_equal(h.data, np.zeros(2))
    assert np.array_equal(c.data, np.zeros(2))


def test_cell_zero_params_halves_memory_sum():
    cell = zero_cell(num_pred=2)
    preds = [(nm.tensor([0.1, 0.2]), nm.tensor([1.0, 2.0])),
             (nm.tensor([0.3, 0.4]), nm.tensor([3.0, 4.0]))]
    h, c = lc.dependency_cell(nm.tensor([0.5, -0.5]), preds, cell)
    # gates are all 0.5 and the candidate is 0, so c = 0.5 * sum of cells
    assert np.allclose(c.data, [2.0, 3.0])
    assert np.allclose(h.data, 0.5 * np.tanh(c.data))


def test_cell_hand_evaluation_single_predecessor():
    cell = lc.DependencyCellParams(1, 2, 2, nm.RngStream(1))
    rng = np.random.default_rng(2)
    for gate in cell.GATES:
        cell.gate_weights[gate][0].data[:] = rng.normal(size=(2, 4))
        cell.gate_biases[gate].data[:] = rng.normal(size=2)
    h_pred = rng.normal(size=2)
    c_pred = rng.normal(size=2)
    h_fact = rng.normal(size=2)

    joined = np.concatenate([h_pred, h_fact])
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    zf = sig(cell.gate_weights["forget"][0].data @ joined + cell.gate_biases["forget"].data)
    zi = sig(cell.gate_weights["input"][0].data @ joined + cell.gate_biases["input"].data)
    zo = sig(cell.gate_weights["output"][0].data @ joined + cell.gate_biases["output"].data)
    cand = np.tanh(cell.gate_weights["candidate"][0].data @ joined
                   + cell.gate_biases["candidate"].data)
    c_expected = zf * c_pred + zi * cand
    h_expected = zo * np.tanh(c_expected)

    h, c = lc.dependency_cell(nm.tensor(h_fact),
                              [(nm.tensor(h_pred), nm.tensor(c_pred))], cell)
    assert np.allclose(c.data, c_expected)
    assert np.allclose(h.data, h_expected)


def test_cell_wrong_predecessor_count():
    cell = zero_cell(num_pred=2)
    with pytest.raises(ValueError, match="predecessors"):
        lc.dependency_cell(nm.tensor([0.0, 0.0]), [(nm.zeros(2), nm.zeros(2))], cell)


def make_params(graph=None, cell_dim=2, fact_dim=2, labels=(4, 3, 11), seed=0):
    graph = graph or lc.TaskGraph()
    return lc.LowerCourtParams(graph, cell_dim, fact_dim, labels, nm.RngStream(seed))


def test_run_lower_court_zero_params_uniform_head():
    params = make_params()
    for t in params.named_parameters("lc").values():
        t.data[:] = 0.0
    out = lc.run_lower_court(nm.tensor([0.3, -0.3]), params)
    assert np.allclose(out.distributions[0].data, 0.25)
    assert np.allclose(out.distributions[2].data, 1.0 / 11)


def test_run_lower_court_task3_params_do_not_affect_earlier_tasks():
    params = make_params(seed=3)
    h = nm.tensor([0.5, -0.2])
    before = lc.run_lower_court(h, params)
    for name, t in params.named_parameters("lc").items():
        if ".penalty" in name:
            t.data += 1.0
    after = lc.run_lower_court(h, params)
    assert np.array_equal(before.distributions[0].data, after.distributions[0].data)
    assert np.array_equal(before.distributions[1].data, after.distributions[1].data)
    assert not np.array_equal(before.distributions[2].data, after.distributions[2].data)


def test_run_lower_court_parallel_tasks_are_isolated():
    params = make_params(graph=lc.TaskGraph.parallel(), seed=5)
    h = nm.tensor([0.4, 0.1])
    before = lc.run_lower_court(h, params)
    for name, t in params.named_parameters("lc").items():
        if ".law_article" in name:
            t.data += 0.5
    after = lc.run_lower_court(h, params)
    assert not np.array_equal(before.distributions[0].data, after.distributions[0].data)
    assert np.array_equal(before.distributions[1].data, after.distributions[1].data)
    assert np.array_equal(before.distributions[2].data, after.distributions[2].data)


def test_run_lower_court_evaluation_order_reads_set_states():
    # poisoning check: a dependency on an unset slot would raise KeyError;
    # the default graph must evaluate cleanly in list order
    params = make_params(seed=7)
    out = lc.run_lower_court(nm.tensor([1.0, -1.0]), params)
    assert len(out.distributions) == 3
    assert params.cells[2].num_predecessors == 2


def test_subtask_loss_values():
    perfect = nm.tensor([0.0, 1.0, 0.0])
    assert lc.lower_subtask_loss(perfect, 1).item() == 0.0
    uniform = nm.tensor(np.full(11, 1.0 / 11))
    assert lc.lower_subtask_loss(uniform, 4).item() == pytest.approx(math.log(11.0))


def test_subtask_loss_delegates_bitwise():
    dist = nm.tensor([0.7, 0.2, 0.1])
    assert lc.lower_subtask_loss(dist, 2).item() == nm.cross_entropy(dist, 2).item()


def test_full_stage_gradcheck_toy():
    params = make_params(cell_dim=2, fact_dim=2, labels=(3, 3, 4), seed=11)
    rng = np.random.default_rng(6)
    h_data = rng.normal(size=2)

    def forward():
        out = lc.run_lower_court(nm.tensor(h_data), params)
        losses = [lc.lower_subtask_loss(out.distributions[0], 1),
                  lc.lower_subtask_loss(out.distributions[1], 2),
                  lc.lower_subtask_loss(out.distributions[2], 0)]
        return nm.add_n(losses)

    with nm.Tape() as tape:
        loss = forward()
    nm.backward(loss, tape)
    named = params.named_parameters("lc")
    grads = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for n, p in named.items()}
    check_rng = np.random.default_rng(2)
    for name, p in named.items():
        worst = check_group(lambda: forward().item(), p.data, grads[name], check_rng, samples=4)
        assert worst <= REL_TOL, f"{name}: {worst}"
