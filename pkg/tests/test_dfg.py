import pytest
from hypothesis import given, strategies as st

from polylock.dfg import (
    OPTYPES, CycleError, DanglingEdgeError, DfgError, DfgSyntaxError, DuplicateIdError,
    WORKED_EXAMPLE_LABELS, evaluate, fanout_count, format_dfg, parse_dfg,
    reachable_primary_outputs, register_optype, topo_order, worked_example,
)

from conftest import ONE_ADD, random_dfg


def graph(nodes, edges, inputs, outputs, name="g"):
    lines = [f"dfg {name}"] + [f"input {i}" for i in inputs] + [f"output {o}" for o in outputs]
    lines += [f"node {n} {t}" for n, t in nodes]
    lines += [f"edge e{k} {s} -> {d}" for k, (s, d) in enumerate(edges)]
    return parse_dfg("\n".join(lines))


def test_smallest_graph():
    d = parse_dfg(ONE_ADD)
    assert len(d.nodes) == 1 and len(d.edges) == 3


def test_self_loop_is_a_cycle():
    with pytest.raises(CycleError):
        parse_dfg(ONE_ADD + "edge e4 a -> a.0\n")


def test_two_node_cycle():
    text = """dfg c
input x
output o
node a Add
node b Add
edge 1 x -> a.0
edge 2 b -> a.1
edge 3 a -> b.0
edge 4 x -> b.1
edge 5 a -> o
"""
    with pytest.raises(CycleError):
        parse_dfg(text)


def test_worked_example_has_six_nodes():
    d = worked_example()
    assert len(d.nodes) == 6
    assert len(d.edges) == 17
    assert sorted(WORKED_EXAMPLE_LABELS) == d.node_ids


@pytest.mark.parametrize("text, exc", [
    (ONE_ADD + "edge e9 ghost -> a.0\n", DanglingEdgeError),
    (ONE_ADD + "node a Sub\n", DuplicateIdError),
    (ONE_ADD.replace("edge e2", "edge e1"), DuplicateIdError),
    (ONE_ADD.replace("a.1", "a.0"), DfgError),
    (ONE_ADD.replace("a.1", "a.2"), DfgError),
    (ONE_ADD.replace("Add", "Div"), DfgError),
    (ONE_ADD + "input unused\n", DfgError),
    (ONE_ADD + "edge e4 a -> o\n", DfgError),
])
def test_invariant_violations(text, exc):
    with pytest.raises(exc):
        parse_dfg(text)


def test_dead_node_rejected():
    text = ONE_ADD + "node z Sub\nedge e4 x -> z.0\nedge e5 y -> z.1\n"
    with pytest.raises(DfgError, match="output"):
        parse_dfg(text)


def test_syntax_error_position():
    with pytest.raises(DfgSyntaxError) as ei:
        parse_dfg("dfg t\ninput x\nedge 1 x => a.0\n")
    assert (ei.value.line, ei.value.col) == (3, 10)
    with pytest.raises(DfgSyntaxError) as ei:
        parse_dfg("dfg t\nwidget w\n")
    assert (ei.value.line, ei.value.col) == (2, 1)


def test_comments_and_blank_lines():
    d = parse_dfg("# header\n\n" + ONE_ADD.replace("node a Add", "node a Add   # the adder"))
    assert d.optype == {"a": "Add"}


def test_topo_chain_and_diamond():
    chain = graph([("a", "Add"), ("b", "Add"), ("c", "Add")],
                  [("x", "a.0"), ("y", "a.1"), ("a", "b.0"), ("y", "b.1"), ("b", "c.0"),
                   ("x", "c.1"), ("c", "o")], ["x", "y"], ["o"])
    assert topo_order(chain) == ["a", "b", "c"]
    diamond = graph([("d", "Add"), ("c", "Sub"), ("b", "Mul"), ("a", "Add")],
                    [("x", "a.0"), ("y", "a.1"), ("a", "b.0"), ("x", "b.1"), ("a", "c.0"),
                     ("y", "c.1"), ("b", "d.0"), ("c", "d.1"), ("d", "o")], ["x", "y"], ["o"])
    assert topo_order(diamond) == ["a", "b", "c", "d"]


def test_worked_example_precedence():
    d = worked_example()
    pos = {n: i for i, n in enumerate(topo_order(d))}
    for e in d.edges:
        if e.src in pos and e.dst in pos:
            assert pos[e.src] < pos[e.dst]
    # every subtractor that feeds an adder comes first
    for e in d.edges:
        if d.optype.get(e.src) == "Sub" and d.optype.get(e.dst) == "Add":
            assert pos[e.src] < pos[e.dst]


def test_fanout_examples():
    d = worked_example()
    assert fanout_count(d, "a") == 1
    assert fanout_count(d, "b") == 3      # d.0, o1, o2
    for n in d.node_ids:
        assert fanout_count(d, n) == sum(1 for e in d.edges if e.src == n)
    with pytest.raises(KeyError):
        fanout_count(d, "zz")


def test_reachable_outputs_examples():
    d = worked_example()
    assert reachable_primary_outputs(d, "f") == {"o4"}
    assert reachable_primary_outputs(d, "c") == {"o1", "o2", "o3", "o5"}
    with pytest.raises(KeyError):
        reachable_primary_outputs(d, "i1")


def _closure_outputs(dfg, node):
    """Independent oracle: plain DFS over the edge list."""
    outs, seen, stack = set(), set(), [node]
    while stack:
        n = stack.pop()
        for e in dfg.edges:
            if e.src != n:
                continue
            if e.dst in dfg.outputs:
                outs.add(e.dst)
            elif e.dst not in seen:
                seen.add(e.dst)
                stack.append(e.dst)
    return outs


@given(st.integers(0, 10_000))
def test_reachable_outputs_match_dfs(seed):
    d = random_dfg(seed, ops=20, outputs=4, latency=6)
    for n in d.node_ids:
        assert reachable_primary_outputs(d, n) == _closure_outputs(d, n)
        assert len(reachable_primary_outputs(d, n)) >= 1


@given(st.integers(0, 10_000))
def test_round_trip(seed):
    d = random_dfg(seed, ops=12, outputs=3, latency=5)
    assert parse_dfg(format_dfg(d)) == d


@given(st.integers(0, 10_000))
def test_topo_is_permutation_respecting_edges(seed):
    d = random_dfg(seed, ops=15, outputs=3, latency=7)
    order = topo_order(d)
    assert sorted(order) == d.node_ids
    pos = {n: i for i, n in enumerate(order)}
    for e in d.edges:
        if e.src in pos and e.dst in pos:
            assert pos[e.src] < pos[e.dst]


def test_evaluate_wraps():
    d = parse_dfg(ONE_ADD.replace("Add", "Sub"))
    assert evaluate(d, {"x": 3, "y": 5}, width=4) == {"o": 14}
    assert evaluate(parse_dfg(ONE_ADD), {"x": 3, "y": 4}) == {"o": 7}


def test_register_optype():
    register_optype("Xor", lambda a, b: a ^ b, "bvxor")
    try:
        d = parse_dfg(ONE_ADD.replace("Add", "Xor"))
        assert evaluate(d, {"x": 6, "y": 3}) == {"o": 5}
    finally:
        OPTYPES.pop("Xor")
