from hypothesis import given, strategies as st
import numpy as np

from polylock.bind import (
    allocate_fus, allocate_registers, fu_register_fanout, synthesize, value_spans,
)
from polylock.dfg import WORKED_EXAMPLE_LABELS, evaluate, parse_dfg, worked_example
from polylock.sched import schedule_secure
from polylock.sim import run_batch, simulate

from conftest import one_node, random_dfg


def test_worked_example_fu_sharing():
    s = schedule_secure(worked_example(), 4)
    fub = allocate_fus(s)
    assert sorted(fid for fid, _ in fub.fus) == ["add0", "sub0"]
    label = WORKED_EXAMPLE_LABELS
    on = lambda fid: sorted(label[n] for n, f in fub.map.items() if f == fid)
    assert on("sub0") == ["-1", "-2", "-3"]
    assert on("add0") == ["+1", "+2", "+3"]


def test_same_step_adds_need_two_fus():
    d = parse_dfg("""dfg two
input x
input y
output o1
output o2
node a Add
node b Add
edge 1 x -> a.0
edge 2 y -> a.1
edge 3 x -> b.0
edge 4 y -> b.1
edge 5 a -> o1
edge 6 b -> o2
""")
    fub = allocate_fus(schedule_secure(d, 1))
    assert len(fub.fus) == 2
    assert fub.map["a"] != fub.map["b"]


def test_single_node_netlist():
    _, nl = synthesize(one_node(), None, 8)
    assert len(nl.fus) == 1 and nl.muxes == []
    # FU reads the input ports directly; only the result is registered
    assert len(nl.regs) == 1
    assert len(nl.ctrl) == nl.L + 1 == 2


def test_worked_example_has_port_muxes():
    _, nl = synthesize(worked_example(), 4, 8)
    mux_outs = {m.out for m in nl.muxes}
    sub = nl.fu("sub0")
    assert all(n in mux_outs for n in sub.ins)


def _max_overlap(spans):
    """Interval-graph clique number: the most spans covering one boundary."""
    hi = max(h for _, h in spans.values())
    return max(sum(1 for lo, h in spans.values() if lo <= b <= h) for b in range(hi + 1))


@given(st.integers(0, 10_000), st.integers(0, 2))
def test_register_count_is_optimal(seed, slack):
    d = random_dfg(seed, ops=12, outputs=3, latency=5)
    s = schedule_secure(d)
    s = schedule_secure(d, s.L + slack)
    regb = allocate_registers(d, s)
    spans = value_spans(d, s)
    assert len(regb.regs) == _max_overlap(spans)
    # values sharing a register never overlap
    by_reg = {}
    for v, r in regb.value_reg.items():
        by_reg.setdefault(r, []).append(spans[v])
    for ivs in by_reg.values():
        ivs.sort()
        for (_, h1), (l2, _) in zip(ivs, ivs[1:]):
            assert h1 < l2


@given(st.integers(0, 10_000))
def test_fu_exclusive_per_step(seed):
    d = random_dfg(seed, ops=14, outputs=3, latency=4)
    s = schedule_secure(d)
    fub = allocate_fus(s)
    seen = set()
    for n, fid in fub.map.items():
        assert (fid, s.assignment[n]) not in seen
        seen.add((fid, s.assignment[n]))
        assert dict(fub.fus)[fid] == d.optype[n]


@given(st.integers(0, 10_000), st.sampled_from([4, 8, 16]))
def test_datapath_computes_the_graph(seed, W):
    d = random_dfg(seed, ops=10, outputs=3, latency=5)
    _, nl = synthesize(d, None, W)
    rng = np.random.default_rng(seed)
    vecs = {i: rng.integers(0, 1 << W, size=100, dtype=np.uint64) for i in d.inputs}
    got, _ = run_batch(nl, vecs)
    for k in range(100):
        want = evaluate(d, {i: int(v[k]) for i, v in vecs.items()}, W)
        assert {o: int(v[k]) for o, v in got.items()} == want


def test_simulate_one_vector():
    _, nl = synthesize(worked_example(), 4, 8)
    inputs = {f"i{k}": 10 * k + 3 for k in range(1, 8)}
    assert simulate(nl, None, inputs).outputs == evaluate(worked_example(), inputs, 8)


def test_register_fanout_of_shared_adder():
    # three chained adders, each also an output: one FU writes three live registers
    d = parse_dfg("""dfg fan
input x
input y
output o1
output o2
output o3
node a Add
node b Add
node c Add
edge 1 x -> a.0
edge 2 y -> a.1
edge 3 a -> b.0
edge 4 y -> b.1
edge 5 b -> c.0
edge 6 x -> c.1
edge 7 a -> o1
edge 8 b -> o2
edge 9 c -> o3
""")
    _, nl = synthesize(d, 3, 8)
    assert [f.id for f in nl.fus] == ["add0"]
    assert fu_register_fanout(nl, "add0") == 3
    _, one = synthesize(one_node(), None, 8)
    assert fu_register_fanout(one, "add0") == 1
