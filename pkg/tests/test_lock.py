import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polylock.bench import PRESETS, gen_bench
from polylock.bind import synthesize
from polylock.dfg import evaluate, parse_dfg, worked_example
from polylock.lock import (
    AreaModel, LockedDesign, SbSite, area_overhead, base_area, find_sites, insert_sbs,
    strip_sbs,
)
from polylock.polysb import CROSS, PARALLEL, keys_for_mode, split_key
from polylock.sim import all_inputs, run_batch

from conftest import one_node, random_dfg

FAN = """dfg fan
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
"""

MIXED = """dfg mixed
input x
input y
output o1
output o2
node a Add
node m Mul
edge 1 x -> a.0
edge 2 y -> a.1
edge 3 x -> m.0
edge 4 y -> m.1
edge 5 a -> o1
edge 6 m -> o2
"""


def normalized(nl):
    d = nl.to_dict()
    for n in d["nets"]:
        n["sinks"].sort()
    d["nets"].sort(key=lambda n: n["id"])
    return d


# -- sites -------------------------------------------------------------------

def test_single_register_fu_has_no_kind_a():
    _, nl = synthesize(one_node(), None, 8)
    assert [s for s in find_sites(nl) if s.kind == "A"] == []


def test_fanout_fu_gives_kind_a_impact_three():
    _, nl = synthesize(parse_dfg(FAN), 3, 8)
    sites = find_sites(nl)
    assert sites and all(s.kind == "A" and s.hosts == ("add0",) for s in sites)
    assert sites[0].impact == 3
    assert max(s.impact for s in sites) == 3


def test_kind_b_across_types():
    _, nl = synthesize(parse_dfg(MIXED), 1, 8)
    sites = find_sites(nl)
    assert {s.kind for s in sites} == {"B"}
    assert all(s.hosts == ("add0", "mul0") for s in sites)
    # of the four port pairs, x-x and y-y carry the same net
    assert len(sites) == 2
    assert all(s.nets[0] != s.nets[1] and s.impact == 2 for s in sites)


def test_sites_sorted_and_deduplicated():
    _, nl = synthesize(worked_example(), 4, 8)
    sites = find_sites(nl)
    keys = [(-s.impact, s.id) for s in sites]
    assert keys == sorted(keys)
    pairs = [frozenset(s.sinks) for s in sites]
    assert len(pairs) == len(set(pairs))


@given(st.integers(0, 5000))
def test_site_invariants(seed):
    d = random_dfg(seed, ops=10, outputs=3, latency=4)
    _, nl = synthesize(d, None, 8)
    types = {f.id: f.type for f in nl.fus}
    from polylock.bind import fu_register_fanout
    for s in find_sites(nl):
        assert s.nets[0] != s.nets[1]
        assert 0 <= s.impact <= len(nl.regs)
        if s.kind == "A":
            assert len(s.hosts) == 1 and fu_register_fanout(nl, s.hosts[0]) >= 2
        else:
            assert len(s.hosts) == 2 and types[s.hosts[0]] != types[s.hosts[1]]


# -- insertion ---------------------------------------------------------------

def test_zero_budget():
    _, nl = synthesize(worked_example(), 4, 8)
    locked = insert_sbs(nl, 0.0)
    assert locked.x == 0 and locked.golden_key == "" and locked.key_bits == 0
    assert locked.warnings == ["budget admits no switch boxes"]
    assert locked.overhead == 0.0


def test_negative_budget_rejected():
    _, nl = synthesize(worked_example(), 4, 8)
    with pytest.raises(ValueError):
        insert_sbs(nl, -1.0)


def test_sixteen_sbs_give_128_key_bits():
    _, nl = synthesize(gen_bench(PRESETS["BM1"], 0), PRESETS["BM1"].schedule_length, 8)
    locked = insert_sbs(nl, 100.0, max_sbs=16)
    assert locked.x == 16 and locked.key_bits == 128 == 8 * locked.x


def _locked_toy(seed, x, cross):
    for attempt in range(100):
        d = random_dfg(1000 * seed + attempt, ops=4, outputs=2, latency=3, inputs=2)
        _, nl = synthesize(d, 3, 4)
        locked = insert_sbs(nl, 1000, cross, seed, max_sbs=x)
        if locked.x == x:
            return d, nl, locked
    raise RuntimeError("no toy")


@pytest.mark.parametrize("seed", range(4))
def test_one_cross_sb_exhaustive(seed):
    d, nl, locked = _locked_toy(seed, 1, 1.0)
    assert locked.sbs[0].mode == CROSS
    vecs = all_inputs(nl)
    assert len(next(iter(vecs.values()))) == 2 ** (2 * 4)
    got, _ = run_batch(locked.netlist, vecs, np.array([split_key(locked.golden_key, 1)]))
    for k in range(2 ** 8):
        want = evaluate(d, {i: int(v[k]) for i, v in vecs.items()}, 4)
        assert {o: int(v[k]) for o, v in got.items()} == want


@given(st.integers(0, 300), st.sampled_from([0.0, 0.5, 1.0]))
def test_golden_class_soundness(seed, cross):
    _, nl, locked = _locked_toy(seed, 2, cross)
    rng = np.random.default_rng(seed)
    vecs = {i: rng.integers(0, 16, size=64, dtype=np.uint64) for i in nl.inputs}
    ref, _ = run_batch(nl, vecs)
    modes = [sb.mode for sb in locked.sbs]
    assert modes.count(CROSS) == int(np.ceil(cross * 2))
    for j, mode in enumerate(modes):
        base = split_key(locked.golden_key, 2)
        for k in keys_for_mode(mode):
            key = list(base)
            key[j] = k
            got, _ = run_batch(locked.netlist, vecs, np.array([key]))
            for o in ref:
                assert np.array_equal(got[o], ref[o])


@given(st.integers(0, 2000))
def test_splice_conservation(seed):
    d = random_dfg(seed, ops=8, outputs=2, latency=4)
    _, nl = synthesize(d, None, 8)
    locked = insert_sbs(nl, 50.0, 0.5, seed)
    assert locked.key_bits == 8 * locked.x
    assert normalized(strip_sbs(locked)) == normalized(nl)


def test_deterministic():
    _, nl = synthesize(worked_example(), 4, 8)
    a = insert_sbs(nl, 20.0, 0.5, 7)
    b = insert_sbs(nl, 20.0, 0.5, 7)
    assert a.to_json() == b.to_json() and a.golden_key == b.golden_key
    assert [s.id for s in find_sites(nl)] == [s.id for s in find_sites(nl)]


def test_foundry_view_and_json():
    _, nl = synthesize(worked_example(), 4, 8)
    locked = insert_sbs(nl, 20.0, 0.5, 1)
    assert locked.x > 0
    assert all(s.mode is None for s in locked.foundry_view().sbs)
    assert all(s.mode in (PARALLEL, CROSS) for s in locked.sbs)
    red = json.loads(locked.to_json(redact=True))
    assert all("mode" not in s for s in red["sbs"])
    assert locked.golden_key not in locked.to_json(redact=True)
    back = LockedDesign.from_json(locked.to_json(), locked.golden_key)
    assert back.to_json() == locked.to_json()


def test_site_json_shape():
    s = SbSite("A", ("fu:add0.0", "fu:add0.1"), ("n1", "n2"), ("add0",), 3)
    assert s.id == "A:fu:add0.0|fu:add0.1"
    assert s.to_dict()["impact"] == 3


# -- area --------------------------------------------------------------------

def test_area_arithmetic():
    _, nl = synthesize(one_node(), None, 8)
    model = AreaModel(add=25, reg=100, sb_per_bit=5)
    assert base_area(nl, model) == 25 * 8 + 100 * 8 == 1000
    assert model.sb_area(8) == 40
    assert area_overhead(nl, 5, model) == pytest.approx(20.0)
    assert area_overhead(nl, 0, model) == 0.0
    fixed = AreaModel(add=25, reg=100, sb_per_bit=4, sb_key_fixed=8)
    assert area_overhead(nl, 5, fixed) == pytest.approx(20.0)


def test_area_model_rejects_nonpositive():
    with pytest.raises(ValueError):
        AreaModel(add=0)
    with pytest.raises(ValueError):
        AreaModel(sb_key_fixed=-1)


def test_overhead_strictly_increasing():
    _, nl = synthesize(worked_example(), 4, 8)
    vals = [area_overhead(nl, k) for k in range(10)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
