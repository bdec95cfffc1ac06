import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polylock.bind import synthesize
from polylock.dfg import evaluate
from polylock.lock import SbSite, insert_sbs, strip_sbs
from polylock.polysb import CROSS, PARALLEL, keys_for_mode, route
from polylock.sim import (
    CSV_HEADER, KeyLengthError, error_rate, exhaustive_error_rate, in_golden_class, run_batch,
    simulate, uniform_wrong_key,
)

from conftest import one_node, random_dfg, toy_locked


def locked_sub(W, mode=PARALLEL):
    """1-node Sub with one SB across its two operand ports."""
    _, nl = synthesize(one_node("Sub"), None, W)
    f = nl.fus[0]
    site = SbSite("A", ("fu:sub0.0", "fu:sub0.1"), tuple(f.ins), ("sub0",), 1)
    return nl, insert_sbs(nl, 1e6, 1.0 if mode == CROSS else 0.0, 0, sites=[site])


def test_one_adder():
    _, nl = synthesize(one_node(), None, 8)
    assert simulate(nl, None, {"x": 3, "y": 4}).outputs == {"o": 7}


def test_golden_key_matches_bare():
    nl, locked = locked_sub(8)
    assert locked.x == 1
    for x, y in [(9, 5), (0, 255), (200, 7)]:
        inp = {"x": x, "y": y}
        assert simulate(locked, locked.golden_key, inp) == simulate(nl, None, inp)


def test_wrong_cross_key_swaps_operands():
    nl, locked = locked_sub(8)
    assert locked.sbs[0].mode == PARALLEL
    cross = format(keys_for_mode(CROSS)[0], "08b")
    assert simulate(locked, cross, {"x": 9, "y": 5}).outputs == {"o": (5 - 9) % 256}


def test_key_length_errors():
    nl, locked = locked_sub(8)
    with pytest.raises(KeyLengthError):
        simulate(locked, None, {"x": 1, "y": 2})
    with pytest.raises(KeyLengthError):
        simulate(locked, "0101", {"x": 1, "y": 2})
    with pytest.raises(KeyLengthError):
        simulate(locked, [1, 2], {"x": 1, "y": 2})
    with pytest.raises(KeyError):
        simulate(nl, None, {"x": 1})


def test_zero_sbs_error_rate():
    _, nl = synthesize(one_node(), None, 8)
    rep = error_rate(insert_sbs(nl, 0.0), 100)
    assert rep.error_rate == 0.0 and rep.sb_count == 0


def _brute_force_rate(locked, W):
    """Every wrong key x every input, straight through route() and subtraction."""
    mask = (1 << W) - 1
    gold = locked.sbs[0].mode
    wrong = [k for k in range(256) if k not in keys_for_mode(gold)]
    bad = 0
    for k in wrong:
        for x, y in itertools.product(range(1 << W), repeat=2):
            a, b = (x, y) if gold == PARALLEL else (y, x)  # cross boxes take swapped inputs
            z, w = route(k, a, b, width=W)
            bad += (z - w) & mask != (x - y) & mask
    return bad / (len(wrong) * (1 << 2 * W))


@pytest.mark.parametrize("mode", [PARALLEL, CROSS])
def test_exhaustive_rate_matches_brute_force(mode):
    _, locked = locked_sub(2, mode)
    assert locked.sbs[0].mode == mode
    rep = exhaustive_error_rate(locked)
    assert rep.error_rate == pytest.approx(_brute_force_rate(locked, 2), abs=1e-12)


def test_sampled_rate_close_to_exhaustive():
    _, locked = locked_sub(2)
    exact = exhaustive_error_rate(locked).error_rate
    assert error_rate(locked, 4000, 3).error_rate == pytest.approx(exact, abs=0.03)


def test_error_rate_deterministic_and_bounded():
    locked = toy_locked(2, 2)
    a = error_rate(locked, 300, 11)
    b = error_rate(locked, 300, 11)
    assert a == b
    assert 0.0 <= a.error_rate <= 1.0
    assert a.errors == round(a.error_rate * a.trials)
    with pytest.raises(ValueError):
        error_rate(locked, 0)


def test_wrong_keys_avoid_golden_class():
    locked = toy_locked(3, 2)
    rng = np.random.default_rng(0)
    for _ in range(200):
        assert not in_golden_class(locked, uniform_wrong_key(rng, locked))


def test_csv_row():
    locked = toy_locked(0, 1)
    rep = error_rate(locked, 50, 0)
    assert CSV_HEADER == "benchmark,seed,sb_count,overhead_pct,trials,error_rate"
    cells = rep.csv_row("toy", 4).split(",")
    assert cells[:3] == ["toy", "4", "1"] and cells[4] == "50"


@given(st.integers(0, 5000))
def test_oracle_agreement_with_golden_key(seed):
    d = random_dfg(seed, ops=8, outputs=2, latency=4)
    _, nl = synthesize(d, None, 8)
    locked = insert_sbs(nl, 30.0, 0.5, seed)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        inp = {i: int(rng.integers(0, 256)) for i in d.inputs}
        assert simulate(locked, locked.golden_key or None, inp).outputs == evaluate(d, inp, 8)


@given(st.integers(0, 500), st.integers(0, 255))
def test_wired_or_has_no_unknowns(seed, k):
    locked = toy_locked(seed % 50, 1)
    res = simulate(locked, format(k, "08b"), {i: seed % 16 for i in locked.netlist.inputs})
    assert all(v == 0 for v in res.unknown.values())


def test_strict_policy_marks_unknowns():
    nl, locked = locked_sub(4)
    locked.netlist.policy = "strict_3v"
    off = "01010101"  # nothing conducts
    res = simulate(locked, off, {"x": 3, "y": 1})
    assert res.unknown["o"] == 0xF
    ok = simulate(locked, locked.golden_key, {"x": 3, "y": 1})
    assert ok.outputs == {"o": 2} and ok.unknown == {"o": 0}
    assert error_rate(locked, 200, 0).error_rate > 0


def test_stripped_design_is_oracle():
    locked = toy_locked(1, 2)
    vecs = {i: np.arange(16, dtype=np.uint64) for i in locked.netlist.inputs}
    keys = np.array([[int(locked.golden_key[j:j + 8], 2) for j in (0, 8)]])
    a, _ = run_batch(locked.netlist, vecs, keys)
    b, _ = run_batch(strip_sbs(locked), vecs)
    assert all(np.array_equal(a[o], b[o]) for o in a)


def test_combinational_loop_rejected():
    _, nl = synthesize(one_node(), None, 8)
    nl.rewire("fu:add0.0", nl.fus[0].out)
    with pytest.raises(ValueError, match="loop"):
        simulate(nl, None, {"x": 1, "y": 2})
