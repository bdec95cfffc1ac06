"""Cycle-accurate simulation of (locked) datapath netlists and error rates.

The simulator is lane-parallel: every net value is a uint64 numpy array with
one lane per (key, input) pair, so a batch of trials costs one pass over the
schedule.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .dfg import OPTYPES
from .netlist import Netlist
from .polysb import (CROSS_PATTERN, KEY_BITS, PARALLEL_PATTERN, Policy, pattern_index,
                     split_key)

log = logging.getLogger(__name__)

_LOWBIT_OPS = {"Add", "Sub", "Mul"}  # output bit i depends on operand bits <= i only


class KeyLengthError(ValueError):
    pass


@dataclass
class SimResult:
    outputs: dict[str, int]
    unknown: dict[str, int]


@dataclass
class ErrorRateReport:
    overhead: float
    sb_count: int
    trials: int
    error_rate: float
    errors: int = 0

    def csv_row(self, benchmark: str, seed: int) -> str:
        return (f"{benchmark},{seed},{self.sb_count},{self.overhead:.4f},"
                f"{self.trials},{self.error_rate:.6f}")


CSV_HEADER = "benchmark,seed,sb_count,overhead_pct,trials,error_rate"


class Plan:
    """A netlist compiled for repeated simulation."""

    def __init__(self, nl: Netlist):
        nl.check()
        self.nl = nl
        self.W = nl.W
        self.mask = np.uint64((1 << nl.W) - 1) if nl.W < 64 else np.uint64(2**64 - 1)
        self.policy = Policy(nl.policy)
        self.driver: dict[str, tuple] = {}
        for i, n in nl.inputs.items():
            self.driver[n] = ("in", i)
        for r in nl.regs:
            self.driver[r.q] = ("reg", r.id)
        for f in nl.fus:
            self.driver[f.out] = ("fu", f.ins[0], f.ins[1], f.type)
        for m in nl.muxes:
            self.driver[m.out] = ("mux", m.id, tuple(m.ins))
        for j, s in enumerate(nl.sbs):
            self.driver[s.z] = ("sb", j, s.x, s.y, "z")
            self.driver[s.w] = ("sb", j, s.x, s.y, "w")
        self.reg_d = {r.id: r.d for r in nl.regs}
        self.sb_count = len(nl.sbs)
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        state: dict[str, int] = {}
        for root in self.driver:
            if root in state:
                continue
            stack = [(root, iter(self._fanin(root)))]
            state[root] = 1
            while stack:
                net, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    state[net] = 2
                    stack.pop()
                elif state.get(nxt) == 1:
                    raise ValueError(f"combinational loop through net {nxt}")
                elif nxt not in state:
                    state[nxt] = 1
                    stack.append((nxt, iter(self._fanin(nxt))))

    def _fanin(self, net: str) -> tuple[str, ...]:
        d = self.driver[net]
        if d[0] == "fu":
            return d[1], d[2]
        if d[0] == "mux":
            return d[2]
        if d[0] == "sb":
            return d[2], d[3]
        return ()


def _as_plan(design) -> Plan:
    if isinstance(design, Plan):
        return design
    nl = getattr(design, "netlist", design)
    return Plan(nl)


def key_masks(keys: np.ndarray, mask: np.uint64) -> list[tuple[np.ndarray, ...]]:
    """Per SB, lane masks (zx, zy, wx, wy): all-ones where that path conducts.

    ``keys`` has shape (lanes, sb_count) holding 8-bit keys.
    """
    keys = keys.astype(np.uint64)
    out = []
    for j in range(keys.shape[1]):
        k = keys[:, j]
        on = []
        for i in range(4):
            c = (k >> np.uint64(7 - 2 * i)) & np.uint64(1)
            p = (k >> np.uint64(6 - 2 * i)) & np.uint64(1)
            on.append(np.where(c == p, mask, np.uint64(0)))
        t1, t2, t3, t4 = on
        out.append((t1, t3, t2, t4))
    return out


def _unknown_from(ua, ub, mask, op):
    m = ua | ub
    if op not in _LOWBIT_OPS:
        return np.where(m != 0, mask, np.uint64(0))
    low = m & (~m + np.uint64(1))
    return np.where(m != 0, mask & ~(low - np.uint64(1)), np.uint64(0))


def run_batch(design, inputs: Mapping[str, np.ndarray], keys: np.ndarray | None = None
              ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray] | None]:
    """Simulate all lanes; returns (outputs, unknown masks or None)."""
    plan = _as_plan(design)
    nl = plan.nl
    mask = plan.mask
    strict = plan.policy is Policy.STRICT_3V
    lanes = len(next(iter(inputs.values()))) if inputs else (0 if keys is None else len(keys))
    if plan.sb_count:
        if keys is None:
            raise KeyLengthError(f"design has {plan.sb_count} switch boxes but no key was given")
        keys = np.asarray(keys)
        if keys.ndim != 2 or keys.shape[1] != plan.sb_count:
            raise KeyLengthError(f"key must cover {plan.sb_count} switch boxes")
        if not lanes:
            lanes = keys.shape[0]
        if keys.shape[0] == 1 and lanes > 1:
            keys = np.repeat(keys, lanes, axis=0)
        sbm = key_masks(keys, mask)
    else:
        sbm = []
    missing = set(nl.inputs) - set(inputs)
    if missing:
        raise KeyError(f"missing primary inputs: {sorted(missing)}")
    ins = {i: np.asarray(inputs[i], dtype=np.uint64) & mask for i in nl.inputs}
    zero = np.zeros(lanes, dtype=np.uint64)
    state = {r.id: zero for r in nl.regs}
    ustate = {r.id: zero for r in nl.regs}

    for word in nl.ctrl:
        sel = word.sel
        val: dict[str, np.ndarray] = {}
        unk: dict[str, np.ndarray] = {}
        sb_cache: dict[int, tuple] = {}

        def get(net: str):
            if net in val:
                return val[net]
            d = plan.driver[net]
            kind = d[0]
            if kind == "in":
                v, u = ins[d[1]], zero
            elif kind == "reg":
                v, u = state[d[1]], ustate[d[1]]
            elif kind == "mux":
                src = d[2][sel.get(d[1], 0)]
                v = get(src)
                u = unk.get(src, zero)
            elif kind == "fu":
                a, b = get(d[1]), get(d[2])
                v = OPTYPES[d[3]][0](a, b) & mask
                u = _unknown_from(unk.get(d[1], zero), unk.get(d[2], zero), mask, d[3]) \
                    if strict else zero
            else:
                j = d[1]
                if j not in sb_cache:
                    x, y = get(d[2]), get(d[3])
                    ux, uy = unk.get(d[2], zero), unk.get(d[3], zero)
                    zx, zy, wx, wy = sbm[j]
                    res = []
                    for px, py in ((zx, zy), (wx, wy)):
                        v_or = (x & px) | (y & py)
                        if strict:
                            n = (px & np.uint64(1)) + (py & np.uint64(1))
                            u_ = np.where(n == 0, mask,
                                          np.where(n == 2, (x ^ y) | ux | uy, (ux & px) | (uy & py)))
                            res.append((v_or & ~u_ & mask, u_))
                        else:
                            res.append((v_or, zero))
                    sb_cache[j] = tuple(res)
                v, u = sb_cache[j][0 if d[4] == "z" else 1]
            val[net] = v
            if strict:
                unk[net] = u
            return v

        new_state, new_u = {}, {}
        for r in word.load:
            new_state[r] = get(plan.reg_d[r])
            new_u[r] = unk.get(plan.reg_d[r], zero)
        state.update(new_state)
        if strict:
            ustate.update(new_u)

    outs, unks = {}, {}
    for o, net in nl.outputs.items():
        d = plan.driver[net]
        if d[0] == "reg":
            outs[o], unks[o] = state[d[1]], ustate[d[1]]
        elif d[0] == "in":
            outs[o], unks[o] = ins[d[1]], zero
        else:
            raise ValueError(f"output {o} must be read from a register or port")
    return outs, (unks if strict else None)


def _key_ints(key, count: int) -> list[int]:
    if key is None:
        if count:
            raise KeyLengthError(f"design has {count} switch boxes; a {KEY_BITS * count}-bit key is required")
        return []
    if isinstance(key, str):
        try:
            return split_key(key, count)
        except ValueError as e:
            raise KeyLengthError(str(e)) from None
    key = [int(k) for k in key]
    if len(key) != count:
        raise KeyLengthError(f"expected {count} switch-box keys, got {len(key)}")
    return key


def simulate(design, key=None, inputs: Mapping[str, int] | None = None) -> SimResult:
    """Run one input vector under one key.

    ``design`` is a Netlist, LockedDesign or Plan; ``key`` is the design key
    text, a sequence of per-SB 8-bit ints, or None for unlocked designs.
    """
    plan = _as_plan(design)
    k = _key_ints(key, plan.sb_count)
    arr = {i: np.array([v], dtype=np.uint64) for i, v in (inputs or {}).items()}
    keys = np.array([k], dtype=np.uint64) if k else None
    outs, unks = run_batch(plan, arr, keys)
    return SimResult({o: int(v[0]) for o, v in outs.items()},
                     {o: int(v[0]) for o, v in (unks or {}).items()} if unks else
                     {o: 0 for o in outs})


# ---------------------------------------------------------------------------
# error rate

def golden_patterns(locked) -> list[int]:
    return [PARALLEL_PATTERN if sb.mode == "Parallel" else CROSS_PATTERN
            for sb in locked.netlist.sbs]


def in_golden_class(locked, key_ints: Sequence[int]) -> bool:
    return all(pattern_index(k) == g for k, g in zip(key_ints, golden_patterns(locked)))


def uniform_wrong_key(rng: np.random.Generator, locked) -> list[int]:
    """Uniform key conditioned on at least one SB outside its golden class."""
    gold = golden_patterns(locked)
    while True:
        k = [int(v) for v in rng.integers(0, 256, size=len(gold))]
        if any(pattern_index(v) != g for v, g in zip(k, gold)):
            return k


def uniform_input(rng: np.random.Generator, locked) -> dict[str, int]:
    nl = locked.netlist
    hi = 1 << nl.W
    return {i: int(rng.integers(0, hi)) for i in nl.inputs}


def error_rate(locked, trials: int, seed: int = 0,
               wrong_key_sampler: Callable | None = None,
               input_sampler: Callable | None = None) -> ErrorRateReport:
    from .lock import strip_sbs

    if trials < 1:
        raise ValueError("trials must be >= 1")
    x = len(locked.netlist.sbs)
    if x == 0:
        log.warning("design has no switch boxes; error rate is 0 by definition")
        return ErrorRateReport(locked.overhead, 0, trials, 0.0)
    wrong_key_sampler = wrong_key_sampler or uniform_wrong_key
    input_sampler = input_sampler or uniform_input
    keys, vecs = [], []
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        keys.append(wrong_key_sampler(rng, locked))
        vecs.append(input_sampler(rng, locked))
    names = list(locked.netlist.inputs)
    arr = {i: np.array([v[i] for v in vecs], dtype=np.uint64) for i in names}
    got, unk = run_batch(locked.netlist, arr, np.array(keys, dtype=np.uint64))
    ref, _ = run_batch(strip_sbs(locked), arr)
    bad = np.zeros(trials, dtype=bool)
    for o in ref:
        bad |= got[o] != ref[o]
        if unk is not None:
            bad |= unk[o] != 0
    errors = int(bad.sum())
    return ErrorRateReport(locked.overhead, x, trials, errors / trials, errors)


def all_inputs(nl: Netlist) -> dict[str, np.ndarray]:
    names = list(nl.inputs)
    grid = np.array(list(itertools.product(range(1 << nl.W), repeat=len(names))),
                    dtype=np.uint64).reshape(-1, len(names))
    return {n: grid[:, j] for j, n in enumerate(names)}


def exhaustive_error_rate(locked) -> ErrorRateReport:
    """Exact error rate over every wrong key and every input vector.

    Keys sharing a conduction pattern behave identically, so each of the 16
    patterns per SB is simulated once; all patterns hold 16 keys each.
    """
    from .lock import strip_sbs

    nl = locked.netlist
    x = len(nl.sbs)
    if x == 0:
        return ErrorRateReport(locked.overhead, 0, 0, 0.0)
    if x > 2 or len(nl.inputs) * nl.W > 16:
        raise ValueError("exhaustive mode needs <= 2 switch boxes and <= 16 input bits")
    from .polysb import pattern_representative

    gold = golden_patterns(locked)
    classes = [c for c in itertools.product(range(16), repeat=x) if list(c) != gold]
    vecs = all_inputs(nl)
    n_in = len(next(iter(vecs.values())))
    lanes_in = {i: np.tile(v, len(classes)) for i, v in vecs.items()}
    keys = np.repeat(np.array([[pattern_representative(p) for p in c] for c in classes],
                              dtype=np.uint64), n_in, axis=0)
    got, unk = run_batch(nl, lanes_in, keys)
    ref, _ = run_batch(strip_sbs(locked), vecs)
    bad = np.zeros(len(classes) * n_in, dtype=bool)
    for o in ref:
        bad |= got[o] != np.tile(ref[o], len(classes))
        if unk is not None:
            bad |= unk[o] != 0
    errors = int(bad.sum())
    total = len(classes) * n_in
    return ErrorRateReport(locked.overhead, x, total, errors / total, errors)
