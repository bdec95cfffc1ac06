"""Oracle-guided distinguishing-input attack on switch-box locked designs.

Two backends find distinguishing inputs (DIPs):

* ``enum`` tabulates the design's outputs for every combination of SB
  conduction classes (16 per SB; the 16 keys inside a class are
  interchangeable) over an input set that is exhaustive for small designs
  and a seeded sample otherwise. It refuses designs with more than
  ``max_enum_sbs`` switch boxes.
* ``smt`` writes a QF_BV miter and hands it to an external solver. Without
  a solver executable it falls back to ``enum``.
"""
from __future__ import annotations

import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .netlist import Netlist
from .polysb import Policy, join_key, pattern_representative
from .sim import Plan, run_batch, simulate
from . import smtlib

log = logging.getLogger(__name__)

KEY_FOUND, TIMEOUT, INFEASIBLE = "KeyFound", "Timeout", "Infeasible"

Constraint = tuple[dict[str, int], dict[str, int]]   # (input vector, oracle outputs)


class CapacityExceeded(RuntimeError):
    pass


@dataclass
class Dip:
    input: dict[str, int]
    k1: list[int]
    k2: list[int]


@dataclass
class AttackResult:
    status: str
    key: str | None
    dips: int
    iterations: int
    wall_s: float
    reason: str | None = None
    consistent_counts: list[int] = field(default_factory=list)

    def report(self) -> dict:
        d = {"status": self.status, "key": self.key, "dips": self.dips,
             "iterations": self.iterations, "wall_s": round(self.wall_s, 6)}
        if self.reason:
            d["reason"] = self.reason
        return d

    def to_json(self) -> str:
        return json.dumps(self.report(), indent=1)


@dataclass
class AttackConfig:
    backend: str = "enum"               # "enum" | "smt"
    max_iters: int = 1000
    timeout_s: float = 600.0
    solver_cmd: str | None = None       # None: default solver if on PATH
    max_enum_sbs: int = 2
    samples: int = 10_000
    exhaustive_bits: int = 16
    seed: int = 0
    max_table_cells: int = 1 << 28


def _netlist(design) -> Netlist:
    return getattr(design, "netlist", design)


# ---------------------------------------------------------------------------
# enumerative backend

class EnumBackend:
    """Output table over (conduction-class combination, input vector)."""

    def __init__(self, design, config: AttackConfig | None = None):
        cfg = config or AttackConfig()
        nl = _netlist(design)
        if Policy(nl.policy) is not Policy.WIRED_OR:
            raise ValueError("the attack models the wired-or policy only")
        x = len(nl.sbs)
        if x == 0:
            raise ValueError("nothing to enumerate: the design has no switch boxes")
        if x > cfg.max_enum_sbs:
            raise CapacityExceeded(f"{x} switch boxes exceed the enumerative limit of {cfg.max_enum_sbs}")
        self.nl = nl
        self.plan = Plan(nl)
        self.x = x
        self.classes = list(itertools.product(range(16), repeat=x))
        self.keys = np.array([[pattern_representative(p) for p in c] for c in self.classes],
                             dtype=np.uint64).reshape(len(self.classes), x)
        self.names = list(nl.inputs)
        self.outs = list(nl.outputs)
        bits = len(self.names) * nl.W
        if bits <= cfg.exhaustive_bits:
            grid = np.array(list(itertools.product(range(1 << nl.W), repeat=len(self.names))),
                            dtype=np.uint64).reshape(-1, len(self.names))
            self.exhaustive = True
        else:
            rng = np.random.default_rng(cfg.seed)
            grid = rng.integers(0, 1 << nl.W, size=(cfg.samples, len(self.names)), dtype=np.uint64)
            self.exhaustive = False
        self.grid = grid
        K, I, O = len(self.classes), len(grid), len(self.outs)
        if K * I * max(O, 1) > cfg.max_table_cells:
            raise CapacityExceeded(f"output table of {K}x{I}x{O} cells is too large")
        self.table = self._tabulate()
        self.alive = np.ones(K, dtype=bool)

    @property
    def key_space(self) -> int:
        return 256 ** self.x

    def _tabulate(self) -> np.ndarray:
        K, I = len(self.classes), len(self.grid)
        dtype = np.uint8 if self.nl.W <= 8 else np.uint16 if self.nl.W <= 16 else np.uint64
        table = np.empty((K, I, len(self.outs)), dtype=dtype)
        per_chunk = max(1, (1 << 20) // max(I, 1))
        for lo in range(0, K, per_chunk):
            hi = min(K, lo + per_chunk)
            n = hi - lo
            ins = {name: np.tile(self.grid[:, j], n) for j, name in enumerate(self.names)}
            outs, _ = run_batch(self.plan, ins, np.repeat(self.keys[lo:hi], I, axis=0))
            for o_idx, o in enumerate(self.outs):
                table[lo:hi, :, o_idx] = np.asarray(outs[o]).reshape(n, I)
        return table

    def consistent_count(self) -> int:
        """Consistent keys (each class stands for 16 per SB)."""
        return int(self.alive.sum()) * 16 ** self.x

    def key_of(self, k: int) -> list[int]:
        return [int(v) for v in self.keys[k]]

    def respond(self, vec: Mapping[str, int]) -> np.ndarray:
        """(K, O) outputs of every class on one input vector."""
        K = len(self.classes)
        ins = {n: np.full(K, int(vec[n]), dtype=np.uint64) for n in self.names}
        outs, _ = run_batch(self.plan, ins, self.keys)
        return np.stack([np.asarray(outs[o]) for o in self.outs], axis=1)

    def constrain(self, vec: Mapping[str, int], outs: Mapping[str, int]) -> None:
        resp = self.respond(vec)
        want = np.array([int(outs[o]) for o in self.outs], dtype=np.uint64)
        self.alive &= (resp == want).all(axis=1)

    def find_dip(self) -> Dip | None:
        alive = np.flatnonzero(self.alive)
        if len(alive) < 2:
            return None
        sub = self.table[alive]
        diff = (sub != sub[0]).any(axis=2)          # (alive, I)
        cols = diff.any(axis=0)
        if not cols.any():
            return None
        i = int(np.argmax(cols))
        k2 = alive[int(np.argmax(diff[:, i]))]
        vec = {n: int(self.grid[i, j]) for j, n in enumerate(self.names)}
        return Dip(vec, self.key_of(alive[0]), self.key_of(k2))

    def any_key(self) -> list[int] | None:
        alive = np.flatnonzero(self.alive)
        return self.key_of(alive[0]) if len(alive) else None


def find_dip(locked, constraints=(), config: AttackConfig | None = None) -> Dip | None:
    """A distinguishing input for the constraint-consistent keys, or None."""
    cfg = config or AttackConfig()
    nl = _netlist(locked)
    if not nl.sbs:
        return None
    if cfg.backend == "smt":
        solver = smtlib.find_solver(cfg.solver_cmd)
        if solver is not None:
            return _smt_dip(nl, list(constraints), solver, cfg.timeout_s)
        log.warning("no SMT solver found; using the enumerative backend")
    eb = EnumBackend(nl, cfg)
    for vec, outs in constraints:
        eb.constrain(vec, outs)
    return eb.find_dip()


def _smt_dip(nl: Netlist, constraints: list[Constraint], solver: str, timeout_s) -> Dip | None:
    status, model = smtlib.run_solver(smtlib.export_smtlib(nl, constraints), solver, timeout_s)
    if status == "unsat":
        return None
    if status != "sat":
        raise smtlib.SolverError(f"solver answered {status}")
    x = len(nl.sbs)
    vec = {i: int(model[smtlib.input_symbol(i)]) for i in nl.inputs}
    k1 = [int(model[smtlib.key_symbol(1, j)]) for j in range(x)]
    k2 = [int(model[smtlib.key_symbol(2, j)]) for j in range(x)]
    return Dip(vec, k1, k2)


def _smt_any_key(nl: Netlist, constraints, solver, timeout_s) -> list[int] | None:
    p = smtlib.consistent_key_problem(nl, constraints)
    names = [smtlib.key_symbol(1, j) for j in range(len(nl.sbs))]
    status, model = smtlib.run_solver(p.text(names), solver, timeout_s)
    if status != "sat":
        return None
    return [int(model[n]) for n in names]


# ---------------------------------------------------------------------------
# the loop

def golden_oracle(locked) -> Callable[[Mapping[str, int]], dict[str, int]]:
    """Black box answering queries with the golden key."""
    plan = Plan(locked.netlist)
    key = locked.golden_key

    def ask(vec):
        return simulate(plan, key, vec).outputs
    return ask


def attack_loop(foundry, oracle: Callable[[Mapping[str, int]], Mapping[str, int]],
                config: AttackConfig | None = None) -> AttackResult:
    cfg = config or AttackConfig()
    nl = _netlist(foundry)
    start = time.monotonic()

    def elapsed():
        return time.monotonic() - start

    if not nl.sbs:
        return AttackResult(KEY_FOUND, "", 0, 0, elapsed())

    solver = smtlib.find_solver(cfg.solver_cmd) if cfg.backend == "smt" else None
    if cfg.backend == "smt" and solver is None:
        log.warning("no SMT solver found; using the enumerative backend")
    if cfg.backend not in ("enum", "smt"):
        raise ValueError(f"unknown backend {cfg.backend!r}")

    eb = None
    if solver is None:
        try:
            eb = EnumBackend(nl, cfg)
        except CapacityExceeded as e:
            log.info("attack stopped: %s", e)
            return AttackResult(TIMEOUT, None, 0, 0, elapsed(), reason="capacity")

    constraints: list[Constraint] = []
    counts = [eb.consistent_count()] if eb else []
    iterations = 0
    while True:
        if iterations >= cfg.max_iters:
            return AttackResult(TIMEOUT, None, len(constraints), iterations, elapsed(),
                                "iterations", counts)
        if elapsed() > cfg.timeout_s:
            return AttackResult(TIMEOUT, None, len(constraints), iterations, elapsed(),
                                "wall", counts)
        iterations += 1
        dip = eb.find_dip() if eb else _smt_dip(nl, constraints, solver, cfg.timeout_s)
        if dip is None:
            break
        answer = {o: int(v) for o, v in oracle(dip.input).items()}
        constraints.append((dict(dip.input), answer))
        if eb:
            eb.constrain(dip.input, answer)
            counts.append(eb.consistent_count())
            # the oracle disagrees with k1 or k2, so at least one class drops
            assert counts[-1] < counts[-2], "DIP did not shrink the consistent key set"

    key = eb.any_key() if eb else _smt_any_key(nl, constraints, solver, cfg.timeout_s)
    if key is None:
        return AttackResult(INFEASIBLE, None, len(constraints), iterations, elapsed(),
                            "no key matches the oracle", counts)
    return AttackResult(KEY_FOUND, join_key(key), len(constraints), iterations, elapsed(),
                        None, counts)


def key_consistent(design, key: str, constraints) -> bool:
    plan = Plan(_netlist(design))
    return all(simulate(plan, key, vec).outputs == dict(outs) for vec, outs in constraints)
