"""Time frames, security weights and the security-aware force-directed scheduler."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping

from .dfg import Dfg, fanout_count, reachable_primary_outputs, topo_order

# force comparisons closer than this are ties (resolved by earliest step)
FORCE_EPS = 1e-9


class InfeasibleLatency(ValueError):
    pass


@dataclass(frozen=True)
class SecurityWeight:
    po: int
    fo: int

    @property
    def w(self) -> int:
        return self.po + self.fo


@dataclass(frozen=True)
class TimeFrame:
    asap: int
    alap: int

    @property
    def mobility(self) -> int:
        return self.alap - self.asap + 1

    def steps(self) -> range:
        return range(self.asap, self.alap + 1)


@dataclass
class Schedule:
    L: int
    assignment: dict[str, int]
    frames: dict[str, TimeFrame]  # initial (unconstrained) frames
    weights: dict[str, SecurityWeight]
    types: dict[str, str]
    # candidate steps the scheduler chose from when placing each node
    placed_from: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def dump(self) -> str:
        lines = []
        for n in sorted(self.assignment):
            f, wt = self.frames[n], self.weights[n]
            lines.append(
                f"node {n} type {self.types[n]} step {self.assignment[n]} "
                f"asap {f.asap} alap {f.alap} mob {f.mobility} "
                f"po {wt.po} fo {wt.fo} w {wt.w}"
            )
        return "\n".join(lines) + "\n"


def critical_path_length(dfg: Dfg) -> int:
    depth = {}
    for n in topo_order(dfg):
        depth[n] = 1 + max((depth[p] for p in dfg.pred_nodes[n]), default=0)
    return max(depth.values(), default=0)


def compute_frames(dfg: Dfg, L: int) -> dict[str, TimeFrame]:
    order = topo_order(dfg)
    asap, alap = {}, {}
    for n in order:
        asap[n] = 1 + max((asap[p] for p in dfg.pred_nodes[n]), default=0)
    for n in reversed(order):
        alap[n] = min((alap[s] - 1 for s in dfg.succ_nodes[n]), default=L)
    cp = max(asap.values(), default=0)
    if L < cp:
        raise InfeasibleLatency(f"latency {L} below critical path length {cp}")
    return {n: TimeFrame(asap[n], alap[n]) for n in order}


def compute_weights(dfg: Dfg) -> dict[str, SecurityWeight]:
    return {
        n: SecurityWeight(len(reachable_primary_outputs(dfg, n)), fanout_count(dfg, n))
        for n in dfg.node_ids
    }


# ---------------------------------------------------------------------------
# force-directed machinery

def distribution_graph(dfg: Dfg, frames: Mapping[str, TimeFrame]) -> dict[str, dict[int, float]]:
    """Per resource type, expected operator count at each step.

    A node with a one-step frame counts 1 at that step (scheduled); others
    spread 1/mobility over their frame.
    """
    dg: dict[str, dict[int, float]] = defaultdict(lambda: defaultdict(float))
    for n, f in frames.items():
        p = 1.0 / f.mobility
        row = dg[dfg.optype[n]]
        for t in f.steps():
            row[t] += p
    return dg


def _frame_force(row: Mapping[int, float], old: TimeFrame, new_lo: int, new_hi: int) -> float:
    p_old = 1.0 / old.mobility
    p_new = 1.0 / (new_hi - new_lo + 1)
    s_old = sum(row.get(t, 0.0) for t in old.steps())
    s_new = sum(row.get(t, 0.0) for t in range(new_lo, new_hi + 1))
    return p_new * s_new - p_old * s_old


def implied_frames(dfg: Dfg, frames: Mapping[str, TimeFrame], node: str, step: int
                   ) -> dict[str, tuple[int, int]]:
    """Frames of other nodes that shrink when ``node`` is fixed at ``step``."""
    lo = {node: step}
    hi = {node: step}
    stack = [node]
    while stack:
        u = stack.pop()
        ua = lo[u]
        for v in dfg.succ_nodes[u]:
            if ua + 1 > lo.get(v, frames[v].asap):
                lo[v] = ua + 1
                stack.append(v)
    stack = [node]
    while stack:
        u = stack.pop()
        ub = hi[u]
        for v in dfg.pred_nodes[u]:
            if ub - 1 < hi.get(v, frames[v].alap):
                hi[v] = ub - 1
                stack.append(v)
    changed = {}
    for v in (set(lo) | set(hi)) - {node}:
        changed[v] = (lo.get(v, frames[v].asap), hi.get(v, frames[v].alap))
    return changed


def force(dfg: Dfg, frames: Mapping[str, TimeFrame], node: str, step: int,
          dg: Mapping[str, Mapping[int, float]] | None = None) -> float:
    """Total force of fixing ``node`` at ``step``: self force plus the forces
    of every predecessor/successor frame reduction it implies."""
    f = frames[node]
    if not f.asap <= step <= f.alap:
        raise ValueError(f"step {step} outside frame [{f.asap}, {f.alap}] of {node}")
    if dg is None:
        dg = distribution_graph(dfg, frames)
    total = _frame_force(dg[dfg.optype[node]], f, step, step)
    for v, (a, b) in implied_frames(dfg, frames, node, step).items():
        total += _frame_force(dg[dfg.optype[v]], frames[v], a, b)
    return total


def min_force_step(dfg, frames, node, candidates, dg=None) -> int:
    if dg is None:
        dg = distribution_graph(dfg, frames)
    best, best_f = None, None
    for t in sorted(candidates):
        fv = force(dfg, frames, node, t, dg)
        if best is None or fv < best_f - FORCE_EPS:
            best, best_f = t, fv
    return best


# ---------------------------------------------------------------------------
# scheduler

class _State:
    def __init__(self, dfg: Dfg, frames: dict[str, TimeFrame]):
        self.dfg = dfg
        self.frames = dict(frames)
        self.fixed: dict[str, int] = {}
        self.placed_from: dict[str, tuple[int, ...]] = {}
        self.steps_of_type: dict[str, set[int]] = defaultdict(set)

    def place(self, n: str, t: int, candidates) -> None:
        for v, (a, b) in implied_frames(self.dfg, self.frames, n, t).items():
            self.frames[v] = TimeFrame(a, b)
        self.frames[n] = TimeFrame(t, t)
        self.fixed[n] = t
        self.placed_from[n] = tuple(sorted(candidates))
        self.steps_of_type[self.dfg.optype[n]].add(t)

    def place_min_force(self, n: str, candidates) -> None:
        t = min_force_step(self.dfg, self.frames, n, candidates)
        self.place(n, t, candidates)


def schedule_secure(dfg: Dfg, L: int | None = None) -> Schedule:
    if L is None:
        L = critical_path_length(dfg)
    frames0 = compute_frames(dfg, L)
    weights = compute_weights(dfg)
    w = {n: weights[n].w for n in weights}
    st = _State(dfg, frames0)

    cp = [n for n in topo_order(dfg) if frames0[n].mobility == 1]
    for n in cp:
        st.place(n, frames0[n].asap, (frames0[n].asap,))

    # per type, the heaviest critical-path node with w > 2 (ties: lowest id)
    anchor: dict[str, str] = {}
    for n in sorted(cp):
        r = dfg.optype[n]
        if w[n] > 2 and (r not in anchor or w[n] > w[anchor[r]]):
            anchor[r] = n

    def narrowed(n: str, exclude: set[int]) -> list[int]:
        return [t for t in st.frames[n].steps() if t not in exclude]

    def schedule_successors(u: str) -> None:
        for v in st.dfg.succ_nodes[u]:
            if v in st.fixed:
                continue
            r = dfg.optype[v]
            full = list(st.frames[v].steps())
            cands = full
            if w[v] >= 2:
                cands = narrowed(v, st.steps_of_type[r])
                if not cands and w[v] > 2 and r in anchor:
                    cands = narrowed(v, {st.fixed[anchor[r]]})
                cands = cands or full
            st.place_min_force(v, cands)
            schedule_successors(v)

    mobile = [n for n in dfg.node_ids if frames0[n].mobility > 1]
    by_type: dict[str, list[str]] = defaultdict(list)
    for n in mobile:
        by_type[dfg.optype[n]].append(n)
    type_order = sorted(by_type, key=lambda r: (-max(w[n] for n in by_type[r]), r))

    for r in type_order:
        prio = sorted((n for n in by_type[r] if w[n] > 2), key=lambda n: (-w[n], n))
        for p in prio:
            if p in st.fixed:
                continue
            full = list(st.frames[p].steps())
            cands = full
            if r in anchor:
                cands = narrowed(p, {st.fixed[anchor[r]]}) or full
            st.place_min_force(p, cands)
            schedule_successors(p)
        for n in by_type[r]:
            if n in st.fixed:
                continue
            st.place_min_force(n, list(st.frames[n].steps()))
            schedule_successors(n)

    return Schedule(
        L=L,
        assignment={n: st.fixed[n] for n in dfg.node_ids},
        frames={n: frames0[n] for n in dfg.node_ids},
        weights=weights,
        types=dict(dfg.optype),
        placed_from=st.placed_from,
    )


def separation_anchor(schedule: Schedule, optype: str) -> str | None:
    """Heaviest (w > 2) critical-path node of a type, lowest id on ties."""
    best = None
    for n in sorted(schedule.assignment):
        if schedule.types[n] != optype or schedule.frames[n].mobility != 1:
            continue
        wn = schedule.weights[n].w
        if wn > 2 and (best is None or wn > schedule.weights[best].w):
            best = n
    return best


def parse_schedule_dump(text: str) -> dict[str, dict[str, str]]:
    rows = {}
    for line in text.splitlines():
        toks = line.split()
        if not toks:
            continue
        kv = dict(zip(toks[0::2], toks[1::2]))
        rows[kv["node"]] = kv
    return rows
