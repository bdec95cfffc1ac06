"""Functional-unit allocation, register allocation and datapath construction."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .dfg import Dfg
from .netlist import CtrlWord, Fu, Mux, Net, Netlist, Reg, resolve_source
from .sched import Schedule


@dataclass
class FuBinding:
    fus: list[tuple[str, str]]  # (fu id, resource type)
    map: dict[str, str]         # node -> fu id


@dataclass
class RegisterBinding:
    regs: list[str]
    map: dict[str, str]                   # edge id -> register
    lifetime: dict[str, tuple[int, int]]  # edge id -> (def step, last-use step)
    # node id -> (first, last) occupied step boundary;
    # boundary b sits between steps b and b+1, boundary 0 before step 1
    spans: dict[str, tuple[int, int]]
    value_reg: dict[str, str]


def allocate_fus(schedule: Schedule) -> FuBinding:
    """Bind nodes to FUs, heaviest nodes first.

    Nodes of one type are visited by descending security weight and each goes
    to the first FU of its type that is free at its step. Weighted nodes in
    pairwise-distinct steps therefore all land on the type's first FU, and a
    new FU opens only on a step conflict.
    """
    step = schedule.assignment
    by_type: dict[str, list[str]] = defaultdict(list)
    for n in sorted(step):
        by_type[schedule.types[n]].append(n)

    fus: list[tuple[str, str]] = []
    binding: dict[str, str] = {}
    for r in sorted(by_type):
        busy: list[set[int]] = []
        order = sorted(by_type[r], key=lambda n: (-schedule.weights[n].w, step[n], n))
        for n in order:
            for k, used in enumerate(busy):
                if step[n] not in used:
                    break
            else:
                k = len(busy)
                busy.append(set())
                fus.append((f"{r.lower()}{k}", r))
            busy[k].add(step[n])
            binding[n] = f"{r.lower()}{k}"
    return FuBinding(fus, binding)


def value_spans(dfg: Dfg, schedule: Schedule) -> dict[str, tuple[int, int]]:
    L = schedule.L
    outputs = set(dfg.outputs)
    spans = {}
    for v in dfg.node_ids:
        d = schedule.assignment[v]
        hi = d
        for e in dfg.out_edges.get(v, ()):
            if e.dst in outputs:
                hi = max(hi, L)
            else:
                hi = max(hi, schedule.assignment[e.dst] - 1)
        spans[v] = (d, hi)
    return spans


def allocate_registers(dfg: Dfg, schedule: Schedule) -> RegisterBinding:
    """Left-edge packing of value lifetimes into registers.

    Every edge leaving the same node carries the same value and shares its
    register. Primary inputs are not registered: FUs read the input ports,
    which hold their values for the whole run.
    """
    spans = value_spans(dfg, schedule)
    ends: list[int] = []
    value_reg = {}
    for v in sorted(spans, key=lambda v: (spans[v][0], spans[v][1], v)):
        lo, hi = spans[v]
        for k, end in enumerate(ends):
            if end < lo:
                ends[k] = hi
                break
        else:
            k = len(ends)
            ends.append(hi)
        value_reg[v] = f"r{k}"

    outputs = set(dfg.outputs)
    emap, life = {}, {}
    for e in dfg.edges:
        if e.src not in value_reg:
            continue
        emap[e.id] = value_reg[e.src]
        use = schedule.L if e.dst in outputs else schedule.assignment[e.dst]
        life[e.id] = (schedule.assignment[e.src], use)
    return RegisterBinding([f"r{k}" for k in range(len(ends))], emap, life, spans, value_reg)


def build_datapath(dfg: Dfg, schedule: Schedule, fub: FuBinding, regb: RegisterBinding,
                   W: int = 8) -> Netlist:
    L = schedule.L
    step = schedule.assignment
    nets: list[Net] = []
    counter = iter(range(10**9))

    def new_net(source: str) -> str:
        nid = f"n{next(counter)}"
        nets.append(Net(nid, source))
        return nid

    in_net = {i: new_net(f"in:{i}") for i in dfg.inputs}
    q_net = {r: new_net(f"reg:{r}") for r in regb.regs}
    fu_out = {fid: new_net(f"fu:{fid}") for fid, _ in fub.fus}

    ctrl = [CtrlWord(t) for t in range(L + 1)]
    muxes: list[Mux] = []

    def drive(sources: list[tuple[int, str]]) -> tuple[str, Mux | None]:
        """Net carrying the per-step ``sources`` (step, net); a mux if >1 distinct."""
        distinct = list(dict.fromkeys(n for _, n in sources))
        if len(distinct) == 1:
            return distinct[0], None
        mid = f"m{len(muxes)}"
        out = new_net(f"mux:{mid}")
        mux = Mux(mid, distinct, out)
        muxes.append(mux)
        for t, n in sources:
            prev = ctrl[t].sel.setdefault(mid, distinct.index(n))
            assert prev == distinct.index(n), "conflicting mux select"
        return out, mux

    def source_net(e) -> str:
        return in_net[e.src] if e.src in in_net else q_net[regb.map[e.id]]

    # functional units
    fus = []
    ops_of: dict[str, dict[int, str]] = defaultdict(dict)
    for n, fid in fub.map.items():
        assert step[n] not in ops_of[fid], f"fu {fid} double-booked at step {step[n]}"
        ops_of[fid][step[n]] = n
    for fid, r in fub.fus:
        ops = dict(sorted(ops_of[fid].items()))
        ins = []
        for p in (0, 1):
            srcs = [(t, source_net(dfg.in_edges[n][p])) for t, n in ops.items()]
            ins.append(drive(srcs)[0])
        fus.append(Fu(fid, r, ins, fu_out[fid], ops))

    # registers load node values at their step; ctrl[0] stays empty
    loads: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for n in dfg.node_ids:
        loads[regb.value_reg[n]].append((step[n], fu_out[fub.map[n]]))
    regs = []
    for r in regb.regs:
        srcs = sorted(loads[r])
        d, _ = drive(srcs)
        regs.append(Reg(r, d, q_net[r]))
        for t, _ in srcs:
            assert r not in ctrl[t].load, f"register {r} loaded twice at step {t}"
            ctrl[t].load.append(r)
    for word in ctrl:
        word.load.sort()
        word.sel = dict(sorted(word.sel.items()))

    outputs = {o: q_net[regb.value_reg[dfg.output_edge[o].src]] for o in dfg.outputs}

    # sink lists
    net_by_id = {n.id: n for n in nets}
    for f in fus:
        for p, nid in enumerate(f.ins):
            net_by_id[nid].sinks.append(f"fu:{f.id}.{p}")
    for m in muxes:
        for k, nid in enumerate(m.ins):
            net_by_id[nid].sinks.append(f"mux:{m.id}.{k}")
    for r in regs:
        net_by_id[r.d].sinks.append(f"reg:{r.id}.d")
    for o, nid in outputs.items():
        net_by_id[nid].sinks.append(f"out:{o}")

    nl = Netlist(
        name=dfg.name, W=W, L=L, inputs=in_net, outputs=outputs,
        fus=fus, regs=regs, muxes=muxes, nets=nets, ctrl=ctrl,
    )
    nl.check()
    return nl


def synthesize(dfg: Dfg, L: int | None = None, W: int = 8):
    """Schedule, bind and build; returns (schedule, netlist)."""
    from .sched import schedule_secure

    s = schedule_secure(dfg, L)
    nl = build_datapath(dfg, s, allocate_fus(s), allocate_registers(dfg, s), W)
    return s, nl


def fu_register_fanout(nl: Netlist, fu_id: str) -> int:
    nl.fu(fu_id)
    muxes = nl.mux_by_id()
    target = f"fu:{fu_id}"
    regs = {r.id: r for r in nl.regs}
    loaded = set()
    for word in nl.ctrl:
        for r in word.load:
            if resolve_source(nl, regs[r].d, word.step, muxes) == target:
                loaded.add(r)
    return len(loaded)
