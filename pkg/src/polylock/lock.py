"""Switch-box insertion sites, insertion under an area budget, golden keys.

An *interconnect* here is one connection into a functional unit: either an
FU input port, or one data input of the mux in front of that port. A site is
an unordered pair of such interconnects carrying different nets:

* kind A: both enter the same FU, and that FU loads >= 2 distinct registers;
* kind B: they enter two FUs of different resource types.

Impact counts the registers that ever receive a corrupted value when either
interconnect of the site is corrupted, traced step by step through the
controller (all values feed primary outputs, so these are exactly the
downstream registers on output paths).
"""
from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field

from .bind import fu_register_fanout
from .netlist import Net, Netlist, SwitchBox
from .polysb import CROSS, CROSS_PATTERN, PARALLEL, PARALLEL_PATTERN, join_key, keys_for_mode

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class SbSite:
    kind: str                   # "A" or "B"
    sinks: tuple[str, str]      # the two interconnects (sink endpoints)
    nets: tuple[str, str]       # nets currently driving them
    hosts: tuple[str, ...]      # one FU (A) or two FUs (B)
    impact: int

    @property
    def id(self) -> str:
        return f"{self.kind}:{self.sinks[0]}|{self.sinks[1]}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sinks": list(self.sinks), "nets": list(self.nets),
                "hosts": list(self.hosts), "impact": self.impact}


@dataclass(frozen=True)
class AreaModel:
    """Transistor-count proxies; ``W`` is the datapath word width."""
    add: int = 28            # x W
    sub: int = 30            # x W
    mul: int = 20            # x W^2
    reg: int = 8             # x W
    mux_input: int = 6       # x W per data input
    sb_per_bit: int = 4      # x W
    sb_key_fixed: int = 0    # per SB, key distribution

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if k != "sb_key_fixed" and v <= 0:
                raise ValueError(f"area weight {k} must be positive")
            if v < 0:
                raise ValueError(f"area weight {k} must be non-negative")

    def fu_area(self, optype: str, W: int) -> int:
        if optype == "Mul":
            return self.mul * W * W
        if optype == "Sub":
            return self.sub * W
        return self.add * W

    def sb_area(self, W: int) -> int:
        return self.sb_per_bit * W + self.sb_key_fixed


DEFAULT_AREA = AreaModel()


def base_area(nl: Netlist, model: AreaModel = DEFAULT_AREA) -> int:
    W = nl.W
    return (sum(model.fu_area(f.type, W) for f in nl.fus)
            + model.reg * W * len(nl.regs)
            + model.mux_input * W * sum(len(m.ins) for m in nl.muxes))


def area_overhead(nl: Netlist, sb_count: int, model: AreaModel = DEFAULT_AREA) -> float:
    return 100.0 * sb_count * model.sb_area(nl.W) / base_area(nl, model)


# ---------------------------------------------------------------------------
# sites

def fu_interconnects(nl: Netlist) -> dict[str, list[tuple[str, str, tuple[int, ...], str]]]:
    """FU id -> [(sink endpoint, net, steps at which it carries an operand, port)].

    ``port`` is the FU port endpoint the interconnect ends up in.
    """
    muxes = nl.mux_by_id()
    src_of = {n.id: n.source for n in nl.nets}
    out = {}
    for f in nl.fus:
        conns = []
        for p, net in enumerate(f.ins):
            port = f"fu:{f.id}.{p}"
            conns.append((port, net, tuple(f.ops), port))
            src = src_of[net]
            if src.startswith("mux:"):
                m = muxes[src[4:]]
                for k, mnet in enumerate(m.ins):
                    steps = tuple(t for t in f.ops if nl.ctrl[t].sel.get(m.id, 0) == k)
                    conns.append((f"mux:{m.id}.{k}", mnet, steps, port))
        out[f.id] = conns
    return out


def _taint_registers(nl: Netlist, seeds: dict[tuple[str, int], int]) -> dict[str, int]:
    """Bitset taint flow. ``seeds[(fu, step)]`` holds the interconnect bits that
    corrupt that FU's operation; returns register -> union of bits it ever held."""
    muxes = nl.mux_by_id()
    src_of = {n.id: n.source for n in nl.nets}
    regs = {r.id: r for r in nl.regs}
    held = {r: 0 for r in regs}
    ever = {r: 0 for r in regs}
    for word in nl.ctrl:
        t = word.step
        fu_taint = {}
        for f in nl.fus:
            if t not in f.ops:
                continue
            bits = seeds.get((f.id, t), 0)
            for net in f.ins:
                src = _through_muxes(src_of, net, word.sel, muxes)
                if src.startswith("reg:"):
                    bits |= held[src[4:]]
            fu_taint[f.id] = bits
        new = {}
        for r in word.load:
            src = _through_muxes(src_of, regs[r].d, word.sel, muxes)
            new[r] = fu_taint.get(src[3:], 0) if src.startswith("fu:") else 0
        for r, bits in new.items():
            held[r] = bits
            ever[r] |= bits
    return ever


def _through_muxes(src_of: dict[str, str], net: str, sel, muxes) -> str:
    while True:
        src = src_of[net]
        if not src.startswith("mux:"):
            return src
        m = muxes[src[4:]]
        net = m.ins[sel.get(m.id, 0)]


def find_sites(nl: Netlist) -> list[SbSite]:
    if nl.sbs:
        raise ValueError("find_sites expects an unlocked netlist")
    conns = fu_interconnects(nl)
    index: list[tuple[str, str, str, str]] = []   # (fu, sink, net, port)
    seeds: dict[tuple[str, int], int] = {}
    for fid, cs in conns.items():
        for sink, net, steps, port in cs:
            bit = 1 << len(index)
            index.append((fid, sink, net, port))
            for t in steps:
                seeds[(fid, t)] = seeds.get((fid, t), 0) | bit
    ever = _taint_registers(nl, seeds)
    # per interconnect, bitset of registers it can corrupt
    reg_ids = [r.id for r in nl.regs]
    regs_of = [0] * len(index)
    for ri, r in enumerate(reg_ids):
        bits = ever[r]
        while bits:
            low = bits & -bits
            regs_of[low.bit_length() - 1] |= 1 << ri
            bits ^= low

    fu_type = {f.id: f.type for f in nl.fus}
    fanout = {f.id: fu_register_fanout(nl, f.id) for f in nl.fus}
    by_fu: dict[str, list[int]] = {}
    for i, (fid, *_) in enumerate(index):
        by_fu.setdefault(fid, []).append(i)

    sites = []

    def make(kind, i, j, hosts):
        a, b = sorted((i, j), key=lambda k: index[k][1])
        sites.append(SbSite(kind, (index[a][1], index[b][1]), (index[a][2], index[b][2]),
                            hosts, (regs_of[a] | regs_of[b]).bit_count()))

    fids = sorted(by_fu)
    for fid in fids:
        if fanout[fid] < 2:
            continue
        ids = by_fu[fid]
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                a, b = index[ids[x]], index[ids[y]]
                # a port paired with an input of its own mux would close a loop
                if a[2] != b[2] and a[1] != b[3] and b[1] != a[3]:
                    make("A", ids[x], ids[y], (fid,))
    for u in range(len(fids)):
        for v in range(u + 1, len(fids)):
            f1, f2 = fids[u], fids[v]
            if fu_type[f1] == fu_type[f2]:
                continue
            for i in by_fu[f1]:
                for j in by_fu[f2]:
                    if index[i][2] != index[j][2]:
                        make("B", i, j, (f1, f2))
    sites.sort(key=lambda s: (-s.impact, s.id))
    return sites


# ---------------------------------------------------------------------------
# locking

@dataclass
class LockedDesign:
    netlist: Netlist           # SBs spliced in; netlist.sbs holds placement order
    golden_key: str            # 8 bits per SB, placement order
    overhead: float
    warnings: list[str] = field(default_factory=list)

    @property
    def x(self) -> int:
        return len(self.netlist.sbs)

    @property
    def key_bits(self) -> int:
        return len(self.golden_key)

    @property
    def sbs(self) -> list[SwitchBox]:
        return self.netlist.sbs

    def foundry_view(self) -> Netlist:
        nl = self.netlist.copy()
        for s in nl.sbs:
            s.mode = None
        return nl

    def to_json(self, redact: bool = False) -> str:
        d = self.netlist.to_dict(redact=redact)
        d["meta"]["overhead_pct"] = self.overhead
        d["meta"]["sb_count"] = self.x
        d["meta"]["key_bits"] = self.key_bits
        d.setdefault("sbs", [])
        return json.dumps(d, indent=1)

    @classmethod
    def from_json(cls, text: str, golden_key: str = "") -> "LockedDesign":
        d = json.loads(text)
        nl = Netlist.from_dict(d)
        return cls(nl, golden_key, float(d["meta"].get("overhead_pct", 0.0)))


def _splice(nl: Netlist, sb_id: str, site: SbSite, mode: str) -> SwitchBox:
    s1, s2 = site.sinks
    n1, n2 = nl.sink_net(s1), nl.sink_net(s2)
    # a cross-mode SB takes its inputs swapped, so cross routing restores them
    x, y = (n1, n2) if mode == PARALLEL else (n2, n1)
    z = nl.new_net_id()
    nl.nets.append(Net(z, f"sb:{sb_id}.z"))
    w = nl.new_net_id()
    nl.nets.append(Net(w, f"sb:{sb_id}.w"))
    sb = SwitchBox(sb_id, x, y, z, w, site.to_dict(), mode)
    nl.sbs.append(sb)
    nets = {n.id: n for n in nl.nets}
    nets[x].sinks.append(f"sb:{sb_id}.x")
    nets[y].sinks.append(f"sb:{sb_id}.y")
    nl.rewire(s1, z)
    nl.rewire(s2, w)
    return sb


def _downstream(nl: Netlist, sinks) -> set[str]:
    """Nets combinationally reachable from the given sink endpoints."""
    nets = {n.id: n for n in nl.nets}
    muxes = nl.mux_by_id()
    sbs = {b.id: b for b in nl.sbs}
    fus = {f.id: f for f in nl.fus}
    seen: set[str] = set()
    todo = list(sinks)
    while todo:
        kind, rest = todo.pop().split(":", 1)
        if kind in ("out", "reg"):
            continue
        cid, slot = rest.rsplit(".", 1)
        if kind == "mux":
            outs = [muxes[cid].out]
        elif kind == "fu":
            outs = [fus[cid].out]
        else:
            outs = [sbs[cid].z, sbs[cid].w]
        for o in outs:
            if o not in seen:
                seen.add(o)
                todo.extend(nets[o].sinks)
    return seen


def _closes_loop(nl: Netlist, site: SbSite) -> bool:
    ins = {nl.sink_net(s) for s in site.sinks}
    return bool(ins & _downstream(nl, site.sinks))


def insert_sbs(nl: Netlist, budget: float, cross_fraction: float = 0.5, seed: int = 0,
               max_sbs: int | None = None, model: AreaModel = DEFAULT_AREA,
               sites: list[SbSite] | None = None) -> LockedDesign:
    """Greedy impact-ordered insertion while the area overhead stays within
    ``budget`` percent (and at most ``max_sbs`` boxes)."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if not 0.0 <= cross_fraction <= 1.0:
        raise ValueError("cross fraction must lie in [0, 1]")
    if sites is None:
        sites = find_sites(nl)
    chosen: list[SbSite] = []
    used: set[str] = set()
    trial = nl.copy()
    for site in sites:
        if max_sbs is not None and len(chosen) >= max_sbs:
            break
        if area_overhead(nl, len(chosen) + 1, model) > budget + 1e-9:
            break
        if used.intersection(site.sinks):
            continue
        if len({trial.sink_net(s) for s in site.sinks}) < 2 or _closes_loop(trial, site):
            continue
        _splice(trial, f"sb{len(chosen)}", site, PARALLEL)
        chosen.append(site)
        used.update(site.sinks)

    rng = random.Random(seed)
    x = len(chosen)
    n_cross = math.ceil(cross_fraction * x - 1e-9)
    cross_idx = set(rng.sample(range(x), n_cross))
    locked = nl.copy()
    parts = []
    for j, site in enumerate(chosen):
        mode = CROSS if j in cross_idx else PARALLEL
        _splice(locked, f"sb{j}", site, mode)
        parts.append(rng.choice(keys_for_mode(mode)))
    locked.check()
    warnings = []
    if x == 0:
        warnings.append("budget admits no switch boxes")
        log.warning("budget %.2f%% admits no switch boxes", budget)
    elif max_sbs is not None and x < max_sbs:
        warnings.append(f"only {x} of {max_sbs} requested switch boxes fit")
        log.warning("only %d of %d requested switch boxes fit", x, max_sbs)
    return LockedDesign(locked, join_key(parts), area_overhead(nl, x, model), warnings)


def strip_sbs(locked: LockedDesign | Netlist) -> Netlist:
    """Remove every SB, reconnecting each sink to the net its correct mode routes."""
    nl = getattr(locked, "netlist", locked).copy()
    for sb in list(nl.sbs):
        if sb.mode not in (PARALLEL, CROSS):
            raise ValueError(f"{sb.id}: correct mode unknown (foundry view?)")
        z_src, w_src = (sb.x, sb.y) if sb.mode == PARALLEL else (sb.y, sb.x)
        nets = {n.id: n for n in nl.nets}
        for out_net, src in ((sb.z, z_src), (sb.w, w_src)):
            for sink in list(nets[out_net].sinks):
                nl.rewire(sink, src)
        nets[sb.x].sinks.remove(f"sb:{sb.id}.x")
        nets[sb.y].sinks.remove(f"sb:{sb.id}.y")
        nl.nets = [n for n in nl.nets if n.id not in (sb.z, sb.w)]
        nl.sbs.remove(sb)
    nl.check()
    return nl


def golden_pattern(mode: str) -> int:
    return PARALLEL_PATTERN if mode == PARALLEL else CROSS_PATTERN
