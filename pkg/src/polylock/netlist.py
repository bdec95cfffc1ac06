"""Datapath netlist model and its JSON serialization.

Endpoints are strings. Net sources: ``in:<id>``, ``fu:<id>``, ``reg:<id>``,
``mux:<id>``, ``sb:<id>.z`` / ``sb:<id>.w``. Net sinks: ``fu:<id>.<port>``,
``reg:<id>.d``, ``mux:<id>.<k>``, ``sb:<id>.x`` / ``sb:<id>.y``,
``out:<id>``.

Control word ``ctrl[t]`` for t = 1..L drives the datapath at control step t;
``ctrl[0]`` is the reset word and is left empty by the binder. Primary input
ports hold their values for the whole run.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field


class NetlistError(ValueError):
    pass


@dataclass
class Fu:
    id: str
    type: str
    ins: list[str]
    out: str
    ops: dict[int, str] = field(default_factory=dict)  # step -> dfg node


@dataclass
class Reg:
    id: str
    d: str
    q: str


@dataclass
class Mux:
    id: str
    ins: list[str]
    out: str


@dataclass
class SwitchBox:
    id: str
    x: str
    y: str
    z: str
    w: str
    site: dict = field(default_factory=dict)
    mode: str | None = None  # correct routing mode; None in the foundry view


@dataclass
class Net:
    id: str
    source: str
    sinks: list[str] = field(default_factory=list)


@dataclass
class CtrlWord:
    step: int
    sel: dict[str, int] = field(default_factory=dict)
    load: list[str] = field(default_factory=list)


@dataclass
class Netlist:
    name: str
    W: int
    L: int
    inputs: dict[str, str]   # primary input -> port net
    outputs: dict[str, str]  # primary output -> net observed after step L
    fus: list[Fu]
    regs: list[Reg]
    muxes: list[Mux]
    nets: list[Net]
    ctrl: list[CtrlWord]
    sbs: list[SwitchBox] = field(default_factory=list)
    policy: str = "wired_or"

    # -- lookups ---------------------------------------------------------
    def net(self, nid: str) -> Net:
        return self._nets()[nid]

    def _nets(self) -> dict[str, Net]:
        return {n.id: n for n in self.nets}

    def fu(self, fid: str) -> Fu:
        for f in self.fus:
            if f.id == fid:
                return f
        raise KeyError(f"unknown fu {fid!r}")

    def mux_by_id(self) -> dict[str, Mux]:
        return {m.id: m for m in self.muxes}

    def sink_net(self, sink: str) -> str:
        """Net currently driving a sink endpoint."""
        kind, rest = sink.split(":", 1)
        if kind == "out":
            return self.outputs[rest]
        cid, slot = rest.rsplit(".", 1)
        if kind == "fu":
            return self.fu(cid).ins[int(slot)]
        if kind == "mux":
            return self.mux_by_id()[cid].ins[int(slot)]
        if kind == "reg":
            return next(r for r in self.regs if r.id == cid).d
        if kind == "sb":
            sb = next(s for s in self.sbs if s.id == cid)
            return getattr(sb, slot)
        raise NetlistError(f"bad sink {sink!r}")

    def rewire(self, sink: str, new_net: str) -> None:
        """Point ``sink`` at ``new_net``, keeping net sink lists consistent."""
        nets = self._nets()
        old = self.sink_net(sink)
        nets[old].sinks.remove(sink)
        nets[new_net].sinks.append(sink)
        kind, rest = sink.split(":", 1)
        if kind == "out":
            self.outputs[rest] = new_net
            return
        cid, slot = rest.rsplit(".", 1)
        if kind == "fu":
            self.fu(cid).ins[int(slot)] = new_net
        elif kind == "mux":
            self.mux_by_id()[cid].ins[int(slot)] = new_net
        elif kind == "reg":
            next(r for r in self.regs if r.id == cid).d = new_net
        else:
            sb = next(s for s in self.sbs if s.id == cid)
            setattr(sb, slot, new_net)

    def new_net_id(self) -> str:
        used = {n.id for n in self.nets}
        i = len(self.nets)
        while f"n{i}" in used:
            i += 1
        return f"n{i}"

    def copy(self) -> "Netlist":
        return copy.deepcopy(self)

    # -- consistency -----------------------------------------------------
    def check(self) -> None:
        nets = self._nets()
        if len(nets) != len(self.nets):
            raise NetlistError("duplicate net ids")
        drivers: dict[str, str] = {}
        sinks: dict[str, list[str]] = {n: [] for n in nets}

        def src(nid, ep):
            if nid in drivers:
                raise NetlistError(f"net {nid} driven twice")
            drivers[nid] = ep

        def snk(nid, ep):
            if nid not in nets:
                raise NetlistError(f"{ep} reads unknown net {nid}")
            sinks[nid].append(ep)

        for i, nid in self.inputs.items():
            src(nid, f"in:{i}")
        for f in self.fus:
            if len(f.ins) != 2:
                raise NetlistError(f"fu {f.id} needs two inputs")
            src(f.out, f"fu:{f.id}")
            for p, nid in enumerate(f.ins):
                snk(nid, f"fu:{f.id}.{p}")
        for r in self.regs:
            src(r.q, f"reg:{r.id}")
            snk(r.d, f"reg:{r.id}.d")
        for m in self.muxes:
            src(m.out, f"mux:{m.id}")
            for k, nid in enumerate(m.ins):
                snk(nid, f"mux:{m.id}.{k}")
        for s in self.sbs:
            src(s.z, f"sb:{s.id}.z")
            src(s.w, f"sb:{s.id}.w")
            snk(s.x, f"sb:{s.id}.x")
            snk(s.y, f"sb:{s.id}.y")
        for o, nid in self.outputs.items():
            snk(nid, f"out:{o}")
        for nid, net in nets.items():
            if drivers.get(nid) != net.source:
                raise NetlistError(f"net {nid}: source {net.source} but driven by {drivers.get(nid)}")
            if sorted(net.sinks) != sorted(sinks[nid]):
                raise NetlistError(f"net {nid}: sink list out of date")
        if len(self.ctrl) != self.L + 1:
            raise NetlistError(f"expected {self.L + 1} control words, got {len(self.ctrl)}")
        muxes = self.mux_by_id()
        reg_ids = {r.id for r in self.regs}
        for t, word in enumerate(self.ctrl):
            if word.step != t:
                raise NetlistError(f"control word {t} labelled step {word.step}")
            for m, code in word.sel.items():
                if not 0 <= code < len(muxes[m].ins):
                    raise NetlistError(f"step {t}: select {code} out of range for {m}")
            for r in word.load:
                if r not in reg_ids:
                    raise NetlistError(f"step {t}: load of unknown register {r}")

    # -- JSON ------------------------------------------------------------
    def to_dict(self, redact: bool = False) -> dict:
        sbs = []
        for s in self.sbs:
            d = asdict(s)
            if redact:
                d.pop("mode")
            sbs.append(d)
        out = {
            "fus": [{**asdict(f), "ops": {str(k): v for k, v in f.ops.items()}} for f in self.fus],
            "regs": [asdict(r) for r in self.regs],
            "muxes": [asdict(m) for m in self.muxes],
            "nets": [asdict(n) for n in self.nets],
            "ctrl": [asdict(c) for c in self.ctrl],
            "meta": {
                "name": self.name, "W": self.W, "L": self.L,
                "inputs": self.inputs, "outputs": self.outputs, "policy": self.policy,
            },
        }
        if self.sbs:
            out["sbs"] = sbs
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Netlist":
        meta = d["meta"]
        nl = cls(
            name=meta.get("name", "design"),
            W=int(meta["W"]),
            L=int(meta["L"]),
            inputs=dict(meta["inputs"]),
            outputs=dict(meta["outputs"]),
            fus=[Fu(f["id"], f["type"], list(f["ins"]), f["out"],
                    {int(k): v for k, v in f.get("ops", {}).items()}) for f in d["fus"]],
            regs=[Reg(**r) for r in d["regs"]],
            muxes=[Mux(m["id"], list(m["ins"]), m["out"]) for m in d["muxes"]],
            nets=[Net(n["id"], n["source"], list(n["sinks"])) for n in d["nets"]],
            ctrl=[CtrlWord(c["step"], dict(c["sel"]), list(c["load"])) for c in d["ctrl"]],
            sbs=[SwitchBox(s["id"], s["x"], s["y"], s["z"], s["w"], dict(s.get("site", {})),
                           s.get("mode")) for s in d.get("sbs", [])],
            policy=meta.get("policy", "wired_or"),
        )
        nl.check()
        return nl

    def to_json(self, redact: bool = False) -> str:
        return json.dumps(self.to_dict(redact), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Netlist":
        return cls.from_dict(json.loads(text))


def resolve_source(nl: Netlist, net_id: str, step: int, muxes=None) -> str:
    """Follow a net back through muxes (using step selects) to its origin.

    Returns the source endpoint of the first non-mux driver. Switch boxes are
    not traversed; use on unlocked netlists.
    """
    if muxes is None:
        muxes = nl.mux_by_id()
    nets = nl._nets()
    sel = nl.ctrl[step].sel
    while True:
        src = nets[net_id].source
        if not src.startswith("mux:"):
            return src
        m = muxes[src[4:]]
        net_id = m.ins[sel.get(m.id, 0)]
