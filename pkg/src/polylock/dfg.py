"""Dataflow graphs: parsing, validation, queries and a reference interpreter.

A graph is a set of binary operator nodes connected by value edges. Edges
start at a primary input or a node and end at a node port (0 or 1) or at a
primary output. The text format is line oriented::

    dfg <name>
    input <id>
    output <id>
    node <id> <optype>
    edge <id> <src-id> -> <dst-id>[.<port>]

``#`` starts a comment.
"""
from __future__ import annotations

import heapq
import re
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from typing import Callable, Iterable, Mapping

import numpy as np

# name -> (evaluator on unsigned ints / uint64 arrays, SMT-LIB operator)
OPTYPES: dict[str, tuple[Callable, str]] = {
    "Add": (lambda a, b: a + b, "bvadd"),
    "Sub": (lambda a, b: a - b, "bvsub"),
    "Mul": (lambda a, b: a * b, "bvmul"),
}


def register_optype(name: str, fn: Callable, smt_op: str) -> None:
    """Declare an extra binary operator type.

    ``fn`` must wrap modulo 2**64 on uint64 arrays (plain numpy arithmetic
    does) and be a pure function of its two operands.
    """
    if not re.fullmatch(r"[A-Za-z][A-Za-z0-9_]*", name):
        raise ValueError(f"bad optype name {name!r}")
    OPTYPES[name] = (fn, smt_op)


class DfgError(ValueError):
    pass


class DfgSyntaxError(DfgError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


class CycleError(DfgError):
    pass


class DanglingEdgeError(DfgError):
    pass


class DuplicateIdError(DfgError):
    pass


@dataclass(frozen=True)
class Edge:
    id: str
    src: str
    dst: str
    port: int | None = None  # None when dst is a primary output


@dataclass(frozen=True)
class Dfg:
    name: str
    nodes: tuple[tuple[str, str], ...]  # (node id, optype)
    edges: tuple[Edge, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]

    def __post_init__(self):
        validate(self)

    @cached_property
    def optype(self) -> dict[str, str]:
        return dict(self.nodes)

    @cached_property
    def node_ids(self) -> list[str]:
        return sorted(self.optype)

    @cached_property
    def out_edges(self) -> dict[str, list[Edge]]:
        d = defaultdict(list)
        for e in self.edges:
            d[e.src].append(e)
        return dict(d)

    @cached_property
    def in_edges(self) -> dict[str, list[Edge]]:
        """Node id -> its two operand edges, ordered by port."""
        d = defaultdict(list)
        for e in self.edges:
            if e.port is not None:
                d[e.dst].append(e)
        return {n: sorted(es, key=lambda e: e.port) for n, es in d.items()}

    @cached_property
    def output_edge(self) -> dict[str, Edge]:
        return {e.dst: e for e in self.edges if e.port is None}

    @cached_property
    def succ_nodes(self) -> dict[str, list[str]]:
        return {
            n: sorted({e.dst for e in self.out_edges.get(n, ()) if e.port is not None})
            for n in self.optype
        }

    @cached_property
    def pred_nodes(self) -> dict[str, list[str]]:
        return {
            n: sorted({e.src for e in self.in_edges[n] if e.src in self.optype})
            for n in self.optype
        }


# ---------------------------------------------------------------------------
# validation

def validate(dfg: Dfg) -> None:
    node_ids = [n for n, _ in dfg.nodes]
    names = node_ids + list(dfg.inputs) + list(dfg.outputs)
    _no_dups(names, "vertex")
    _no_dups([e.id for e in dfg.edges], "edge")
    if not dfg.outputs:
        raise DfgError("graph has no primary outputs")

    nodes = set(node_ids)
    inputs, outputs = set(dfg.inputs), set(dfg.outputs)
    for n, op in dfg.nodes:
        if op not in OPTYPES:
            raise DfgError(f"node {n}: undeclared optype {op!r}")

    incoming = defaultdict(list)
    outgoing = defaultdict(int)
    for e in dfg.edges:
        if e.src not in nodes and e.src not in inputs:
            raise DanglingEdgeError(f"edge {e.id}: unknown source {e.src!r}")
        if e.dst in nodes:
            if e.port not in (0, 1):
                raise DfgError(f"edge {e.id}: node destination needs port 0 or 1")
        elif e.dst in outputs:
            if e.port is not None:
                raise DfgError(f"edge {e.id}: output destination takes no port")
        else:
            raise DanglingEdgeError(f"edge {e.id}: unknown destination {e.dst!r}")
        incoming[e.dst].append(e)
        outgoing[e.src] += 1
    _check_acyclic(dfg, nodes)

    for n in node_ids:
        ports = sorted(e.port for e in incoming[n])
        if ports != [0, 1]:
            raise DfgError(f"node {n}: needs exactly one edge on each port 0 and 1, got {ports}")
    for o in dfg.outputs:
        if len(incoming[o]) != 1:
            raise DfgError(f"output {o}: fed by {len(incoming[o])} edges, expected 1")
    for i in dfg.inputs:
        if outgoing[i] == 0:
            raise DfgError(f"input {i}: unused")

    # every node must reach an output
    reach = set(dfg.outputs)
    changed = True
    while changed:
        changed = False
        for e in dfg.edges:
            if e.dst in reach and e.src not in reach:
                reach.add(e.src)
                changed = True
    dead = sorted(nodes - reach)
    if dead:
        raise DfgError(f"nodes reach no primary output: {', '.join(dead)}")


def _no_dups(ids: Iterable[str], what: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise DuplicateIdError(f"duplicate {what} id {i!r}")
        seen.add(i)


def _check_acyclic(dfg: Dfg, nodes: set[str]) -> None:
    succ = defaultdict(list)
    for e in dfg.edges:
        if e.src in nodes and e.dst in nodes:
            succ[e.src].append(e.dst)
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(nodes, WHITE)
    for root in sorted(nodes):
        if color[root] != WHITE:
            continue
        stack = [(root, iter(succ[root]))]
        color[root] = GREY
        while stack:
            n, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[n] = BLACK
                stack.pop()
            elif color[nxt] == GREY:
                raise CycleError(f"cycle through node {nxt!r}")
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(succ[nxt])))


# ---------------------------------------------------------------------------
# text format

_ID = r"[A-Za-z0-9_+\-]+"
_RE_EDGE = re.compile(rf"^({_ID})\.([0-9]+)$")


def parse_dfg(text: str) -> Dfg:
    name = None
    nodes, edges, inputs, outputs = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        toks = [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", line)]
        if not toks:
            continue
        kw, col = toks[0]

        def need(n):
            if len(toks) != n:
                at = toks[min(len(toks), n) - 1][1] if len(toks) > n else len(line) + 1
                raise DfgSyntaxError(f"'{kw}' expects {n - 1} fields", lineno, at)

        def ident(i):
            tok, c = toks[i]
            if not re.fullmatch(_ID, tok):
                raise DfgSyntaxError(f"bad identifier {tok!r}", lineno, c)
            return tok

        if kw == "dfg":
            need(2)
            name = ident(1)
        elif kw == "input":
            need(2)
            inputs.append(ident(1))
        elif kw == "output":
            need(2)
            outputs.append(ident(1))
        elif kw == "node":
            need(3)
            nodes.append((ident(1), ident(2)))
        elif kw == "edge":
            need(5)
            if toks[3][0] != "->":
                raise DfgSyntaxError("expected '->'", lineno, toks[3][1])
            dst_tok, dst_col = toks[4]
            port = None
            m = _RE_EDGE.match(dst_tok)
            if m:
                dst, port = m.group(1), int(m.group(2))
            elif re.fullmatch(_ID, dst_tok):
                dst = dst_tok
            else:
                raise DfgSyntaxError(f"bad destination {dst_tok!r}", lineno, dst_col)
            edges.append(Edge(ident(1), ident(2), dst, port))
        else:
            raise DfgSyntaxError(f"unknown keyword {kw!r}", lineno, col)
    if name is None:
        raise DfgSyntaxError("missing 'dfg <name>' header", 1, 1)
    return Dfg(name, tuple(nodes), tuple(edges), tuple(inputs), tuple(outputs))


def format_dfg(dfg: Dfg) -> str:
    lines = [f"dfg {dfg.name}"]
    lines += [f"input {i}" for i in dfg.inputs]
    lines += [f"output {o}" for o in dfg.outputs]
    lines += [f"node {n} {op}" for n, op in dfg.nodes]
    for e in dfg.edges:
        dst = e.dst if e.port is None else f"{e.dst}.{e.port}"
        lines.append(f"edge {e.id} {e.src} -> {dst}")
    return "\n".join(lines) + "\n"


def load_dfg(path) -> Dfg:
    with open(path, encoding="utf-8") as f:
        return parse_dfg(f.read())


def worked_example() -> Dfg:
    """Six-node subtract/add graph used as the scheduling walkthrough fixture.

    The node ids are ``a`` .. ``f``; :data:`WORKED_EXAMPLE_LABELS` maps them to
    the operator labels used in the walkthrough ('-1', '+3', ...). This is a
    reconstruction that satisfies every stated constraint of the walkthrough,
    not a copy of an original drawing.
    """
    text = resources.files("polylock").joinpath("data/worked_example.dfg").read_text()
    return parse_dfg(text)


WORKED_EXAMPLE_LABELS = {"a": "-1", "b": "-2", "c": "+1", "d": "+2", "e": "-3", "f": "+3"}


# ---------------------------------------------------------------------------
# queries

def topo_order(dfg: Dfg) -> list[str]:
    indeg = {n: len(dfg.pred_nodes[n]) for n in dfg.optype}
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for s in dfg.succ_nodes[n]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(heap, s)
    return order


def _check_node(dfg: Dfg, node: str) -> None:
    if node not in dfg.optype:
        raise KeyError(f"unknown node {node!r}")


def fanout_count(dfg: Dfg, node: str) -> int:
    _check_node(dfg, node)
    return len(dfg.out_edges.get(node, ()))


def reachable_primary_outputs(dfg: Dfg, node: str) -> frozenset[str]:
    _check_node(dfg, node)
    return _reach_table(dfg)[node]


def _reach_table(dfg: Dfg) -> dict[str, frozenset[str]]:
    cache = dfg.__dict__.get("_reach")
    if cache is None:
        outputs = set(dfg.outputs)
        cache = {}
        for n in reversed(topo_order(dfg)):
            acc = set()
            for e in dfg.out_edges.get(n, ()):
                if e.dst in outputs:
                    acc.add(e.dst)
                else:
                    acc |= cache[e.dst]
            cache[n] = frozenset(acc)
        dfg.__dict__["_reach"] = cache
    return cache


def evaluate(dfg: Dfg, inputs: Mapping[str, int], width: int = 8) -> dict[str, int]:
    """Reference interpreter: outputs of the graph with modulo 2**width ops.

    Values may be Python ints or uint64 numpy arrays (evaluated lane-wise).
    """
    mask = (1 << width) - 1
    if isinstance(next(iter(inputs.values()), 0), np.ndarray):
        mask = np.uint64(mask)
    val = {i: inputs[i] & mask for i in dfg.inputs}
    for n in topo_order(dfg):
        a, b = (val[e.src] for e in dfg.in_edges[n])
        val[n] = OPTYPES[dfg.optype[n]][0](a, b) & mask
    return {o: val[dfg.output_edge[o].src] for o in dfg.outputs}
