"""QF_BV encoding of locked netlists, a reference evaluator, and a solver shim.

Terms are plain tuples:

    ("sym", name)            declared constant or defined function
    ("bv", value, width)     literal
    ("bool", True|False)
    (op, arg, ...)           op in SMT-LIB spelling, e.g. "bvadd", "ite", "="
    ("extract", hi, lo, arg)

A :class:`Problem` collects declarations, ``define-fun`` chains and
assertions. It prints as SMT-LIB text, and :meth:`Problem.evaluate` computes
every definition from concrete values of the declared constants, which is
how the encoding is checked when no external solver is around.
"""
from __future__ import annotations

import os
import re
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .dfg import OPTYPES
from .netlist import Netlist
from .polysb import KEY_BITS, Policy


class EncodingError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


_BV_FNS = {
    "bvadd": lambda a, b: a + b,
    "bvsub": lambda a, b: a - b,
    "bvmul": lambda a, b: a * b,
    "bvand": lambda a, b: a & b,
    "bvor": lambda a, b: a | b,
    "bvxor": lambda a, b: a ^ b,
}

_SYMBOL = re.compile(r"^[A-Za-z_][A-Za-z0-9_+\-.]*$")


@dataclass
class Problem:
    decls: list[tuple[str, int]] = field(default_factory=list)          # (name, width)
    defs: list[tuple[str, int | None, tuple]] = field(default_factory=list)  # width None = Bool
    asserts: list[tuple] = field(default_factory=list)
    _widths: dict[str, int | None] = field(default_factory=dict)

    def declare(self, name: str, width: int) -> tuple:
        self._add_name(name, width)
        self.decls.append((name, width))
        return ("sym", name)

    def define(self, name: str, width: int | None, term: tuple) -> tuple:
        self._add_name(name, width)
        self.defs.append((name, width, term))
        return ("sym", name)

    def _add_name(self, name, width):
        if not _SYMBOL.match(name):
            raise EncodingError(f"not a simple SMT-LIB symbol: {name!r}")
        if name in self._widths:
            raise EncodingError(f"symbol {name} defined twice")
        self._widths[name] = width

    # -- printing ---------------------------------------------------------
    def text(self, get_values: Sequence[str] = ()) -> str:
        lines = ["(set-logic QF_BV)"]
        lines += [f"(declare-const {n} (_ BitVec {w}))" for n, w in self.decls]
        for n, w, t in self.defs:
            sort = "Bool" if w is None else f"(_ BitVec {w})"
            lines.append(f"(define-fun {n} () {sort} {to_smt(t)})")
        lines += [f"(assert {to_smt(a)})" for a in self.asserts]
        lines.append("(check-sat)")
        if get_values:
            lines.append(f"(get-value ({' '.join(get_values)}))")
        return "\n".join(lines) + "\n"

    # -- reference semantics ----------------------------------------------
    def evaluate(self, env: Mapping[str, int]) -> dict[str, int | bool]:
        """Values of every declared and defined symbol under ``env``."""
        vals: dict[str, int | bool] = {}
        for n, w in self.decls:
            if n not in env:
                raise KeyError(f"no value for {n}")
            vals[n] = int(env[n]) & ((1 << w) - 1)
        for n, w, t in self.defs:
            vals[n] = _eval(t, vals, self._widths)[0]
        return vals

    def holds(self, env: Mapping[str, int]) -> bool:
        vals = self.evaluate(env)
        return all(_eval(a, vals, self._widths)[0] for a in self.asserts)


def to_smt(t: tuple) -> str:
    head = t[0]
    if head == "sym":
        return t[1]
    if head == "bv":
        return f"#b{t[1]:0{t[2]}b}"
    if head == "bool":
        return "true" if t[1] else "false"
    if head == "extract":
        return f"((_ extract {t[1]} {t[2]}) {to_smt(t[3])})"
    return f"({head} {' '.join(to_smt(a) for a in t[1:])})"


def _eval(t, vals, widths) -> tuple[int | bool, int | None]:
    """(value, width); width None marks a Bool."""
    head = t[0]
    if head == "sym":
        return vals[t[1]], widths[t[1]]
    if head == "bv":
        return t[1], t[2]
    if head == "bool":
        return t[1], None
    if head == "extract":
        v, _ = _eval(t[3], vals, widths)
        hi, lo = t[1], t[2]
        return (v >> lo) & ((1 << (hi - lo + 1)) - 1), hi - lo + 1
    args = [_eval(a, vals, widths) for a in t[1:]]
    if head in _BV_FNS:
        (a, w), (b, _) = args
        return _BV_FNS[head](a, b) & ((1 << w) - 1), w
    if head == "ite":
        (c, _), then, other = args
        return then if c else other
    if head == "=":
        return args[0][0] == args[1][0], None
    if head == "distinct":
        return args[0][0] != args[1][0], None
    if head == "and":
        return all(a for a, _ in args), None
    if head == "or":
        return any(a for a, _ in args), None
    if head == "not":
        return not args[0][0], None
    raise EncodingError(f"evaluator has no rule for {head}")


# ---------------------------------------------------------------------------
# netlist unrolling

def _fu_op(optype: str) -> str:
    op = OPTYPES[optype][1]
    if op not in _BV_FNS:
        raise EncodingError(f"no bit-vector operator for {optype}")
    return op


def conduction_terms(key: tuple) -> list[tuple]:
    """T1..T4 conduct when control bit equals polarity bit."""
    return [("=", ("extract", 7 - 2 * i, 7 - 2 * i, key), ("extract", 6 - 2 * i, 6 - 2 * i, key))
            for i in range(4)]


def unroll(p: Problem, nl: Netlist, tag: str, inputs: Mapping[str, tuple],
           keys: Sequence[tuple]) -> dict[str, tuple]:
    """Append definitions for one execution of ``nl``; returns output terms.

    Registers start at zero. Every net read in a step is defined once per
    step; mux selects are constants, so muxes only forward a term.
    """
    if Policy(nl.policy) is not Policy.WIRED_OR:
        raise EncodingError("only the wired-or policy has a two-valued encoding")
    if len(keys) != len(nl.sbs):
        raise EncodingError(f"need {len(nl.sbs)} key terms, got {len(keys)}")
    W = nl.W
    zero = ("bv", 0, W)
    driver: dict[str, tuple] = {}
    for i, n in nl.inputs.items():
        driver[n] = ("in", i)
    for r in nl.regs:
        driver[r.q] = ("reg", r.id)
    for f in nl.fus:
        driver[f.out] = ("fu", f)
    for m in nl.muxes:
        driver[m.out] = ("mux", m)
    for j, s in enumerate(nl.sbs):
        driver[s.z] = ("sb", j, s, 0)
        driver[s.w] = ("sb", j, s, 1)
    cond = []
    for j, k in enumerate(keys):
        cond.append([p.define(f"{tag}_{nl.sbs[j].id}_t{i + 1}", None, c)
                     for i, c in enumerate(conduction_terms(k))])

    reg_d = {r.id: r.d for r in nl.regs}
    state = {r.id: zero for r in nl.regs}
    for word in nl.ctrl:
        t = word.step
        memo: dict[str, tuple] = {}

        def get(net: str) -> tuple:
            if net in memo:
                return memo[net]
            d = driver[net]
            if d[0] == "in":
                term = inputs[d[1]]
            elif d[0] == "reg":
                term = state[d[1]]
            elif d[0] == "mux":
                m = d[1]
                term = get(m.ins[word.sel.get(m.id, 0)])
            elif d[0] == "fu":
                f = d[1]
                a, b = get(f.ins[0]), get(f.ins[1])
                term = p.define(f"{tag}_s{t}_{net}", W, (_fu_op(f.type), a, b))
            else:
                j, s, which = d[1], d[2], d[3]
                x, y = get(s.x), get(s.y)
                t1, t2, t3, t4 = cond[j]
                via_x, via_y = (t1, t3) if which == 0 else (t2, t4)
                term = p.define(f"{tag}_s{t}_{net}", W,
                                ("bvor", ("ite", via_x, x, zero), ("ite", via_y, y, zero)))
            memo[net] = term
            return term

        loaded = {r: get(reg_d[r]) for r in word.load}
        state.update(loaded)

    outs = {}
    for o, net in nl.outputs.items():
        d = driver[net]
        if d[0] == "reg":
            outs[o] = state[d[1]]
        elif d[0] == "in":
            outs[o] = inputs[d[1]]
        else:
            raise EncodingError(f"output {o} must be read from a register or port")
    return outs


def input_symbol(name: str) -> str:
    return f"in_{name}"


def key_symbol(copy: int, j: int) -> str:
    return f"k{copy}_{j}"


def _constraint_copies(p, nl, constraints, key_terms, copy):
    W = nl.W
    for c, (vec, outs) in enumerate(constraints):
        ins = {i: ("bv", int(vec[i]) & ((1 << W) - 1), W) for i in nl.inputs}
        got = unroll(p, nl, f"q{copy}c{c}", ins, key_terms)
        for o, term in got.items():
            p.asserts.append(("=", term, ("bv", int(outs[o]) & ((1 << W) - 1), W)))


def miter_problem(nl: Netlist, constraints=()) -> Problem:
    """Two key copies over shared inputs, outputs forced apart, each copy
    bound to every recorded (input, oracle output) pair."""
    p = Problem()
    ins = {i: p.declare(input_symbol(i), nl.W) for i in nl.inputs}
    k1 = [p.declare(key_symbol(1, j), KEY_BITS) for j in range(len(nl.sbs))]
    k2 = [p.declare(key_symbol(2, j), KEY_BITS) for j in range(len(nl.sbs))]
    o1 = unroll(p, nl, "a", ins, k1)
    o2 = unroll(p, nl, "b", ins, k2)
    diff = [("distinct", o1[o], o2[o]) for o in nl.outputs]
    p.asserts.append(diff[0] if len(diff) == 1 else ("or", *diff) if diff else ("bool", False))
    _constraint_copies(p, nl, constraints, k1, 1)
    _constraint_copies(p, nl, constraints, k2, 2)
    return p


def export_smtlib(nl: Netlist, constraints=()) -> str:
    p = miter_problem(nl, constraints)
    names = [input_symbol(i) for i in nl.inputs]
    names += [key_symbol(c, j) for c in (1, 2) for j in range(len(nl.sbs))]
    return p.text(names)


def consistent_key_problem(nl: Netlist, constraints=()) -> Problem:
    p = Problem()
    k = [p.declare(key_symbol(1, j), KEY_BITS) for j in range(len(nl.sbs))]
    _constraint_copies(p, nl, constraints, k, 1)
    return p


def model_problem(nl: Netlist) -> tuple[Problem, dict[str, tuple]]:
    """Single symbolic execution; the output terms are returned too."""
    p = Problem()
    ins = {i: p.declare(input_symbol(i), nl.W) for i in nl.inputs}
    k = [p.declare(key_symbol(1, j), KEY_BITS) for j in range(len(nl.sbs))]
    outs = unroll(p, nl, "a", ins, k)
    named = {o: p.define(f"out_{o}", nl.W, t) for o, t in outs.items()}
    return p, named


def modeled_outputs(nl: Netlist, key: Sequence[int], inputs: Mapping[str, int],
                    solver_cmd: str | None = None) -> dict[str, int]:
    """Outputs as the encoding models them.

    With ``solver_cmd`` the inputs and key are pinned by assertions and the
    solver reports the output values; otherwise the internal evaluator runs.
    """
    p, outs = model_problem(nl)
    env = {input_symbol(i): inputs[i] for i in nl.inputs}
    env.update({key_symbol(1, j): key[j] for j in range(len(nl.sbs))})
    if solver_cmd is None:
        vals = p.evaluate(env)
        return {o: vals[t[1]] for o, t in outs.items()}
    widths = dict(p.decls)
    for name, v in env.items():
        p.asserts.append(("=", ("sym", name), ("bv", int(v) & ((1 << widths[name]) - 1), widths[name])))
    status, model = run_solver(p.text([t[1] for t in outs.values()]), solver_cmd)
    if status != "sat":
        raise SolverError(f"pinned model query returned {status}")
    return {o: model[t[1]] for o, t in outs.items()}


# ---------------------------------------------------------------------------
# external solver

DEFAULT_SOLVER = "z3 -smt2"

_VALUE = re.compile(r"\(\s*(\|[^|]*\||[^\s()]+)\s+(#b[01]+|#x[0-9a-fA-F]+|true|false)\s*\)")


def find_solver(cmd: str | None = None) -> str | None:
    """The solver command if its executable is on PATH, else None."""
    cmd = cmd or DEFAULT_SOLVER
    exe = shlex.split(cmd)[0]
    return cmd if shutil.which(exe) else None


def parse_model(text: str) -> dict[str, int | bool]:
    out = {}
    for name, val in _VALUE.findall(text):
        name = name.strip("|")
        if val in ("true", "false"):
            out[name] = val == "true"
        elif val.startswith("#b"):
            out[name] = int(val[2:], 2)
        else:
            out[name] = int(val[2:], 16)
    return out


def run_solver(text: str, solver_cmd: str = DEFAULT_SOLVER, timeout_s: float | None = None
               ) -> tuple[str, dict[str, int | bool]]:
    """Write ``text`` to a temp file and run the solver on it.

    ``solver_cmd`` may contain ``{file}``; otherwise the path is appended.
    """
    fd, path = tempfile.mkstemp(suffix=".smt2")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        argv = shlex.split(solver_cmd)
        argv = [a.replace("{file}", path) for a in argv] if "{file}" in solver_cmd else argv + [path]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout_s)
        except FileNotFoundError as e:
            raise SolverError(f"solver not found: {argv[0]}") from e
        except subprocess.TimeoutExpired as e:
            raise SolverError("solver timed out") from e
    finally:
        os.unlink(path)
    out = proc.stdout.strip()
    status = out.split(None, 1)[0] if out else ""
    if status not in ("sat", "unsat", "unknown"):
        raise SolverError(f"unexpected solver output: {(out or proc.stderr)[:200]!r}")
    return status, (parse_model(out) if status == "sat" else {})
