"""Command-line front end: ``polylock <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import attack as atk
from .bench import PRESETS, BenchSpec, ExperimentConfig, gen_bench, report, rows_to_csv, run_sweep
from .bind import synthesize
from .dfg import format_dfg, load_dfg
from .lock import DEFAULT_AREA, LockedDesign, insert_sbs
from .netlist import Netlist
from .sim import error_rate, simulate

log = logging.getLogger("polylock")


def _read_key(arg: str | None) -> str | None:
    if arg is None:
        return None
    p = Path(arg)
    text = p.read_text() if p.exists() else arg
    return "".join(text.split())


def _load_design(path: str) -> Netlist:
    return Netlist.from_json(Path(path).read_text())


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _parse_inputs(pairs: list[str]) -> dict[str, int]:
    out = {}
    for item in pairs:
        name, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"input {item!r} is not name=value")
        out[name] = int(val, 0)
    return out


# ---------------------------------------------------------------------------

def cmd_gen(a) -> int:
    if a.bench:
        spec = PRESETS[a.bench]
    else:
        if None in (a.ops, a.outputs, a.latency):
            raise ValueError("gen needs --bench or all of --ops --outputs --latency")
        edges = a.edges if a.edges is not None else 2 * a.ops + a.outputs
        spec = BenchSpec(a.name, a.latency, a.ops, edges, a.outputs, inputs=a.inputs)
    _write(a.out, format_dfg(gen_bench(spec, a.seed)))
    return 0


def cmd_hls(a) -> int:
    dfg = load_dfg(a.dfg)
    sched, nl = synthesize(dfg, a.latency, a.width)
    _write(a.out, nl.to_json() + "\n")
    sched_path = a.schedule or (str(Path(a.out).with_suffix(".sched")) if a.out not in (None, "-")
                                else None)
    if sched_path:
        _write(sched_path, sched.dump())
    return 0


def cmd_lock(a) -> int:
    if a.netlist:
        nl = _load_design(a.netlist)
    elif a.dfg:
        _, nl = synthesize(load_dfg(a.dfg), a.latency, a.width)
    else:
        raise ValueError("lock needs --netlist or --dfg")
    if nl.sbs:
        raise ValueError("netlist is already locked")
    nl.policy = a.policy
    locked = insert_sbs(nl, a.budget, a.cross, a.seed, a.max_sbs, DEFAULT_AREA)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "foundry.json").write_text(locked.to_json(redact=True) + "\n")
    (out / "golden.key").write_text(locked.golden_key + "\n")
    # re-validate what was written
    foundry = Netlist.from_json((out / "foundry.json").read_text())
    simulate(foundry, locked.golden_key, {i: 0 for i in foundry.inputs})
    if not a.redact:
        (out / "locked.json").write_text(locked.to_json() + "\n")
        LockedDesign.from_json((out / "locked.json").read_text(), locked.golden_key)
    print(json.dumps({"sb_count": locked.x, "key_bits": locked.key_bits,
                      "overhead_pct": round(locked.overhead, 4), "warnings": locked.warnings}))
    return 0


def cmd_sim(a) -> int:
    text = Path(a.design).read_text()
    if a.error_rate:
        locked = LockedDesign.from_json(text)
        rep = error_rate(locked, a.trials, a.seed)
        print(json.dumps({"sb_count": rep.sb_count, "trials": rep.trials,
                          "error_rate": rep.error_rate, "overhead_pct": rep.overhead}))
        return 0
    nl = Netlist.from_json(text)
    res = simulate(nl, _read_key(a.key), _parse_inputs(a.input))
    print(json.dumps({"outputs": res.outputs, "unknown": res.unknown}))
    return 0


def cmd_attack(a) -> int:
    foundry = _load_design(a.foundry)
    oracle_design = _load_design(a.oracle)
    golden = _read_key(a.golden) or ""
    oracle = atk.golden_oracle(LockedDesign(oracle_design, golden, 0.0))
    cfg = atk.AttackConfig(backend=a.backend, max_iters=a.max_iters, timeout_s=a.timeout_s,
                           solver_cmd=a.solver_cmd, max_enum_sbs=a.max_enum_sbs, seed=a.seed)
    res = atk.attack_loop(foundry, oracle, cfg)
    _write(a.out, res.to_json() + "\n")
    return 0


def cmd_sweep(a) -> int:
    overrides = {
        "seeds": [int(s) for s in a.seeds.split(",")] if a.seeds else None,
        "overheads": [float(s) for s in a.overheads.split(",")] if a.overheads else None,
        "trials": a.trials,
        "benchmarks": a.benchmarks.split(",") if a.benchmarks else None,
        "attack": True if a.attack else None,
    }
    cfg = ExperimentConfig.load(a.config, **overrides)
    _write(a.out, rows_to_csv(run_sweep(cfg)))
    return 0


def cmd_report(a) -> int:
    _write(a.out, report(Path(a.csv).read_text()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polylock", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic benchmark .dfg")
    g.add_argument("--bench", choices=sorted(PRESETS))
    g.add_argument("--name", default="synthetic")
    g.add_argument("--ops", type=int)
    g.add_argument("--edges", type=int)
    g.add_argument("--outputs", type=int)
    g.add_argument("--inputs", type=int)
    g.add_argument("--latency", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(fn=cmd_gen)

    h = sub.add_parser("hls", help="schedule and bind a .dfg into a netlist")
    h.add_argument("--dfg", required=True)
    h.add_argument("--latency", type=int)
    h.add_argument("--width", type=int, default=8)
    h.add_argument("--out", required=True, help="netlist JSON")
    h.add_argument("--schedule", help="schedule dump (default: <out>.sched)")
    h.set_defaults(fn=cmd_hls)

    lk = sub.add_parser("lock", help="insert switch boxes under an area budget")
    lk.add_argument("--netlist")
    lk.add_argument("--dfg")
    lk.add_argument("--latency", type=int)
    lk.add_argument("--width", type=int, default=8)
    lk.add_argument("--budget", type=float, required=True, help="area overhead, percent")
    lk.add_argument("--cross", type=float, default=0.5, help="fraction of cross-mode SBs")
    lk.add_argument("--seed", type=int, default=0)
    lk.add_argument("--max-sbs", type=int)
    lk.add_argument("--policy", choices=["wired_or", "strict_3v"], default="wired_or")
    lk.add_argument("--out-dir", default=".")
    lk.add_argument("--redact", action="store_true",
                    help="write only the foundry view and the key, no correct modes")
    lk.set_defaults(fn=cmd_lock)

    s = sub.add_parser("sim", help="simulate a design, or measure its error rate")
    s.add_argument("--design", required=True)
    s.add_argument("--key", help="key bits or a key file")
    s.add_argument("--input", action="append", default=[], metavar="NAME=VALUE")
    s.add_argument("--error-rate", action="store_true")
    s.add_argument("--trials", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_sim)

    at = sub.add_parser("attack", help="distinguishing-input attack")
    at.add_argument("--foundry", required=True, help="redacted locked design")
    at.add_argument("--oracle", required=True, help="locked design answering queries")
    at.add_argument("--golden", required=True, help="golden key bits or file")
    at.add_argument("--backend", choices=["enum", "smt"], default="enum")
    at.add_argument("--max-iters", type=int, default=1000)
    at.add_argument("--timeout-s", type=float, default=600.0)
    at.add_argument("--solver-cmd")
    at.add_argument("--max-enum-sbs", type=int, default=2)
    at.add_argument("--seed", type=int, default=0)
    at.add_argument("--out")
    at.set_defaults(fn=cmd_attack)

    sw = sub.add_parser("sweep", help="run an experiment grid from a TOML config")
    sw.add_argument("--config", required=True)
    sw.add_argument("--seeds")
    sw.add_argument("--overheads")
    sw.add_argument("--trials", type=int)
    sw.add_argument("--benchmarks")
    sw.add_argument("--attack", action="store_true")
    sw.add_argument("--out")
    sw.set_defaults(fn=cmd_sweep)

    r = sub.add_parser("report", help="metrics CSV -> gnuplot data")
    r.add_argument("--csv", required=True)
    r.add_argument("--out")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(f"polylock {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
