"""Synthetic benchmarks, sweep orchestration and plot-data reports."""
from __future__ import annotations

import csv
import io
import logging
import math
import random
import statistics
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attack import AttackConfig, attack_loop, golden_oracle
from .bind import synthesize
from .dfg import Dfg, Edge
from .lock import DEFAULT_AREA, find_sites, insert_sbs
from .sim import error_rate

log = logging.getLogger(__name__)

OP_MIX = (("Add", 0.4), ("Sub", 0.35), ("Mul", 0.25))


@dataclass(frozen=True)
class BenchSpec:
    name: str
    schedule_length: int
    operators: int
    edges: int
    outputs: int
    sbs: int = 0
    inputs: int | None = None
    strict_edges: bool = True   # False: edge count is a soft target (warn only)

    def __post_init__(self):
        if self.operators < 1 or self.schedule_length < 1:
            raise ValueError(f"{self.name}: need at least one operator and one step")
        if self.outputs < 1:
            raise ValueError(f"{self.name}: need at least one primary output")
        if self.edges < self.operators:
            raise ValueError(f"{self.name}: fewer edges than operators")

    @property
    def realizable_edges(self) -> int:
        """Edges of any binary-operator graph with these counts."""
        return 2 * self.operators + self.outputs

    @property
    def edges_within_tolerance(self) -> bool:
        return abs(self.realizable_edges - self.edges) <= EDGE_TOLERANCE * self.edges


EDGE_TOLERANCE = 0.05

PRESETS: dict[str, BenchSpec] = {s.name: s for s in (
    BenchSpec("BM1", 40, 202, 405, 10, 16, strict_edges=False),
    BenchSpec("BM2", 45, 250, 451, 17, 20, strict_edges=False),
    BenchSpec("BM3", 55, 261, 457, 25, 23, strict_edges=False),
    BenchSpec("BM4", 60, 265, 478, 36, 25, strict_edges=False),
    BenchSpec("BM5", 68, 271, 482, 41, 28, strict_edges=False),
    BenchSpec("BM6", 79, 275, 489, 50, 31, strict_edges=False),
    BenchSpec("BM7", 85, 301, 501, 55, 35, strict_edges=False),
    BenchSpec("BM8", 101, 354, 505, 67, 39, strict_edges=False),
    BenchSpec("BM9", 110, 408, 510, 78, 55, strict_edges=False),
    BenchSpec("BM10", 112, 507, 521, 86, 64, strict_edges=False),
)}


def _level_sizes(rng: random.Random, n: int, levels: int, last_cap: int) -> list[int]:
    sizes = [1] * levels
    for _ in range(n - levels):
        sizes[rng.randrange(levels)] += 1
    while sizes[-1] > last_cap:
        sizes[-1] -= 1
        sizes[rng.randrange(levels - 1)] += 1
    return sizes


def gen_bench(spec: BenchSpec, seed: int = 0) -> Dfg:
    """Seeded levelled DAG with exactly ``spec.operators`` nodes and
    ``spec.outputs`` outputs whose critical path fits the schedule length.

    Operand 0 of each node comes from the previous level, so a node's level
    is its ASAP step. Every node has two operands, so the edge count is
    always ``2 * operators + outputs``. A strict spec whose edge count is
    more than 5% away from that is rejected; a non-strict one gets a warning.
    """
    if not spec.edges_within_tolerance:
        msg = (f"{spec.name}: {spec.operators} binary operators and {spec.outputs} outputs "
               f"need {spec.realizable_edges} edges, not {spec.edges}")
        if spec.strict_edges:
            raise ValueError(msg)
        log.warning(msg)
    for attempt in range(50):
        tag = f"{spec.name}:{seed}" if attempt == 0 else f"{spec.name}:{seed}:{attempt}"
        try:
            return _generate(spec, random.Random(tag))
        except _Retry:
            continue
    raise ValueError(f"{spec.name}: could not place {spec.outputs} outputs over "
                     f"{spec.operators} operators in {spec.schedule_length} steps")


class _Retry(Exception):
    pass


def _generate(spec: BenchSpec, rng: random.Random) -> Dfg:
    n, P = spec.operators, spec.outputs
    levels = min(spec.schedule_length, n)
    if levels == 1 and n > P:
        raise ValueError(f"{spec.name}: {n} single-step operators need {n} outputs")
    sizes = _level_sizes(rng, n, levels, P) if levels > 1 else [n]
    n_in = spec.inputs or max(2, min(2 * sizes[0], n // 4 + 2))
    n_in = min(n_in, 2 * sizes[0])
    width = len(str(n - 1))
    node_ids, by_level = [], []
    for lvl, k in enumerate(sizes):
        ids = [f"v{len(node_ids) + j:0{width}d}" for j in range(k)]
        node_ids += ids
        by_level.append(ids)
    inputs = [f"i{j:0{len(str(n_in - 1))}d}" for j in range(n_in)]
    outputs = [f"o{j:0{len(str(P - 1))}d}" for j in range(P)]
    ops = {v: rng.choices([o for o, _ in OP_MIX], [w for _, w in OP_MIX])[0] for v in node_ids}
    level_of = {v: lvl for lvl, ids in enumerate(by_level) for v in ids}

    operands: dict[str, list[str]] = {}
    users: dict[str, int] = {s: 0 for s in inputs + node_ids}
    # level 0 reads primary inputs only; the first n_in slots cover every input
    slots = [(v, p) for v in by_level[0] for p in (0, 1)]
    rng.shuffle(slots)
    for j, (v, p) in enumerate(slots):
        operands.setdefault(v, [None, None])[p] = inputs[j] if j < n_in else rng.choice(inputs)
    for v in by_level[0]:
        for s in operands[v]:
            users[s] += 1

    orphans: list[str] = list(by_level[0])
    for lvl in range(1, levels):
        prev = set(by_level[lvl - 1])
        for v in by_level[lvl]:
            cand = [u for u in orphans if u in prev]
            a = rng.choice(cand or by_level[lvl - 1])
            stale = [u for u in orphans if u not in prev]
            pool = [u for u in orphans if u != a]
            if stale:
                b = rng.choice(stale)
            elif pool and rng.random() < 0.7:
                b = rng.choice(pool)
            elif rng.random() < 0.3:
                b = rng.choice(inputs)
            else:
                b = rng.choice([u for u in node_ids if level_of[u] < lvl])
            operands[v] = [a, b]
            for s in (a, b):
                users[s] += 1
            orphans = [u for u in orphans if users[u] == 0]
        orphans += by_level[lvl]

    # more dangling nodes than outputs: hand the extras to later operand-1 slots
    sinks = [v for v in node_ids if users[v] == 0]
    extra = [v for v in sinks if level_of[v] < levels - 1][: max(0, len(sinks) - P)]
    for s in extra:
        for v in rng.sample(node_ids, len(node_ids)):
            if level_of[v] <= level_of[s]:
                continue
            old = operands[v][1]
            if old == s or users[old] < 2 or operands[v][0] == s:
                continue
            operands[v][1] = s
            users[old] -= 1
            users[s] += 1
            break
        else:
            raise _Retry
    sinks = [v for v in node_ids if users[v] == 0]
    if len(sinks) > P:
        raise _Retry

    feeders = list(sinks)
    rest = [v for v in node_ids if v not in set(sinks)]
    rng.shuffle(rest)
    while len(feeders) < P:
        feeders.append(rest.pop() if rest else rng.choice(node_ids))

    edges = []
    for v in node_ids:
        for p, s in enumerate(operands[v]):
            edges.append(Edge(f"e{len(edges)}", s, v, p))
    for o, s in zip(outputs, feeders):
        edges.append(Edge(f"e{len(edges)}", s, o, None))
    return Dfg(spec.name, tuple((v, ops[v]) for v in node_ids), tuple(edges),
               tuple(inputs), tuple(outputs))


# ---------------------------------------------------------------------------
# experiments

@dataclass
class ExperimentConfig:
    benches: list[BenchSpec]
    seeds: list[int]
    overheads: list[float]
    trials: int = 2000
    width: int = 8
    cross_fraction: float = 0.5
    policy: str = "wired_or"
    target_sbs: bool = False           # cap insertion at each spec's SB count
    attack: bool = False
    attack_config: AttackConfig = field(default_factory=AttackConfig)

    def __post_init__(self):
        if not self.benches or not self.seeds or not self.overheads:
            raise ValueError("config needs at least one benchmark, seed and overhead point")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    @classmethod
    def from_toml(cls, text: str, **overrides) -> "ExperimentConfig":
        d = tomllib.loads(text)
        d.update({k: v for k, v in overrides.items() if v is not None})
        benches = [PRESETS[b] for b in d.pop("benchmarks", [])]
        benches += [BenchSpec(**b) for b in d.pop("bench", [])]
        ac = AttackConfig(**d.pop("attack_config", {}))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(benches=benches, attack_config=ac, **d)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        return cls.from_toml(Path(path).read_text(), **overrides)


CSV_COLUMNS = ("benchmark", "seed", "sb_count", "overhead_pct", "trials", "error_rate",
               "key_bits", "attack_status", "attack_iterations", "budget_pct")


@dataclass(frozen=True)
class MetricsRow:
    benchmark: str
    seed: int
    sb_count: int
    overhead_pct: float
    trials: int
    error_rate: float
    key_bits: int
    attack_status: str = ""
    attack_iterations: int | str = ""
    budget_pct: float = 0.0

    def sort_key(self):
        return (self.benchmark, self.seed, self.budget_pct)

    def cells(self) -> list[str]:
        return [self.benchmark, str(self.seed), str(self.sb_count), f"{self.overhead_pct:.4f}",
                str(self.trials), f"{self.error_rate:.6f}", str(self.key_bits),
                self.attack_status, str(self.attack_iterations), f"{self.budget_pct:g}"]


def run_point(spec: BenchSpec, seed: int, config: ExperimentConfig, cache: dict | None = None
              ) -> list[MetricsRow]:
    """All overhead points for one (benchmark, seed)."""
    cache = {} if cache is None else cache
    try:
        dfg = gen_bench(spec, seed)
        _, nl = synthesize(dfg, spec.schedule_length, config.width)
        nl.policy = config.policy
        sites = find_sites(nl)
        rows = []
        for budget in config.overheads:
            locked = insert_sbs(nl, budget, config.cross_fraction, seed,
                                max_sbs=spec.sbs if config.target_sbs else None,
                                model=DEFAULT_AREA, sites=sites)
            rep = error_rate(locked, config.trials, seed)
            status, iters = "", ""
            if config.attack:
                res = attack_loop(locked.foundry_view(), golden_oracle(locked), config.attack_config)
                status, iters = res.status, res.iterations
            rows.append(MetricsRow(spec.name, seed, locked.x, locked.overhead, config.trials,
                                   rep.error_rate, locked.key_bits, status, iters, budget))
        return rows
    except Exception as e:
        raise RuntimeError(f"{spec.name} seed {seed}: {e}") from e


def run_sweep(config: ExperimentConfig) -> list[MetricsRow]:
    rows = []
    for spec in config.benches:
        for seed in config.seeds:
            rows += run_point(spec, seed, config)
    return sorted(rows, key=MetricsRow.sort_key)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(rows, key=MetricsRow.sort_key):
        w.writerow(r.cells())
    return buf.getvalue()


def read_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


def report(csv_text: str) -> str:
    """Per (benchmark, budget) means as whitespace-separated plot data."""
    groups: dict[tuple[str, float], list[dict]] = {}
    for r in read_csv(csv_text):
        groups.setdefault((r["benchmark"], float(r["budget_pct"])), []).append(r)
    lines = ["# benchmark budget_pct overhead_mean sb_mean error_mean error_std n"]
    for (bench, budget), rs in sorted(groups.items()):
        er = [float(r["error_rate"]) for r in rs]
        ov = statistics.fmean(float(r["overhead_pct"]) for r in rs)
        sb = statistics.fmean(int(r["sb_count"]) for r in rs)
        sd = statistics.stdev(er) if len(er) > 1 else 0.0
        lines.append(f"{bench} {budget:g} {ov:.4f} {sb:.2f} {statistics.fmean(er):.6f} "
                     f"{sd:.6f} {len(rs)}")
    return "\n".join(lines) + "\n"


def mean_error_by_budget(rows, benchmark: str | None = None) -> list[tuple[float, float]]:
    by: dict[float, list[float]] = {}
    for r in rows:
        if benchmark is None or r.benchmark == benchmark:
            by.setdefault(r.budget_pct, []).append(r.error_rate)
    return [(b, statistics.fmean(v)) for b, v in sorted(by.items())]


def key_bits_for(sb_count: int) -> int:
    return 8 * sb_count


def inversions(values, tol: float = 0.0) -> list[float]:
    """Sizes of every decrease along ``values`` larger than ``tol``."""
    return [a - b for a, b in zip(values, values[1:]) if a - b > tol and not math.isclose(a, b)]
