import logging

import pytest
from hypothesis import settings

from polylock.bench import BenchSpec, gen_bench
from polylock.bind import synthesize
from polylock.dfg import parse_dfg
from polylock.lock import find_sites, insert_sbs

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR)


ONE_ADD = """\
dfg one
input x
input y
output o
node a Add
edge e1 x -> a.0
edge e2 y -> a.1
edge e3 a -> o
"""


def one_node(optype="Add"):
    return parse_dfg(ONE_ADD.replace("Add", optype))


def random_dfg(seed, ops=8, outputs=2, latency=5, inputs=None):
    spec = BenchSpec(f"r{seed}", latency, ops, 2 * ops + outputs, outputs, inputs=inputs)
    return gen_bench(spec, seed)


def toy_locked(seed, x, W=4, cross=0.5):
    """A small locked design with exactly ``x`` switch boxes."""
    for attempt in range(100):
        dfg = random_dfg(1000 * seed + attempt, ops=4, outputs=2, latency=3, inputs=3)
        _, nl = synthesize(dfg, 3, W)
        sites = find_sites(nl)
        locked = insert_sbs(nl, 1000, cross, seed, max_sbs=x, sites=sites)
        if locked.x == x:
            return locked
    raise RuntimeError(f"no toy with {x} switch boxes for seed {seed}")
