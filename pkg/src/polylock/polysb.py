"""Polymorphic transistor and 4-transistor switch box.

Key bit order is C1 P1 C2 P2 C3 P3 C4 P4 (C1 is the most significant bit
when a key is held as an int). Transistor topology::

    T1: X-Z   T2: X-W   T3: Y-Z   T4: Y-W

A transistor conducts when its control gate equals its polarity gate: with
PG=1 it is n-type and on for CG=1, with PG=0 it is p-type and on for CG=0.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import NamedTuple

KEY_BITS = 8


class Policy(str, Enum):
    WIRED_OR = "wired_or"
    STRICT_3V = "strict_3v"


class Tri(NamedTuple):
    """Word with an unknown-bit mask (set bits of ``unknown`` are X)."""
    value: int
    unknown: int


@dataclass(frozen=True)
class PolyTransistor:
    cg: int
    pg: int

    def __post_init__(self):
        if self.cg not in (0, 1) or self.pg not in (0, 1):
            raise ValueError("gate values must be 0 or 1")


def conducts(t: PolyTransistor) -> bool:
    return t.cg == t.pg


@dataclass(frozen=True)
class SbKey:
    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) != KEY_BITS or any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"switch-box key needs exactly {KEY_BITS} bits")

    @classmethod
    def parse(cls, text: str) -> "SbKey":
        text = text.replace(" ", "").replace("_", "")
        if len(text) != KEY_BITS or set(text) - {"0", "1"}:
            raise ValueError(f"bad switch-box key {text!r}")
        return cls(tuple(int(c) for c in text))

    @classmethod
    def from_int(cls, k: int) -> "SbKey":
        return cls(tuple((k >> (KEY_BITS - 1 - i)) & 1 for i in range(KEY_BITS)))

    def __int__(self) -> int:
        v = 0
        for b in self.bits:
            v = (v << 1) | b
        return v

    def __str__(self) -> str:
        return "".join(map(str, self.bits))

    def transistors(self) -> tuple[PolyTransistor, ...]:
        b = self.bits
        return tuple(PolyTransistor(b[2 * i], b[2 * i + 1]) for i in range(4))


@dataclass(frozen=True)
class RoutingMode:
    tag: str  # "Parallel" | "Cross" | "Corrupt"
    z_drivers: frozenset[str]
    w_drivers: frozenset[str]


PARALLEL, CROSS, CORRUPT = "Parallel", "Cross", "Corrupt"


def conduction_pattern(key: SbKey | int) -> tuple[bool, bool, bool, bool]:
    if not isinstance(key, SbKey):
        key = SbKey.from_int(key)
    return tuple(conducts(t) for t in key.transistors())


def resolve(key: SbKey | int) -> RoutingMode:
    t1, t2, t3, t4 = conduction_pattern(key)
    z = frozenset(d for d, on in (("X", t1), ("Y", t3)) if on)
    w = frozenset(d for d, on in (("X", t2), ("Y", t4)) if on)
    if z == {"X"} and w == {"Y"}:
        tag = PARALLEL
    elif z == {"Y"} and w == {"X"}:
        tag = CROSS
    else:
        tag = CORRUPT
    return RoutingMode(tag, z, w)


@lru_cache(maxsize=None)
def keys_for_mode(tag: str) -> tuple[int, ...]:
    """All 8-bit keys (as ints, ascending) resolving to ``tag``."""
    return tuple(k for k in range(256) if resolve(k).tag == tag)


def enumerate_key_partition() -> tuple[int, int, int]:
    counts = {PARALLEL: 0, CROSS: 0, CORRUPT: 0}
    for k in range(256):
        counts[resolve(k).tag] += 1
    return counts[PARALLEL], counts[CROSS], counts[CORRUPT]


def pattern_index(key: int) -> int:
    """Functional class of a key: 4-bit conduction pattern T1..T4 (T1 = MSB)."""
    t = conduction_pattern(key)
    return t[0] << 3 | t[1] << 2 | t[2] << 1 | t[3]


PARALLEL_PATTERN = 0b1001
CROSS_PATTERN = 0b0110


@lru_cache(maxsize=None)
def pattern_representative(pattern: int) -> int:
    return next(k for k in range(256) if pattern_index(k) == pattern)


def route(key: SbKey | int, x: int, y: int, policy: Policy | str = Policy.WIRED_OR,
          width: int = 8):
    """Switch-box outputs (z, w) for inputs (x, y).

    Under WIRED_OR a multiply driven output is the OR of its drivers and an
    undriven one reads 0. Under STRICT_3V results are :class:`Tri` words: an
    undriven output is all-X, and a doubly driven one is X where drivers
    disagree.
    """
    mode = resolve(key)
    mask = (1 << width) - 1
    vals = {"X": x & mask, "Y": y & mask}
    if Policy(policy) is Policy.WIRED_OR:
        def out(drivers):
            v = 0
            for d in drivers:
                v |= vals[d]
            return v
    else:
        def out(drivers):
            if not drivers:
                return Tri(0, mask)
            vs = [vals[d] for d in sorted(drivers)]
            diff = 0
            for v in vs[1:]:
                diff |= v ^ vs[0]
            return Tri(vs[0] & ~diff & mask, diff)
    return out(mode.z_drivers), out(mode.w_drivers)


# ---------------------------------------------------------------------------
# multi-SB keys and the text format

def split_key(text: str, count: int) -> list[int]:
    """Design key text -> per-SB 8-bit ints in placement order."""
    text = "".join(text.split())
    if len(text) != KEY_BITS * count or set(text) - {"0", "1"}:
        raise ValueError(f"key must be {KEY_BITS * count} bits of 0/1, got {len(text)} chars")
    return [int(text[i:i + KEY_BITS], 2) for i in range(0, len(text), KEY_BITS)]


def join_key(parts) -> str:
    return "".join(format(int(p), "08b") for p in parts)


def key_space_size(sb_count: int) -> int:
    return 256 ** sb_count


def cmos_key_partition() -> tuple[int, int, int]:
    """Same census for a 4-NMOS pass-transistor switch box (one bit per gate).

    Only 1001 routes parallel and only 0110 routes cross.
    """
    par = cross = 0
    for bits in itertools.product((0, 1), repeat=4):
        if bits == (1, 0, 0, 1):
            par += 1
        elif bits == (0, 1, 1, 0):
            cross += 1
    return par, cross, 16 - par - cross
