"""Security-aware high-level synthesis with polymorphic switch-box locking."""
from .attack import AttackConfig, AttackResult, Dip, attack_loop, find_dip
from .bind import synthesize
from .dfg import Dfg, load_dfg, parse_dfg, worked_example
from .lock import LockedDesign, find_sites, insert_sbs, strip_sbs
from .netlist import Netlist
from .polysb import SbKey, resolve, route
from .sched import Schedule, schedule_secure
from .sim import error_rate, simulate
from .smtlib import export_smtlib

__all__ = [
    "AttackConfig", "AttackResult", "Dfg", "Dip", "LockedDesign", "Netlist", "SbKey",
    "Schedule", "attack_loop", "error_rate", "export_smtlib", "find_dip", "find_sites",
    "insert_sbs", "load_dfg", "parse_dfg", "resolve", "route", "schedule_secure",
    "simulate", "strip_sbs", "synthesize", "worked_example",
]
