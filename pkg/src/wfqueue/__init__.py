"""Wait-free FIFO queue built on an ordering tree, with a simulator and checker.

Two queue variants share one interface: :class:`OrderingTreeQueue` keeps
every block forever, :class:`BoundedQueue` stores blocks in persistent
red-black trees and garbage-collects finished ones.  Both are written as
generators over shared cells so that the same code runs on native threads
and under the deterministic simulator in :mod:`wfqueue.harness`.
"""

from .blocks import EMPTY, Block
from .bounded import BoundedQueue, default_gc_period
from .checker import Linearization, Verdict, brute_force_check, check, extract_linearization, replay
from .harness import (
    CasAdversary,
    Op,
    RandomSchedule,
    SimConfig,
    Simulation,
    enumerate_all,
    explore,
    generate_random,
    make_programs,
    run_schedule,
)
from .history import DEQ, ENQ, OK, PENDING, Event, History, MalformedHistory
from .memory import UNSET, AtomicCell, SharedMemory
from .ordering_tree import OrderingTreeQueue, QueueHandle

__all__ = [
    "AtomicCell",
    "Block",
    "CasAdversary",
    "BoundedQueue",
    "DEQ",
    "EMPTY",
    "ENQ",
    "Event",
    "History",
    "Linearization",
    "MalformedHistory",
    "OK",
    "Op",
    "OrderingTreeQueue",
    "PENDING",
    "QueueHandle",
    "RandomSchedule",
    "SharedMemory",
    "SimConfig",
    "Simulation",
    "UNSET",
    "Verdict",
    "brute_force_check",
    "check",
    "default_gc_period",
    "enumerate_all",
    "explore",
    "extract_linearization",
    "generate_random",
    "make_programs",
    "replay",
    "run_schedule",
]
