"""Native-thread workloads and the per-operation metrics table.

Each process runs on its own thread against a queue whose cells are shared
for real (CAS is made atomic with striped locks).  Step and CAS counts come
from the same counters the simulator uses, so the numbers are comparable.
"""

from __future__ import annotations

import itertools
import statistics
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Optional

from .blocks import EMPTY
from .bounded import BoundedQueue
from .harness import OpStats, make_programs
from .history import ENQ, OK, Event, History
from .ordering_tree import OrderingTreeQueue

CSV_COLUMNS = (
    "p",
    "variant",
    "op_kind",
    "mean_steps",
    "max_steps",
    "mean_cas",
    "max_cas",
    "max_container",
    "throughput",
)

OP_KINDS = ("enq", "deq", "deq_null")


@dataclass
class BenchConfig:
    processes: int = 4
    ops: int = 100
    variant: str = "unbounded"
    gc_constant: Optional[int] = None
    enq_fraction: float = 0.5
    seed: int = 0
    prefill: int = 0

    def validate(self) -> None:
        if self.processes < 1:
            raise ValueError("p must be at least 1")
        if self.ops < 0 or self.prefill < 0:
            raise ValueError("operation counts must be non-negative")
        if not 0.0 <= self.enq_fraction <= 1.0:
            raise ValueError("enqueue fraction must lie in [0, 1]")
        if self.variant not in ("unbounded", "bounded"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.gc_constant is not None and self.gc_constant < 1:
            raise ValueError("gc constant must be positive")


@dataclass
class NativeRun:
    config: BenchConfig
    history: History
    ops: list[OpStats]
    seconds: float
    max_container: int
    prefill_ops: list[OpStats] = field(default_factory=list)

    @property
    def throughput(self) -> float:
        return len(self.ops) / self.seconds if self.seconds > 0 else float("inf")


def make_queue(config: BenchConfig) -> Any:
    if config.variant == "bounded":
        return BoundedQueue(config.processes, gc_period=config.gc_constant)
    return OrderingTreeQueue(config.processes)


def container_size(queue: Any) -> int:
    """Largest number of blocks currently held by any node."""
    if queue.variant == "bounded":
        return max(node.blocks.value.count for node in queue.nodes[1:])
    return max(node.head.value for node in queue.nodes[1:])


def run_native(config: BenchConfig) -> NativeRun:
    """Run the configured workload with one thread per process."""
    config.validate()
    queue = make_queue(config)
    programs = make_programs(config.processes, config.ops, config.enq_fraction, config.seed)
    clock = itertools.count(1)  # next() on a count is atomic under the GIL
    events: list[list[Event]] = [[] for _ in range(config.processes)]
    stats: list[list[OpStats]] = [[] for _ in range(config.processes)]
    peak = [1] * config.processes
    sample = config.variant == "bounded"

    def run_op(pid: int, k: int, kind: str, arg: Any, out: list[OpStats]) -> None:
        h = queue.handle(pid)
        counters = queue.memory.counters[pid]
        e = Event((pid, k), pid, kind, arg, next(clock))
        s0 = counters.snapshot()
        if kind == ENQ:
            h.enqueue(arg)
            e.response = OK
        else:
            e.response = h.dequeue()
        s1 = counters.snapshot()
        e.response_ts = next(clock)
        events[pid].append(e)
        null = e.response is EMPTY
        out.append(OpStats((pid, k), kind, null, s1[0] - s0[0], s1[1] - s0[1], s1[2] - s0[2]))
        if sample:
            peak[pid] = max(peak[pid], container_size(queue))

    # An enqueue-heavy prefix run by process 0 before the threads start.
    prefill_stats: list[OpStats] = []
    for k in range(1, config.prefill + 1):
        run_op(0, k, ENQ, f"pre.{k}", prefill_stats)
    offset = config.prefill

    def worker(pid: int) -> None:
        base = offset if pid == 0 else 0
        for k, op in enumerate(programs[pid], base + 1):
            run_op(pid, k, op.kind, op.arg, stats[pid])

    threads = [threading.Thread(target=worker, args=(pid,)) for pid in range(config.processes)]
    start = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    seconds = time.perf_counter() - start

    history = History(sorted((e for evs in events for e in evs), key=lambda e: e.invoke_ts))
    ops = [o for per in stats for o in per]
    max_container = max(max(peak), container_size(queue))
    return NativeRun(config, history, ops, seconds, max_container, prefill_stats)


def kind_of(o: OpStats) -> str:
    if o.kind == ENQ:
        return "enq"
    return "deq_null" if o.null else "deq"


def table_rows(run: NativeRun) -> list[dict[str, Any]]:
    """One CSV row per operation kind that occurred in ``run``."""
    rows = []
    for kind in OP_KINDS:
        sel = [o for o in run.ops if kind_of(o) == kind]
        if not sel:
            continue
        rows.append(
            {
                "p": run.config.processes,
                "variant": run.config.variant,
                "op_kind": kind,
                "mean_steps": round(statistics.fmean(o.steps for o in sel), 3),
                "max_steps": max(o.steps for o in sel),
                "mean_cas": round(statistics.fmean(o.cas_attempts for o in sel), 3),
                "max_cas": max(o.cas_attempts for o in sel),
                "max_container": run.max_container,
                "throughput": round(run.throughput, 1),
            }
        )
    return rows

