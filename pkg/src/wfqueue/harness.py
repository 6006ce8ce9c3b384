"""Deterministic simulation of concurrent runs.

Each simulated process executes its program of queue operations as a
generator; one *step* is one shared-cell access.  A schedule names which
process takes each step, so any interleaving can be replayed exactly.  The
simulator records the history, per-operation step and CAS counts, and runs
the invariant monitors on every mutation.

Three ways to pick schedules are provided: random context switches
(:func:`generate_random`), naive enumeration of every interleaving
(:func:`enumerate_all`, for tiny programs), and :func:`explore`, which covers
every interleaving by depth-first search over *states*, merging paths that
reach identical states.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from itertools import product
from typing import Any, Callable, Iterator, Optional, Sequence, Union

from .blocks import EMPTY, content_hash
from .bounded import BoundedQueue
from .checker import brute_force_check, check
from .history import DEQ, ENQ, OK, Event, History, point_contention
from .invariants import BoundedMonitor, InvariantViolation, UnboundedMonitor
from .memory import CAS, CHARGE, INVOKE, MARK, READ, UNSET, AtomicCell, SharedMemory
from .ordering_tree import OrderingTreeQueue


@dataclass(frozen=True)
class Op:
    kind: str
    arg: Any = None

    def __repr__(self) -> str:
        return f"Enq({self.arg!r})" if self.kind == ENQ else "Deq"


Program = list[Op]


def make_programs(
    processes: int, ops: int, enq_fraction: float = 0.5, seed: int = 0
) -> list[Program]:
    """Random programs of ``ops`` operations each, with unique enqueue tags."""
    rng = random.Random(seed)
    return [
        [Op(ENQ, f"{pid}.{k}") if rng.random() < enq_fraction else Op(DEQ) for k in range(1, ops + 1)]
        for pid in range(processes)
    ]


def all_programs(processes: int, max_ops: int) -> Iterator[list[Program]]:
    """Every program set with up to ``max_ops`` operations per process."""
    shapes = [kinds for n in range(max_ops + 1) for kinds in product((ENQ, DEQ), repeat=n)]
    for combo in product(shapes, repeat=processes):
        yield [
            [Op(ENQ, f"{pid}.{k}") if kind == ENQ else Op(DEQ) for k, kind in enumerate(kinds, 1)]
            for pid, kinds in enumerate(combo)
        ]


@dataclass
class SimConfig:
    """Knobs for a simulated run.

    ``double_refresh`` and ``help_advance`` switch off parts of the algorithm
    (mutation testing).  ``reduce`` lets the simulator perform steps that
    commute with everything else (reads of cells that can no longer change)
    immediately instead of treating them as scheduling points.  With
    ``exact_cas`` the explorer keeps paths apart whose current operations
    have used different numbers of CAS attempts, so that its per-operation
    CAS maximum is exact (at the price of more states).
    """

    gc_period: Optional[int] = None
    double_refresh: bool = True
    help_advance: bool = True
    hooks: bool = True
    reduce: bool = False
    track_state: bool = False
    exact_cas: bool = False


@dataclass
class OpStats:
    op_id: tuple[int, int]
    kind: str
    null: bool
    steps: int
    cas_attempts: int
    cas_successes: int


@dataclass
class Metrics:
    steps: int = 0
    cas_attempts: int = 0
    cas_successes: int = 0
    contention: int = 0
    container_peak: int = 0
    ops: list[OpStats] = field(default_factory=list)

    def select(self, kind: str, null: Optional[bool] = None) -> list[OpStats]:
        return [o for o in self.ops if o.kind == kind and (null is None or o.null == null)]

    def to_text(self) -> str:
        lines = [
            f"steps={self.steps}",
            f"cas_attempts={self.cas_attempts}",
            f"cas_successes={self.cas_successes}",
            f"contention={self.contention}",
            f"container_peak={self.container_peak}",
        ]
        for o in self.ops:
            lines.append(
                f"op={o.op_id[0]}.{o.op_id[1]} kind={o.kind} null={int(o.null)} "
                f"steps={o.steps} cas={o.cas_attempts} cas_ok={o.cas_successes}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class Failure:
    invariant: str
    step: int
    process: Optional[int]
    message: str


@dataclass
class AssertionReport:
    failures: list[Failure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def __str__(self) -> str:
        if self.ok:
            return "all invariants hold"
        return "\n".join(
            f"step {f.step} (process {f.process}): {f.invariant}: {f.message}" for f in self.failures
        )


def _hash2(key: Any, value: Any) -> tuple[int, int]:
    h = content_hash(value)
    return hash((key, h)), hash((h, key, 0x5BD1E995))


class Simulation:
    """One simulated execution, advanced a step at a time."""

    def __init__(
        self, programs: Sequence[Program], variant: str = "unbounded", config: Optional[SimConfig] = None
    ) -> None:
        self.config = config = config or SimConfig()
        self.programs = [list(p) for p in programs]
        self.p = p = len(programs)
        self.memory = SharedMemory(p, observer=self._observe, check_ownership=True)
        if variant == "unbounded":
            self.queue: Any = OrderingTreeQueue(
                p,
                memory=self.memory,
                double_refresh=config.double_refresh,
                help_advance=config.help_advance,
            )
            self.monitor: Any = UnboundedMonitor(self.queue)
        elif variant == "bounded":
            self.queue = BoundedQueue(
                p, memory=self.memory, gc_period=config.gc_period, double_refresh=config.double_refresh
            )
            for k, cell in enumerate(self.queue.last):
                cell.owner = k
            self.monitor = BoundedMonitor(self.queue)
        else:
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.clock = 0
        self.history = History()
        self._events: dict[tuple[int, int], Event] = {}
        self._op_start: dict[tuple[int, int], tuple[int, int, int]] = {}
        self.op_stats: list[OpStats] = []
        self.completed = [0] * p
        self.report = AssertionReport()
        self.schedule: list[int] = []
        self.trace: list[int] = []
        self.mem_hash = (0, 0)
        self.chains = [0] * p
        self.past = [0] * p
        self._gens = [self._process(pid, prog) for pid, prog in enumerate(self.programs)]
        self.pending: list[Any] = [None] * p
        self._current = -1
        for pid in range(p):
            self._resume(pid, None, first=True)
        if config.reduce:
            self._run_forced()

    # -- processes ---------------------------------------------------------------

    def _process(self, pid: int, program: Program):
        h = self.queue.handle(pid)
        for k, op in enumerate(program, 1):
            yield (INVOKE, k)
            if op.kind == ENQ:
                yield from self.queue.enqueue(h, op.arg)
                result = OK
            else:
                result = yield from self.queue.dequeue(h)
            self._respond(pid, k, op, result)

    def _invoke(self, pid: int, k: int) -> None:
        op = self.programs[pid][k - 1]
        e = Event((pid, k), pid, op.kind, op.arg, self.clock)
        self.history.events.append(e)
        self._events[(pid, k)] = e
        self._op_start[(pid, k)] = self.memory.counters[pid].snapshot()

    def _respond(self, pid: int, k: int, op: Op, result: Any) -> None:
        e = self._events[(pid, k)]
        e.response = result
        e.response_ts = self.clock
        s0 = self._op_start[(pid, k)]
        s1 = self.memory.counters[pid].snapshot()
        self.op_stats.append(
            OpStats((pid, k), op.kind, result is EMPTY, s1[0] - s0[0], s1[1] - s0[1], s1[2] - s0[2])
        )
        self.completed[pid] += 1
        if self.config.track_state:
            cost = s1[1] - s0[1] if self.config.exact_cas else 0
            self.past[pid] = hash((self.past[pid], "resp", content_hash(result), cost))
            self.chains[pid] = self.past[pid]
        if self.config.hooks:
            self.monitor.on_response(pid, k, op.kind, result)

    def _observe(self, pid: int, cell: AtomicCell, old: Any, new: Any) -> None:
        if self.config.track_state:
            a0, b0 = _hash2(cell.key, old)
            a1, b1 = _hash2(cell.key, new)
            h = self.mem_hash
            self.mem_hash = (h[0] ^ a0 ^ a1, h[1] ^ b0 ^ b1)
        if self.config.hooks:
            self.monitor.on_update(pid, cell, old, new)

    def _resume(self, pid: int, value: Any, first: bool = False) -> None:
        gen = self._gens[pid]
        counters = self.memory.counters[pid]
        try:
            req = next(gen) if first else gen.send(value)
            while req[0] >= CHARGE and req[0] != INVOKE:
                if req[0] == CHARGE:
                    counters.steps += req[1]
                elif self.config.track_state:
                    cost = 0
                    if self.config.exact_cas:
                        cost = counters.cas_attempts - self._op_start[(pid, self.completed[pid] + 1)][1]
                    self.chains[pid] = hash((self.past[pid], req[1], cost))
                req = gen.send(None)
            self.pending[pid] = req
        except StopIteration:
            self.pending[pid] = None

    # -- stepping --------------------------------------------------------------------

    @property
    def failed(self) -> bool:
        return bool(self.report.failures)

    def enabled(self) -> list[int]:
        if self.failed:
            return []
        return [pid for pid in range(self.p) if self.pending[pid] is not None]

    @property
    def done(self) -> bool:
        return self.failed or all(r is None for r in self.pending)

    def step(self, pid: int) -> None:
        """Let ``pid`` perform its next shared access."""
        req = self.pending[pid]
        if req is None:
            raise ValueError(f"process {pid} has no step left")
        self.schedule.append(pid)
        self._perform(pid, req)
        if self.config.reduce and not self.failed:
            self._run_forced()

    def _perform(self, pid: int, req: Any) -> None:
        self.clock += 1
        self.trace.append(pid)
        try:
            if req[0] == INVOKE:
                self._invoke(pid, req[1])
                result = None
                if self.config.track_state:
                    self.past[pid] = hash((self.past[pid], "inv", tuple(self.completed)))
                    self.chains[pid] = self.past[pid]
            else:
                result = self.memory.perform(pid, req)
                if self.config.track_state:
                    self.chains[pid] = hash((self.chains[pid], content_hash(result)))
            self._resume(pid, result)
        except InvariantViolation as exc:
            self._record(pid, exc.invariant, exc.message)
        except AssertionError as exc:
            self._record(pid, "assertion", str(exc))
        except Exception as exc:  # a broken invariant usually surfaces as a crash
            self._record(pid, "crash", f"{type(exc).__name__}: {exc}")

    def _record(self, pid: Optional[int], invariant: str, message: str) -> None:
        self.report.failures.append(Failure(invariant, self.clock, pid, message))
        self.pending = [None] * self.p

    def replay_trace(self, trace: Sequence[int]) -> None:
        """Re-execute a recorded :attr:`trace` (forced steps included)."""
        perform = self._perform
        pending = self.pending
        for pid in trace:
            self.schedule.append(pid)
            perform(pid, pending[pid])
        if self.config.reduce and not self.failed:
            self._run_forced()

    def _forced(self, pid: int, req: Any) -> bool:
        # Steps that commute with every step of every other process.
        op = req[0]
        if op == READ:
            cell = req[1]
            return cell.owner == pid or (cell.write_once and cell.value is not UNSET)
        if op == CAS:
            cell = req[1]
            return cell.write_once and cell.value is not UNSET
        return False

    def _run_forced(self) -> None:
        changed = True
        while changed and not self.failed:
            changed = False
            for pid in range(self.p):
                req = self.pending[pid]
                while req is not None and self._forced(pid, req):
                    self._perform(pid, req)
                    changed = True
                    req = self.pending[pid]

    def state_key(self) -> tuple:
        return (self.mem_hash, tuple(self.chains))

    # -- results ---------------------------------------------------------------------

    def finish(self) -> None:
        """End-of-run audit (only meaningful once every process is done)."""
        if self.config.hooks and not self.failed:
            try:
                self.monitor.final(self.history)
            except InvariantViolation as exc:
                self._record(None, exc.invariant, exc.message)
            except AssertionError as exc:
                self._record(None, "assertion", str(exc))

    def metrics(self) -> Metrics:
        m = Metrics(ops=list(self.op_stats))
        for c in self.memory.counters:
            m.steps += c.steps
            m.cas_attempts += c.cas_attempts
            m.cas_successes += c.cas_successes
        m.contention = point_contention(self.history)
        m.container_peak = self.monitor.container_peak
        return m


# -- schedules --------------------------------------------------------------------------


@dataclass
class RandomSchedule:
    """Geometric context switches: after each step, switch with ``switch_prob``."""

    seed: int
    switch_prob: float = 0.5

    def chooser(self, sim: Optional[Simulation] = None) -> Callable[[int, list[int]], int]:
        rng = random.Random(self.seed)

        def choose(current: int, enabled: list[int]) -> int:
            if current in enabled and (len(enabled) == 1 or rng.random() >= self.switch_prob):
                return current
            others = [p for p in enabled if p != current] or enabled
            return rng.choice(others)

        return choose


@dataclass
class CasAdversary:
    """Schedule that tries to make CAS instructions fail or be repeated.

    A process about to CAS is held back: if another process is also about to
    CAS the same cell, that one goes first; otherwise, with probability
    ``hold``, some process not at a CAS runs instead (half the time one whose
    leaf is nearest in the tree, so that both compete for the same nodes).
    With probability ``nap`` a process that has just won a CAS is put to
    sleep for a while, leaving its half-finished work for others to help
    with.  ``restart`` is the chance of picking a fresh random process.
    """

    seed: int
    hold: float = 0.9
    restart: float = 0.1
    nap: float = 0.0

    def chooser(self, sim: Simulation) -> Callable[[int, list[int]], int]:
        rng = random.Random(self.seed)
        wake = [0] * sim.p
        last: list[Any] = [None, None, None]  # process, CAS cell, value before

        def choose(current: int, enabled: list[int]) -> int:
            pending = sim.pending
            now = len(sim.schedule)
            q0, cell, before = last
            if cell is not None and cell.value is not before and rng.random() < self.nap:
                wake[q0] = now + rng.randrange(5, 60)
            awake = [q for q in enabled if wake[q] <= now] or enabled
            if current not in awake or rng.random() < self.restart:
                current = rng.choice(awake)
            req = pending[current]
            if req[0] == CAS:
                same = [q for q in awake if q != current and pending[q][0] == CAS and pending[q][1] is req[1]]
                if same:
                    current = rng.choice(same)
                else:
                    others = [q for q in awake if q != current and pending[q][0] != CAS]
                    if others and rng.random() < self.hold:
                        if rng.random() < 0.5:
                            current = min(others, key=lambda q: (q ^ current, rng.random()))
                        else:
                            current = rng.choice(others)
                req = pending[current]
            if req[0] == CAS:
                last[:] = [current, req[1], req[1].value]
            else:
                last[:] = [None, None, None]
            return current

        return choose


def generate_random(programs: Sequence[Program], seed: int, switch_prob: float = 0.5) -> RandomSchedule:
    if not 0.0 <= switch_prob <= 1.0:
        raise ValueError("switch probability must lie in [0, 1]")
    return RandomSchedule(seed, switch_prob)


Schedule = Union[Sequence[int], RandomSchedule, CasAdversary]


@dataclass
class RunResult:
    history: History
    metrics: Metrics
    report: AssertionReport
    schedule: list[int]
    simulation: Simulation

    def __iter__(self) -> Iterator[Any]:
        return iter((self.history, self.metrics, self.report))


def run_schedule(
    programs: Sequence[Program],
    schedule: Schedule,
    variant: str = "unbounded",
    config: Optional[SimConfig] = None,
) -> RunResult:
    """Execute ``programs`` under ``schedule``.

    An explicit schedule is a list of process ids; it must only name processes
    that still have steps.  Operations not finished when it runs out stay
    pending.  A :class:`RandomSchedule` or :class:`CasAdversary` runs until
    every process is done.
    """
    sim = Simulation(programs, variant, config)
    if isinstance(schedule, (RandomSchedule, CasAdversary)):
        choose = schedule.chooser(sim)
        current = -1
        while True:
            enabled = sim.enabled()
            if not enabled:
                break
            current = choose(current, enabled)
            sim.step(current)
    else:
        for n, pid in enumerate(schedule):
            if sim.failed:
                break
            if not 0 <= pid < sim.p or sim.pending[pid] is None:
                raise ValueError(f"schedule entry {n} names process {pid}, which has no step left")
            sim.step(pid)
    if sim.done:
        sim.finish()
    return RunResult(sim.history, sim.metrics(), sim.report, sim.schedule, sim)


# -- exhaustive enumeration -----------------------------------------------------------------


def interleavings(counts: Sequence[int]) -> Iterator[list[int]]:
    """Every interleaving of processes taking ``counts[i]`` steps each, in DFS order."""
    left = list(counts)
    total = sum(left)
    out: list[int] = []

    def rec() -> Iterator[list[int]]:
        if len(out) == total:
            yield list(out)
            return
        for pid, n in enumerate(left):
            if n:
                left[pid] -= 1
                out.append(pid)
                yield from rec()
                out.pop()
                left[pid] += 1

    return rec()


class Enumeration:
    """Iterator over every complete schedule of a concrete program set.

    Schedules are produced depth-first by re-executing prefixes.  Any run
    longer than ``step_bound`` steps is cut off and ``truncated`` is set.
    """

    def __init__(
        self,
        programs: Sequence[Program],
        step_bound: int,
        variant: str = "unbounded",
        config: Optional[SimConfig] = None,
    ) -> None:
        self.programs = programs
        self.step_bound = step_bound
        self.variant = variant
        self.config = config or SimConfig(hooks=False)
        self.truncated = False
        self.count = 0

    def _replay(self, prefix: list[int]) -> Simulation:
        sim = Simulation(self.programs, self.variant, self.config)
        for pid in prefix:
            sim.step(pid)
        return sim

    def __iter__(self) -> Iterator[list[int]]:
        stack: list[list[int]] = [[]]
        while stack:
            prefix = stack.pop()
            sim = self._replay(prefix)
            while True:
                enabled = sim.enabled()
                if not enabled:
                    self.count += 1
                    yield list(sim.schedule)
                    break
                if len(sim.schedule) >= self.step_bound:
                    self.truncated = True
                    break
                for pid in reversed(enabled[1:]):
                    stack.append(sim.schedule + [pid])
                sim.step(enabled[0])


def enumerate_all(
    programs: Sequence[Program],
    step_bound: int,
    variant: str = "unbounded",
    config: Optional[SimConfig] = None,
) -> Enumeration:
    return Enumeration(programs, step_bound, variant, config)


@dataclass
class Exploration:
    """Outcome of :func:`explore`."""

    states: int = 0
    terminals: int = 0
    failures: list[tuple[list[int], AssertionReport]] = field(default_factory=list)
    max_op_cas: int = 0
    truncated: bool = False

    @property
    def ok(self) -> bool:
        return not self.failures


def explore(
    programs: Sequence[Program],
    variant: str = "unbounded",
    config: Optional[SimConfig] = None,
    *,
    on_terminal: Optional[Callable[[Simulation], Optional[str]]] = None,
    max_states: Optional[int] = None,
    stop_at_first_failure: bool = True,
) -> Exploration:
    """Visit every reachable state of every interleaving.

    Two partial executions are merged when memory contents, every process's
    sequence of observed values and the real-time order among invocations and
    responses all coincide: from then on they behave identically and yield
    histories with the same verdict.  Reads of cells that can no longer change
    are taken eagerly, which only moves a response earlier and never hides a
    bad history.  ``on_terminal`` may return an error string for a finished
    run, e.g. a linearizability-checker rejection.
    """
    base = config or SimConfig()
    cfg = SimConfig(
        gc_period=base.gc_period,
        double_refresh=base.double_refresh,
        help_advance=base.help_advance,
        hooks=base.hooks,
        reduce=True,
        track_state=True,
        exact_cas=base.exact_cas,
    )
    result = Exploration()
    visited: set = set()

    # Stack entries are full traces, so replays skip the forced-step scan.
    stack: list[list[int]] = [[]]
    while stack:
        sim = Simulation(programs, variant, cfg)
        sim.replay_trace(stack.pop())
        while True:
            key = sim.state_key()
            if key in visited:
                break
            visited.add(key)
            result.states += 1
            if max_states is not None and result.states >= max_states:
                result.truncated = True
                return result
            enabled = sim.enabled()
            if not enabled:
                result.terminals += 1
                sim.finish()
                for o in sim.op_stats:
                    result.max_op_cas = max(result.max_op_cas, o.cas_attempts)
                if sim.report.ok and on_terminal is not None:
                    msg = on_terminal(sim)
                    if msg:
                        sim.report.failures.append(Failure("checker", sim.clock, None, msg))
                if not sim.report.ok:
                    result.failures.append((list(sim.trace), sim.report))
                    if stop_at_first_failure:
                        return result
                break
            for pid in enabled[1:]:
                stack.append(sim.trace + [pid])
            sim.step(enabled[0])
    return result


def check_terminal(sim: Simulation, brute_force_limit: int = 12) -> Optional[str]:
    """``on_terminal`` callback: run the checker, cross-checked on small histories."""
    verdict = check(sim.history)
    if len(sim.history) <= brute_force_limit:
        if brute_force_check(sim.history, brute_force_limit).accepted != verdict.accepted:
            return "checker and brute-force enumeration disagree"
    if not verdict:
        return verdict.reason
    return None
