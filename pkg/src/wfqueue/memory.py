"""Shared single-word cells, access requests and step accounting.

Algorithm code is written as generators that ``yield`` access requests
(``read``, ``write``, ``cas``) and receive the result back.  A driver decides
when each request is performed: :class:`SharedMemory.drive` performs them
immediately (native threads), while the simulator in :mod:`wfqueue.harness`
performs one request per scheduled step.  Every performed request counts as
one step for the issuing process.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Hashable, Optional


class _Unset:
    __slots__ = ()

    def __repr__(self) -> str:
        return "UNSET"

    def __reduce__(self):
        return "UNSET"


UNSET = _Unset()
"""Marker for a cell that has never been written."""


class AtomicCell:
    """A single shared word.

    ``key`` is a stable name used for hashing simulated memory states.
    ``write_once`` cells go from ``UNSET`` to a value exactly once.
    ``owner`` names the only process allowed to issue plain writes.
    """

    __slots__ = ("value", "key", "write_once", "owner")

    def __init__(
        self,
        value: Any = UNSET,
        key: Hashable = None,
        *,
        write_once: bool = False,
        owner: Optional[int] = None,
    ) -> None:
        self.value = value
        self.key = key
        self.write_once = write_once
        self.owner = owner

    def __repr__(self) -> str:
        return f"AtomicCell({self.key!r}={self.value!r})"


# Request opcodes.  Requests are plain tuples to keep the hot path cheap.
READ, WRITE, CAS, CHARGE, INVOKE, MARK = range(6)

Request = tuple
Steps = Generator[Request, Any, Any]


def read(cell: AtomicCell) -> Request:
    return (READ, cell)


def write(cell: AtomicCell, value: Any) -> Request:
    return (WRITE, cell, value)


def cas(cell: AtomicCell, expected: Any, new: Any) -> Request:
    return (CAS, cell, expected, new)


def charge(n: int) -> Request:
    """Account ``n`` extra steps without creating a scheduling point.

    Used for walks over immutable tree nodes that were reached through a
    cell read: the nodes never change, so their interleaving is irrelevant,
    but the work still belongs in the step count.
    """
    return (CHARGE, n)


def mark(summary: Hashable) -> Request:
    """Declare that the caller's local state is now captured by ``summary``.

    Costs nothing and is ignored outside the state-space explorer, which uses
    it to forget values the process read earlier but will never use again.
    """
    return (MARK, summary)


class OwnershipError(AssertionError):
    """A process wrote a cell owned by another process."""


@dataclass
class Counters:
    """Running access counters of one process."""

    steps: int = 0
    cas_attempts: int = 0
    cas_successes: int = 0

    def snapshot(self) -> tuple[int, int, int]:
        return (self.steps, self.cas_attempts, self.cas_successes)


Observer = Callable[[int, AtomicCell, Any, Any], None]


@dataclass
class SharedMemory:
    """Performs requests on behalf of processes and counts them.

    With ``concurrent=True`` compare-and-swap is made atomic with a set of
    striped locks so that real threads can share the cells.  The optional
    ``observer`` is called after every successful mutation with
    ``(pid, cell, old, new)``; it is used by invariant hooks and is not
    charged as a step.
    """

    processes: int
    concurrent: bool = False
    observer: Optional[Observer] = None
    check_ownership: bool = False
    counters: list[Counters] = field(init=False)
    _locks: list[threading.Lock] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.counters = [Counters() for _ in range(self.processes)]
        self._locks = [threading.Lock() for _ in range(64)] if self.concurrent else []

    # -- primitive operations -------------------------------------------------

    def cell_read(self, pid: int, cell: AtomicCell) -> Any:
        self.counters[pid].steps += 1
        return cell.value

    def cell_write(self, pid: int, cell: AtomicCell, value: Any) -> None:
        if self.check_ownership and cell.owner is not None and cell.owner != pid:
            raise OwnershipError(f"process {pid} wrote {cell.key!r} owned by {cell.owner}")
        self.counters[pid].steps += 1
        old = cell.value
        cell.value = value
        if self.observer is not None:
            self.observer(pid, cell, old, value)

    def cell_cas(self, pid: int, cell: AtomicCell, expected: Any, new: Any) -> bool:
        c = self.counters[pid]
        c.steps += 1
        c.cas_attempts += 1
        if self.concurrent:
            with self._locks[id(cell) % len(self._locks)]:
                old = cell.value
                ok = old is expected or old == expected
                if ok:
                    cell.value = new
        else:
            old = cell.value
            ok = old is expected or old == expected
            if ok:
                cell.value = new
        if ok:
            c.cas_successes += 1
            if self.observer is not None:
                self.observer(pid, cell, old, new)
        return ok

    def perform(self, pid: int, request: Request) -> Any:
        op = request[0]
        if op == READ:
            return self.cell_read(pid, request[1])
        if op == CAS:
            return self.cell_cas(pid, request[1], request[2], request[3])
        if op == WRITE:
            return self.cell_write(pid, request[1], request[2])
        if op == CHARGE:
            self.counters[pid].steps += request[1]
            return None
        if op == MARK:
            return None
        raise ValueError(f"unknown request {request!r}")

    def drive(self, pid: int, steps: Steps) -> Any:
        """Run ``steps`` to completion, performing each request immediately."""
        perform = self.perform
        try:
            request = next(steps)
            while True:
                request = steps.send(perform(pid, request))
        except StopIteration as stop:
            return stop.value
