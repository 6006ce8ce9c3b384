"""FIFO linearizability checking, sequential replay and linearization extraction.

``check`` decides whether a history of enqueues (with unique tags) and
dequeues has a legal sequential witness that respects real-time order.  It
first applies cheap value-based rejections, then searches for a witness one
operation at a time, remembering states ``(linearized set, queue contents)``
that already failed.  ``brute_force_check`` enumerates orderings outright and
serves as an independent oracle on small histories.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Callable, Iterable, Optional, Sequence

from .blocks import EMPTY, Block
from .history import DEQ, ENQ, OK, PENDING, Event, History, MalformedHistory, OpId

# -- sequential oracle ------------------------------------------------------------


@dataclass(frozen=True)
class LinOp:
    op_id: OpId
    kind: str
    arg: Any = None


@dataclass
class Linearization:
    """Operations in linearization order, split into root blocks."""

    ops: list[LinOp]
    block_ends: list[int] = field(default_factory=list)
    partial: bool = False

    def blocks(self) -> list[list[LinOp]]:
        out, start = [], 0
        for end in self.block_ends:
            out.append(self.ops[start:end])
            start = end
        return out

    def render(self) -> str:
        """Blocks separated by ``|``, e.g. ``Enq(a) Deq(1,1) | Enq(b)``."""

        def name(op: LinOp) -> str:
            return f"Enq({op.arg})" if op.kind == ENQ else f"Deq{op.op_id}"

        return " | ".join(" ".join(name(op) for op in blk) for blk in self.blocks())


@dataclass
class OracleState:
    """Result of replaying a sequence on a sequential FIFO queue."""

    contents: list[Any]
    responses: dict[OpId, Any]
    sizes: list[int]
    q_max: int


def replay(ops: Iterable[LinOp]) -> OracleState:
    q: deque = deque()
    responses: dict[OpId, Any] = {}
    sizes = []
    q_max = 0
    for op in ops:
        if op.kind == ENQ:
            q.append(op.arg)
            responses[op.op_id] = OK
        else:
            responses[op.op_id] = q.popleft() if q else EMPTY
        sizes.append(len(q))
        q_max = max(q_max, len(q))
    return OracleState(list(q), responses, sizes, q_max)


def block_sizes(lin: Linearization) -> list[int]:
    """Queue size after each root block of ``lin``."""
    sizes = replay(lin.ops).sizes
    return [sizes[end - 1] if end else 0 for end in lin.block_ends]


# -- checking ---------------------------------------------------------------------


@dataclass
class Verdict:
    accepted: bool
    witness: Optional[list[OpId]] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.accepted


def _value_checks(events: Sequence[Event]) -> Optional[str]:
    enq_by_tag = {e.arg: e for e in events if e.kind == ENQ}
    taken: dict[Any, Event] = {}
    for d in events:
        if d.kind != DEQ or d.pending or d.response is EMPTY:
            continue
        v = d.response
        if v not in enq_by_tag:
            return f"dequeue {d.op_id} returned {v!r}, which was never enqueued"
        if v in taken:
            return f"{v!r} dequeued twice ({taken[v].op_id} and {d.op_id})"
        taken[v] = d
        if d.precedes(enq_by_tag[v]):
            return f"dequeue {d.op_id} returned {v!r} before it was enqueued"
    # Two enqueues ordered in real time must come out in that order: sweep the
    # enqueues by response time, tracking the latest-invoked matching dequeue.
    xs = sorted(taken, key=lambda x: enq_by_tag[x].response_ts or float("inf"))
    ys = sorted(taken, key=lambda y: enq_by_tag[y].invoke_ts)
    best: Optional[Any] = None
    k = 0
    for y in ys:
        ey, dy = enq_by_tag[y], taken[y]
        while k < len(xs) and enq_by_tag[xs[k]].precedes(ey):
            x = xs[k]
            if best is None or taken[x].invoke_ts > taken[best].invoke_ts:
                best = x
            k += 1
        if best is not None and dy.precedes(taken[best]):
            return f"{y!r} dequeued strictly before {best!r} although enqueued after it"
    return None


def check(history: History) -> Verdict:
    """Accept iff ``history`` is linearizable with respect to a FIFO queue.

    Pending operations may be linearized or dropped; a pending dequeue that is
    linearized takes whatever is at the head.
    """
    history.validate()
    events = list(history.events)
    reason = _value_checks(events)
    if reason:
        return Verdict(False, reason=reason)
    return _search(events)


def _search(events: Sequence[Event]) -> Verdict:
    n = len(events)
    inf = float("inf")
    inv = [e.invoke_ts for e in events]
    resp = [e.response_ts if e.response_ts is not None else inf for e in events]
    by_inv = sorted(range(n), key=lambda i: inv[i])
    completed = sorted((i for i in range(n) if resp[i] != inf), key=lambda i: resp[i])
    goal = 0
    for i in completed:
        goal |= 1 << i
    if goal == 0:
        return Verdict(True, witness=[])

    def successors(mask: int, queue: tuple, lo_c: int, lo_i: int):
        # Skip past the linearized prefixes of both orders.
        while lo_c < len(completed) and mask >> completed[lo_c] & 1:
            lo_c += 1
        while lo_i < n and mask >> by_inv[lo_i] & 1:
            lo_i += 1
        bound = resp[completed[lo_c]] if lo_c < len(completed) else inf
        cands = []
        k = lo_i
        while k < n and inv[by_inv[k]] <= bound:
            i = by_inv[k]
            k += 1
            if not mask >> i & 1:
                cands.append(i)
        # Earliest response first: the op that finished first is the likeliest next.
        cands.sort(key=lambda i: resp[i])
        out = []
        for i in cands:
            e = events[i]
            if e.kind == ENQ:
                q2 = queue + (e.arg,)
            elif e.pending:
                q2 = queue[1:]
            elif e.response is EMPTY:
                if queue:
                    continue
                q2 = queue
            elif queue and queue[0] == e.response:
                q2 = queue[1:]
            else:
                continue
            out.append((i, mask | 1 << i, q2, lo_c, lo_i))
        return out

    failed: set[tuple[int, tuple]] = set()
    path: list[int] = []
    stack = [(0, (), iter(successors(0, (), 0, 0)))]
    while stack:
        mask, queue, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            failed.add((mask, queue))
            stack.pop()
            if path:
                path.pop()
            continue
        i, m2, q2, lo_c, lo_i = nxt
        if (m2, q2) in failed:
            continue
        path.append(i)
        if m2 & goal == goal:
            return Verdict(True, witness=[events[j].op_id for j in path])
        stack.append((m2, q2, iter(successors(m2, q2, lo_c, lo_i))))
    return Verdict(False, reason="no linearization respects both real time and FIFO order")


def brute_force_check(history: History, limit: int = 12) -> Verdict:
    """Try every subset of pending operations and every real-time-consistent order.

    Exponential; refuses histories with more than ``limit`` operations.
    """
    history.validate()
    events = list(history.events)
    if len(events) > limit:
        raise ValueError(f"history too large for brute force ({len(events)} > {limit})")
    done = [e for e in events if not e.pending]
    pending = [e for e in events if e.pending]

    def legal(seq: list[Event]) -> bool:
        q: deque = deque()
        for e in seq:
            if e.kind == ENQ:
                q.append(e.arg)
                continue
            got = q.popleft() if q else EMPTY
            if not e.pending and got != e.response:
                return False
        return True

    def orders(items: list[Event], prefix: list[Event]):
        if not items:
            yield prefix
            return
        for k, e in enumerate(items):
            rest = items[:k] + items[k + 1 :]
            if any(o.precedes(e) for o in rest):
                continue
            yield from orders(rest, prefix + [e])

    for r in range(len(pending) + 1):
        for extra in combinations(pending, r):
            for seq in orders(done + list(extra), []):
                if legal(seq):
                    return Verdict(True, witness=[e.op_id for e in seq])
    return Verdict(False, reason="no ordering found by enumeration")


# -- reading the linearization out of a queue -----------------------------------------

BlockGetter = Callable[[Any, int], Optional[Block]]


def _expand(v: Any, b: int, get: BlockGetter, enqs: list, deqs: list) -> bool:
    """Append the operations of ``v``'s block ``b``; False if something is missing."""
    blk = get(v, b)
    if blk is None:
        return False
    if v.left is None:
        op = LinOp((v.pid, b), DEQ if blk.is_deq else ENQ, None if blk.is_deq else blk.element)
        (deqs if blk.is_deq else enqs).append(op)
        return True
    prev = get(v, b - 1)
    if prev is None:
        return False
    ok = True
    for child, lo, hi in ((v.left, prev.end_left, blk.end_left), (v.right, prev.end_right, blk.end_right)):
        for j in range(lo + 1, hi + 1):
            ok &= _expand(child, j, get, enqs, deqs)
    return ok


def linearization_from(root: Any, indices: Iterable[int], get: BlockGetter) -> Linearization:
    ops: list[LinOp] = []
    ends: list[int] = []
    partial = False
    for b in indices:
        enqs: list[LinOp] = []
        deqs: list[LinOp] = []
        partial |= not _expand(root, b, get, enqs, deqs)
        ops += enqs
        ops += deqs
        ends.append(len(ops))
    return Linearization(ops, ends, partial)


def extract_linearization(queue: Any) -> Linearization:
    """Linearization stored in the root of either queue variant.

    For the bounded variant only blocks still present are expanded;
    ``partial`` is set when garbage collection removed some of them.
    """
    root = queue.root
    if getattr(queue, "variant", "") == "bounded":
        from . import prbt

        def get(v: Any, i: int) -> Optional[Block]:
            return prbt.find_by_index(v.blocks.value, i)

        indices = [blk.index for blk in root.blocks.value if blk.index > 0]
        lin = linearization_from(root, indices, get)
        if indices and indices[0] > 1:
            lin.partial = True
        return lin

    def get_u(v: Any, i: int) -> Optional[Block]:
        blk = v.blocks.get(i)
        return None if blk is None or blk.__class__ is not Block else blk

    count = len(root.blocks.installed())
    return linearization_from(root, range(1, count), get_u)
