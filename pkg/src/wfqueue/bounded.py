"""Bounded-space variant of the ordering-tree queue.

Each node keeps its blocks in a persistent red-black tree published through
one cell, instead of an ever-growing array.  Whenever a node receives a block
whose index is a multiple of the garbage-collection period ``G``, the inserting
process first finds a safe split point (a block that every process is done
with), helps pending dequeues finish, and drops everything older than the
split point from the new version.

Because old blocks can disappear, any lookup may come back empty.  When that
happens the running operation stops early: an enqueue is then known to be
linearized already, and a dequeue finds its response in its own leaf block,
written by whoever collected the garbage.
"""

from __future__ import annotations

import math
from typing import Any, Callable, Optional

from . import prbt
from .blocks import EMPTY, Block, empty_block
from .memory import UNSET, AtomicCell, SharedMemory, cas, charge, mark, read, write
from .ordering_tree import QueueHandle, build_tree, tree_width


class BlockDiscarded(Exception):
    """A block needed by the running operation was garbage-collected."""


def default_gc_period(processes: int) -> int:
    return max(1, processes * processes * math.ceil(math.log2(processes)))


class BoundedNode:
    __slots__ = ("id", "parent", "left", "right", "is_left", "pid", "blocks")

    def __init__(self, node_id: int, owner: Optional[int] = None) -> None:
        self.id = node_id
        self.parent: Optional[BoundedNode] = None
        self.left: Optional[BoundedNode] = None
        self.right: Optional[BoundedNode] = None
        self.is_left = False
        self.pid = owner
        self.blocks = AtomicCell(
            prbt.single(empty_block()), key=("ver", node_id), owner=owner
        )

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def __repr__(self) -> str:
        return f"BoundedNode({self.id})"


EarlyExit = Callable[[int, BoundedNode, Block], None]


class BoundedQueue:
    """Wait-free queue whose memory stays proportional to the queue size.

    ``on_early_exit`` is a test hook called as ``(pid, leaf, block)`` whenever
    an operation stops because a block it needed is gone.
    """

    variant = "bounded"

    def __init__(
        self,
        processes: int,
        *,
        memory: Optional[SharedMemory] = None,
        gc_period: Optional[int] = None,
        double_refresh: bool = True,
    ) -> None:
        self.processes = processes
        self.memory = memory if memory is not None else SharedMemory(processes, concurrent=True)
        self.gc_period = gc_period if gc_period is not None else default_gc_period(processes)
        if self.gc_period < 1:
            raise ValueError("gc period must be positive")
        self.double_refresh = double_refresh
        self.nodes: list[BoundedNode] = build_tree(processes, BoundedNode)
        self.root = self.nodes[1]
        width = tree_width(processes)
        self.leaves: list[BoundedNode] = self.nodes[width : width + processes]
        self.last = [AtomicCell(0, key=("last", k)) for k in range(processes)]
        self.on_early_exit: Optional[EarlyExit] = None
        self._handles = [QueueHandle(self, pid, leaf) for pid, leaf in enumerate(self.leaves)]

    def handle(self, pid: int) -> QueueHandle:
        return self._handles[pid]

    # -- tree lookups charged as steps -------------------------------------------

    def _find(self, t: prbt.BlockTree, i: int):
        meter = prbt.Meter()
        b = prbt.find_by_index(t, i, meter)
        yield charge(meter.visits)
        if b is None:
            raise BlockDiscarded(i)
        return b

    # -- operations -------------------------------------------------------------

    def _new_leaf_block(self, h: QueueHandle, t: prbt.BlockTree, element: Any, is_deq: bool):
        top = t.max_block
        i = top.index + 1
        return Block(
            top.sum_enq + (0 if is_deq else 1),
            top.sum_deq + (1 if is_deq else 0),
            element=element,
            is_deq=is_deq,
            index=i,
            response_key=("resp", h.leaf.id, i),
        )

    def enqueue(self, h: QueueHandle, element: Any):
        t = yield read(h.leaf.blocks)
        block = self._new_leaf_block(h, t, element, False)
        try:
            yield from self.append(h, t, block)
        except BlockDiscarded:
            if self.on_early_exit is not None:
                self.on_early_exit(h.pid, h.leaf, block)

    def dequeue(self, h: QueueHandle):
        t = yield read(h.leaf.blocks)
        block = self._new_leaf_block(h, t, None, True)
        try:
            yield from self.append(h, t, block)
            yield mark("respond")
            return (yield from self.complete_deq(h.leaf, block.index, h.pid, "own"))
        except BlockDiscarded:
            if self.on_early_exit is not None:
                self.on_early_exit(h.pid, h.leaf, block)
            res = yield read(block.response)
            assert res is not UNSET, "dequeue stopped early without a response"
            return res

    def append(self, h: QueueHandle, t: prbt.BlockTree, block: Block):
        ctx = ("append", t.content_hash(), block.content_hash())
        t2 = yield from self.add_block(h.leaf, t, block, h.pid, ctx)
        yield mark(("append", t2.content_hash()))
        yield write(h.leaf.blocks, t2)
        h.cursor = block.index + 1
        yield from self.propagate(h.leaf.parent, h.pid)

    def propagate(self, v: BoundedNode, me: int):
        while True:
            yield mark((v.id, 1))
            if not (yield from self.refresh(v, me, 1)) and self.double_refresh:
                yield mark((v.id, 2))
                yield from self.refresh(v, me, 2)
            if v.parent is None:
                return
            v = v.parent

    def refresh(self, v: BoundedNode, me: int, attempt: int = 1):
        t = yield read(v.blocks)
        h = t.max_block.index + 1
        new = yield from self.create_block(v, t, h)
        if new is None:
            return True
        t2 = yield from self.add_block(v, t, new, me, (v.id, attempt, t.content_hash(), new.content_hash()))
        yield mark((v.id, attempt, t.content_hash(), t2.content_hash()))
        return (yield cas(v.blocks, t, t2))

    def create_block(self, v: BoundedNode, t: prbt.BlockTree, i: int):
        lb = (yield read(v.left.blocks)).max_block
        rb = (yield read(v.right.blocks)).max_block
        prev = t.max_block  # the block with index i - 1
        sum_enq = lb.sum_enq + rb.sum_enq
        sum_deq = lb.sum_deq + rb.sum_deq
        num_enq = sum_enq - prev.sum_enq
        num_deq = sum_deq - prev.sum_deq
        if num_enq + num_deq == 0:
            return None
        size = max(0, prev.size + num_enq - num_deq) if v.parent is None else 0
        return Block(
            sum_enq,
            sum_deq,
            end_left=lb.index,
            end_right=rb.index,
            size=size,
            index=i,
        )

    # -- garbage collection -------------------------------------------------------

    def add_block(self, v: BoundedNode, t: prbt.BlockTree, block: Block, me: int, ctx: Any = None):
        """New version of ``t`` with ``block`` added, collecting garbage if due.

        ``ctx`` summarises the caller's local state; it only feeds the marks
        that let the explorer merge equivalent states.
        """
        if block.index % self.gc_period == 0:
            s = (yield from self.split_block(v, ctx)).index
            ctx = (ctx, s)
            yield mark(ctx)
            yield from self.help(me, ctx)
            # A split point past our (possibly stale) version only arises when
            # the publishing CAS is bound to fail; keep the tree non-empty.
            t = prbt.split_at(t, min(s, t.max_block.index))
            yield charge(2 * t.root.bh)
        t = prbt.insert_max(t, block)
        yield charge(t.root.bh * 2)
        return t

    def split_block(self, v: BoundedNode, ctx: Any = None):
        """Latest block of ``v`` that every process has finished with."""
        if v.parent is None:
            m = 0
            for cell in self.last:
                m = max(m, (yield read(cell)))
            t = yield read(v.blocks)
            meter = prbt.Meter()
            b = prbt.find_by_index(t, m - 1, meter)
        else:
            bp = yield from self.split_block(v.parent, ctx)
            yield mark((ctx, v.id, bp.index))
            t = yield read(v.blocks)
            meter = prbt.Meter()
            b = prbt.find_by_index(t, bp.end(v.is_left), meter)
        yield charge(meter.visits)
        return b if b is not None else t.min_block

    def help(self, me: int, ctx: Any = None):
        """Finish every pending dequeue that has reached the root."""
        for n, leaf in enumerate(self.leaves):
            yield mark((ctx, "help", n))
            block = (yield read(leaf.blocks)).max_block
            if not block.is_deq or block.index == 0:
                continue
            try:
                if (yield from self.propagated(leaf, block.index, (ctx, n))):
                    res = yield from self.complete_deq(leaf, block.index, me, (ctx, n, block.index))
                    yield cas(block.response, UNSET, res)
            except BlockDiscarded:
                pass

    def propagated(self, v: BoundedNode, b: int, ctx: Any = None):
        while v.parent is not None:
            yield mark((ctx, v.id, b))
            t = yield read(v.parent.blocks)
            if t.max_block.end(v.is_left) < b:
                return False
            meter = prbt.Meter()
            bp = prbt.min_with_end_geq(t, v.is_left, b, meter)
            yield charge(meter.visits)
            v, b = v.parent, bp.index
        return True

    # -- dequeue response -----------------------------------------------------------

    def complete_deq(self, leaf: BoundedNode, b: int, me: int, ctx: Any = None):
        r, k = yield from self.index_dequeue(leaf, b, 1, ctx)
        return (yield from self.find_response(r, k, me, (ctx, r, k)))

    def index_dequeue(self, v: BoundedNode, b: int, i: int, ctx: Any = None):
        while v.parent is not None:
            yield mark((ctx, v.id, b, i))
            parent, left = v.parent, v.is_left
            t = yield read(parent.blocks)
            meter = prbt.Meter()
            sup = prbt.min_with_end_geq(t, left, b, meter)
            before = prbt.max_with_end_lt(t, left, b, meter)
            yield charge(meter.visits)
            assert sup is not None, "dequeue not propagated to the parent"
            if before is None:
                raise BlockDiscarded(b)
            tv = yield read(v.blocks)
            prev = yield from self._find(tv, b - 1)
            first = yield from self._find(tv, before.end(left))
            i += prev.sum_deq - first.sum_deq
            if not left:
                ts = yield read(parent.left.blocks)
                x = yield from self._find(ts, sup.end_left)
                y = yield from self._find(ts, before.end_left)
                i += x.sum_deq - y.sum_deq
            v, b = parent, sup.index
        return b, i

    def _raise_last(self, me: int, b: int):
        cell = self.last[me]
        cur = yield read(cell)
        while b > cur:
            if (yield cas(cell, cur, b)):
                return
            cur = yield read(cell)

    def find_response(self, b: int, i: int, me: int, ctx: Any = None):
        yield mark(ctx)
        t = yield read(self.root.blocks)
        block = yield from self._find(t, b)
        prev = yield from self._find(t, b - 1)
        num_enq = block.sum_enq - prev.sum_enq
        assert 1 <= i <= block.sum_deq - prev.sum_deq, f"dequeue rank {i} outside root block {b}"
        if prev.size + num_enq < i:
            yield from self._raise_last(me, b)
            return EMPTY
        e = i + prev.sum_enq - prev.size
        meter = prbt.Meter()
        be = prbt.min_with_sum_enq_geq(t, e, b, meter)
        yield charge(meter.visits)
        before = yield from self._find(t, be.index - 1)
        res = yield from self.get_enqueue(self.root, be.index, e - before.sum_enq, (ctx, be.index))
        yield mark((ctx, be.index, res))
        yield from self._raise_last(me, be.index)
        return res

    def get_enqueue(self, v: BoundedNode, b: int, i: int, ctx: Any = None):
        while v.left is not None:
            yield mark((ctx, v.id, b, i))
            t = yield read(v.blocks)
            block = yield from self._find(t, b)
            prev = yield from self._find(t, b - 1)
            tl = yield read(v.left.blocks)
            lsum = (yield from self._find(tl, block.end_left)).sum_enq
            lprev = (yield from self._find(tl, prev.end_left)).sum_enq
            if i <= lsum - lprev:
                child, tc, base, hi = v.left, tl, lprev, block.end_left
            else:
                i -= lsum - lprev
                tc = yield read(v.right.blocks)
                base = (yield from self._find(tc, prev.end_right)).sum_enq
                child, hi = v.right, block.end_right
            meter = prbt.Meter()
            bp = prbt.min_with_sum_enq_geq(tc, i + base, hi, meter)
            yield charge(meter.visits)
            before = yield from self._find(tc, bp.index - 1)
            i -= before.sum_enq - base
            v, b = child, bp.index
        t = yield read(v.blocks)
        return (yield from self._find(t, b)).element
