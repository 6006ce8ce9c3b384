"""Invariant hooks for simulated runs.

A monitor watches every successful mutation of shared memory and every
operation response, and audits the whole structure when the run ends.  It
reads cells directly, so none of its work is charged to any process.
Violations raise :class:`InvariantViolation` naming the broken property.
"""

from __future__ import annotations

from bisect import bisect_left
from typing import Any, Optional

from . import prbt
from .blocks import EMPTY, Block
from .checker import (
    Linearization,
    LinOp,
    _expand,
    block_sizes,
    extract_linearization,
    linearization_from,
    replay,
)
from .history import DEQ, ENQ, OK, History, point_contention
from .memory import UNSET, AtomicCell


class InvariantViolation(AssertionError):
    def __init__(self, invariant: str, message: str) -> None:
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant
        self.message = message


def _fail(invariant: str, message: str) -> None:
    raise InvariantViolation(invariant, message)


class UnboundedMonitor:
    """Hooks for :class:`~wfqueue.ordering_tree.OrderingTreeQueue`."""

    def __init__(self, queue: Any) -> None:
        self.queue = queue
        self.nodes = queue.nodes
        self.container_peak = 1

    # -- incremental checks --------------------------------------------------------

    def on_update(self, pid: int, cell: AtomicCell, old: Any, new: Any) -> None:
        key = cell.key
        tag = key[0]
        if tag == "head":
            node = self.nodes[key[1]]
            if new != old + 1:
                _fail("head monotonicity", f"node {node.id} head moved {old} -> {new}")
            blk = node.blocks.get(old)
            if blk is UNSET:
                _fail("slot discipline", f"node {node.id} head passed empty slot {old}")
            if node.parent is not None and blk.super.value is UNSET:
                _fail("super before head", f"node {node.id} block {old} has no super index")
            if new > self.container_peak:
                self.container_peak = new
        elif tag == "blk":
            node = self.nodes[key[1]]
            i = key[2]
            if i != node.head.value:
                _fail("slot discipline", f"node {node.id} block {i} installed at head {node.head.value}")
            prev = node.blocks.get(i - 1)
            if new.sum_enq + new.sum_deq <= prev.sum_enq + prev.sum_deq:
                _fail("block non-emptiness", f"node {node.id} block {i} holds no operation")
            if node.left is not None:
                if new.end_left < prev.end_left or new.end_right < prev.end_right:
                    _fail("end monotonicity", f"node {node.id} block {i}")

    def on_response(self, pid: int, k: int, kind: str, result: Any) -> None:
        # Every operation is in the root by the time it returns.
        v, b = self.queue.leaves[pid], k
        while v.parent is not None:
            parent, left = v.parent, v.is_left
            blocks = parent.blocks
            head = parent.head.value
            count = head + (blocks.get(head) is not UNSET)
            lo, hi = 0, count
            while lo < hi:
                mid = (lo + hi) // 2
                if blocks.get(mid).end(left) >= b:
                    hi = mid
                else:
                    lo = mid + 1
            if lo == count:
                _fail("propagation", f"op ({pid},{k}) returned before reaching node {parent.id}")
            v, b = parent, lo

    # -- end of run ----------------------------------------------------------------

    def linearization(self) -> Linearization:
        return extract_linearization(self.queue)

    def final(self, history: History) -> None:
        queue = self.queue
        blocks = {node.id: node.blocks.installed() for node in self.nodes[1:]}
        for node in self.nodes[1:]:
            own = blocks[node.id]
            head = node.head.value
            if not len(own) - 1 <= head <= len(own):
                _fail("slot discipline", f"node {node.id} head {head} with {len(own)} slots used")
            if node.left is None:
                enq = deq = 0
                for i, blk in enumerate(own[1:], 1):
                    enq += not blk.is_deq
                    deq += blk.is_deq
                    if (blk.sum_enq, blk.sum_deq) != (enq, deq):
                        _fail("sum correctness", f"leaf {node.id} block {i}")
            else:
                lb, rb = blocks[node.left.id], blocks[node.right.id]
                for i, blk in enumerate(own[1:], 1):
                    if blk.end_left >= len(lb) or blk.end_right >= len(rb):
                        _fail("slot discipline", f"node {node.id} block {i} ends past its children")
                    l, r = lb[blk.end_left], rb[blk.end_right]
                    if (blk.sum_enq, blk.sum_deq) != (l.sum_enq + r.sum_enq, l.sum_deq + r.sum_deq):
                        _fail("sum correctness", f"node {node.id} block {i}")
            if node.parent is not None:
                self._check_super(node, own, blocks[node.parent.id])

        lin = self.linearization()
        root = blocks[self.nodes[1].id]
        sizes = block_sizes(lin)
        for i, blk in enumerate(root[1:]):
            if blk.size != sizes[i]:
                _fail("size correctness", f"root block {i + 1} size {blk.size} != {sizes[i]}")
        _audit_linearization(lin, history, self.nodes[1], blocks, self.nodes)

    def _check_super(self, node: Any, own: list[Block], parent_blocks: list[Block]) -> None:
        ends = [blk.end(node.is_left) for blk in parent_blocks]
        for i, blk in enumerate(own[1:], 1):
            sup = blk.super.value
            if sup is UNSET:
                continue
            s = bisect_left(ends, i)
            if s < len(ends) and not s - 1 <= sup <= s:
                _fail("super off-by-one", f"node {node.id} block {i}: super {sup}, superblock {s}")


def _audit_linearization(
    lin: Linearization, history: History, root: Any, blocks: Optional[dict], nodes: list
) -> None:
    seen: set = set()
    for blk in lin.blocks():
        procs = set()
        for op in blk:
            if op.op_id in seen:
                _fail("no duplication", f"op {op.op_id} appears twice")
            seen.add(op.op_id)
            if op.op_id[0] in procs:
                _fail("per-process uniqueness", f"two ops of process {op.op_id[0]} in one block")
            procs.add(op.op_id[0])
    events = history.by_id()
    oracle = replay(lin.ops)
    for op_id, e in events.items():
        if e.pending:
            continue
        if op_id not in oracle.responses:
            _fail("propagation", f"completed op {op_id} missing from the linearization")
        if e.kind == DEQ and oracle.responses[op_id] != e.response:
            _fail(
                "response matches linearization",
                f"op {op_id} returned {e.response!r}, linearization says {oracle.responses[op_id]!r}",
            )
    if blocks is not None:
        c = point_contention(history)
        for node in nodes[1:]:
            if node.left is None:
                continue
            own = blocks[node.id]
            for i in range(1, len(own)):
                n = (own[i].end_left - own[i - 1].end_left) + (own[i].end_right - own[i - 1].end_right)
                if n > max(c, 1):
                    _fail("subblocks within contention", f"node {node.id} block {i}: {n} > {c}")


class BoundedMonitor:
    """Hooks for :class:`~wfqueue.bounded.BoundedQueue`.

    Keeps a shadow copy of every block ever published, which makes it possible
    to rebuild the full linearization after garbage collection and to decide
    whether a discarded block was finished.
    """

    def __init__(self, queue: Any) -> None:
        self.queue = queue
        self.nodes = queue.nodes
        self.G = queue.gc_period
        self.shadow: dict[int, list[Block]] = {
            node.id: list(node.blocks.value) for node in self.nodes[1:]
        }
        self.verified: dict[int, int] = {node.id: 0 for node in self.nodes[1:]}
        self.gc_sizes: list[int] = []
        self.sizes: list[int] = []
        self.container_peak = 1
        self.delivered: set = set()
        self.answered: set = set()
        self.early_exits: list[tuple[int, int, bool]] = []
        queue.on_early_exit = self.on_early_exit

    # -- incremental checks ----------------------------------------------------------

    def on_update(self, pid: int, cell: AtomicCell, old: Any, new: Any) -> None:
        tag = cell.key[0]
        if tag == "ver":
            self._on_publish(self.nodes[cell.key[1]], old, new)
        elif tag == "resp":
            leaf = self.nodes[cell.key[1]]
            self.answered.add((leaf.pid, cell.key[2]))
            if new is not EMPTY:
                self.delivered.add(new)
        elif tag == "last":
            if new <= old:
                _fail("last monotonicity", f"last[{cell.key[1]}] {old} -> {new}")

    def _on_publish(self, node: Any, old: prbt.BlockTree, new: prbt.BlockTree) -> None:
        top = new.max_block
        if top.index != old.max_block.index + 1:
            _fail("consecutive indices", f"node {node.id} jumped {old.max_block.index} -> {top.index}")
        if new.count != top.index - new.min_block.index + 1:
            _fail("consecutive indices", f"node {node.id} has gaps")
        if new.min_block.index < old.min_block.index:
            _fail("consecutive indices", f"node {node.id} regained discarded blocks")
        shadow = self.shadow[node.id]
        if top.index != len(shadow):
            _fail("consecutive indices", f"node {node.id} index {top.index} published twice")
        shadow.append(top)
        n = new.count
        self.sizes.append(n)
        self.container_peak = max(self.container_peak, n)
        if top.index % self.G == 0:
            self.gc_sizes.append(n)
            self._check_finished(node, new.min_block.index)

    def on_response(self, pid: int, k: int, kind: str, result: Any) -> None:
        if kind == DEQ:
            self.answered.add((pid, k))
            if result is not EMPTY:
                self.delivered.add(result)

    def on_early_exit(self, pid: int, leaf: Any, block: Block) -> None:
        self.early_exits.append((pid, block.index, block.is_deq))
        if block.is_deq:
            if block.response.value is UNSET:
                _fail("early termination", f"dequeue ({pid},{block.index}) has no response")
        elif self._superblock_chain(leaf, block.index) is None:
            _fail("early termination", f"enqueue ({pid},{block.index}) stopped before reaching the root")

    # -- shadow bookkeeping ------------------------------------------------------------

    def _superblock_chain(self, v: Any, b: int) -> Optional[int]:
        """Index of the root block containing ``v``'s block ``b``, if any yet."""
        while v.parent is not None:
            ends = [blk.end(v.is_left) for blk in self.shadow[v.parent.id]]
            s = bisect_left(ends, b)
            if s == len(ends):
                return None
            v, b = v.parent, s
        return b

    def _get(self, v: Any, i: int) -> Optional[Block]:
        shadow = self.shadow[v.id]
        return shadow[i] if 0 <= i < len(shadow) else None

    def _check_finished(self, node: Any, upto: int) -> None:
        # Finishing is permanent, so each block only needs checking once.
        start = self.verified[node.id] + 1
        for i in range(start, upto + 1):
            if self._superblock_chain(node, i) is None:
                _fail("finished before discarded", f"node {node.id} block {i} not in the root")
            enqs: list[LinOp] = []
            deqs: list[LinOp] = []
            _expand(node, i, self._get, enqs, deqs)
            for op in enqs:
                if op.arg not in self.delivered:
                    _fail("finished before discarded", f"node {node.id} block {i}: {op.arg!r} not delivered")
            for op in deqs:
                if op.op_id not in self.answered:
                    _fail("finished before discarded", f"node {node.id} block {i}: {op.op_id} unanswered")
        self.verified[node.id] = max(self.verified[node.id], upto)

    # -- end of run ------------------------------------------------------------------------

    def linearization(self) -> Linearization:
        root = self.nodes[1]
        return linearization_from(root, range(1, len(self.shadow[root.id])), self._get)

    def size_bounds(self, q_max: int) -> tuple[int, int]:
        p = self.queue.processes
        after_gc = 2 * q_max + 4 * p + 1
        return after_gc, after_gc + self.G

    def final(self, history: History) -> None:
        lin = self.linearization()
        root_blocks = self.shadow[self.nodes[1].id]
        sizes = block_sizes(lin)
        for i, blk in enumerate(root_blocks[1:]):
            if blk.size != sizes[i]:
                _fail("size correctness", f"root block {i + 1} size {blk.size} != {sizes[i]}")
        _audit_linearization(lin, history, self.nodes[1], None, self.nodes)
        oracle = replay(lin.ops)
        after_gc, always = self.size_bounds(oracle.q_max)
        if self.gc_sizes and max(self.gc_sizes) > after_gc:
            _fail("space after collection", f"{max(self.gc_sizes)} blocks > {after_gc}")
        if self.sizes and max(self.sizes) > always:
            _fail("space bound", f"{max(self.sizes)} blocks > {always}")
        self.q_max = oracle.q_max
