"""Wait-free MPMC FIFO queue built on an ordering tree (unbounded space).

Every process owns a leaf of a static binary tree.  An operation is appended
to its leaf as a one-operation block and then pushed towards the root: each
internal node stores blocks that batch the new operations of its two
children.  The order of blocks in the root defines the linearization, and a
dequeue computes its response from prefix sums stored in the blocks.

All routines that touch shared cells are generators yielding access requests
(see :mod:`wfqueue.memory`).  :class:`QueueHandle` drives them directly for
ordinary multithreaded use; the simulator drives them one step at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Generator, Optional

from .blocks import EMPTY, Block, BlockArray, empty_block
from .memory import UNSET, AtomicCell, SharedMemory, Steps, cas, mark, read, write


def tree_width(processes: int) -> int:
    """Number of leaves: the next power of two, and at least two.

    Two leaves even for a single process keeps the root an internal node,
    so every operation is propagated the same way.
    """
    if processes < 1:
        raise ValueError("need at least one process")
    return max(2, 1 << (processes - 1).bit_length())


class TreeNode:
    __slots__ = ("id", "parent", "left", "right", "is_left", "pid", "blocks", "head")

    def __init__(self, node_id: int, owner: Optional[int] = None) -> None:
        self.id = node_id
        self.parent: Optional[TreeNode] = None
        self.left: Optional[TreeNode] = None
        self.right: Optional[TreeNode] = None
        self.is_left = False
        self.pid = owner
        self.blocks = BlockArray(node_id, owner)
        self.head = AtomicCell(1, key=("head", node_id))

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def __repr__(self) -> str:
        return f"TreeNode({self.id})"


def build_tree(processes: int, make: Callable[[int, Optional[int]], Any]) -> list:
    """Heap-ordered node list: index 1 is the root, leaves follow the internals."""
    width = tree_width(processes)
    nodes = [None] + [make(i, i - width if i >= width else None) for i in range(1, 2 * width)]
    for i in range(1, width):
        node, left, right = nodes[i], nodes[2 * i], nodes[2 * i + 1]
        node.left, node.right = left, right
        left.parent = right.parent = node
        left.is_left = True
    return nodes


# -- monotone searches ---------------------------------------------------------

SumReader = Callable[[int], Generator[Any, Any, int]]


def binary_search(read_sum: SumReader, lo: int, hi: int, target: int):
    """Smallest index in ``(lo, hi]`` whose sum reaches ``target``.

    Requires ``sum(lo) < target <= sum(hi)`` over a non-decreasing sequence.
    """
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if (yield from read_sum(mid)) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def doubling_search(read_sum: SumReader, b: int, e: int):
    """Smallest index ``<= b`` whose sum reaches ``e``.

    Probes ``b-1, b-2, b-4, ...`` until a probe falls below ``e`` (or past
    index 1, where the dummy sum 0 is known), then binary-searches the
    bracketed range.  Cost is logarithmic in the distance from ``b``.
    """
    hi, d = b, 1
    while True:
        j = b - d
        if j < 1:
            lo = 0
            break
        if (yield from read_sum(j)) < e:
            lo = j
            break
        hi = j
        d *= 2
    return (yield from binary_search(read_sum, lo, hi, e))


def run_local(steps: Steps) -> Any:
    """Drive a generator that is not expected to issue any request."""
    try:
        request = next(steps)
    except StopIteration as stop:
        return stop.value
    raise RuntimeError(f"unexpected shared access {request!r}")


def search_sums(sums: list[int], b: int, e: int) -> tuple[int, int]:
    """Doubling search over a plain list; returns ``(index, probes)``.

    ``sums[0]`` plays the role of the dummy block and must be 0.
    """
    probes = 0

    def read_sum(j: int):
        nonlocal probes
        probes += 1
        return sums[j]
        yield  # pragma: no cover

    return run_local(doubling_search(read_sum, b, e)), probes


# -- the queue -----------------------------------------------------------------


@dataclass
class QueueHandle:
    """Per-process handle: the leaf and the local cursor into it."""

    queue: Any
    pid: int
    leaf: Any
    cursor: int = 1

    def enqueue(self, element: Any) -> None:
        if element is None:
            raise ValueError("None cannot be enqueued")
        self.queue.memory.drive(self.pid, self.queue.enqueue(self, element))

    def dequeue(self) -> Any:
        return self.queue.memory.drive(self.pid, self.queue.dequeue(self))


class OrderingTreeQueue:
    """Unbounded-space wait-free queue.

    ``double_refresh`` and ``help_advance`` exist only so that tests can
    disable these steps and watch the queue break.
    """

    variant = "unbounded"

    def __init__(
        self,
        processes: int,
        *,
        memory: Optional[SharedMemory] = None,
        double_refresh: bool = True,
        help_advance: bool = True,
    ) -> None:
        self.processes = processes
        self.memory = memory if memory is not None else SharedMemory(processes, concurrent=True)
        self.double_refresh = double_refresh
        self.help_advance = help_advance
        self.nodes: list[TreeNode] = build_tree(processes, TreeNode)
        self.root: TreeNode = self.nodes[1]
        width = tree_width(processes)
        self.leaves: list[TreeNode] = self.nodes[width : width + processes]
        for node in self.nodes[1:]:
            node.blocks.slot(0).value = empty_block()
        self._handles = [QueueHandle(self, pid, leaf) for pid, leaf in enumerate(self.leaves)]

    def handle(self, pid: int) -> QueueHandle:
        return self._handles[pid]

    # -- operations ------------------------------------------------------------

    def enqueue(self, h: QueueHandle, element: Any):
        leaf, i = h.leaf, h.cursor
        prev = yield read(leaf.blocks.slot(i - 1))
        block = Block(
            prev.sum_enq + 1,
            prev.sum_deq,
            element=element,
            super_key=("sup", leaf.id, i),
        )
        yield from self.append(h, block)

    def dequeue(self, h: QueueHandle):
        leaf, i = h.leaf, h.cursor
        prev = yield read(leaf.blocks.slot(i - 1))
        block = Block(
            prev.sum_enq,
            prev.sum_deq + 1,
            is_deq=True,
            super_key=("sup", leaf.id, i),
        )
        yield from self.append(h, block)
        yield mark("respond")
        b, k = yield from self.index_dequeue(leaf, i, 1)
        return (yield from self.find_response(b, k))

    def append(self, h: QueueHandle, block: Block):
        leaf, i = h.leaf, h.cursor
        yield write(leaf.blocks.slot(i), block)
        h.cursor = i + 1
        # Advancing the leaf head through Advance also records the block's
        # super index, which dequeues rely on when walking up.
        yield from self.advance(leaf, i)
        yield from self.propagate(leaf.parent)

    def propagate(self, v: TreeNode):
        # The marks tell the explorer that nothing read so far is still needed.
        while True:
            yield mark((v.id, 1))
            if not (yield from self.refresh(v, 1)) and self.double_refresh:
                yield mark((v.id, 2))
                yield from self.refresh(v, 2)
            if v.parent is None:
                return
            v = v.parent

    def refresh(self, v: TreeNode, attempt: int = 1):
        """Try once to install a block holding the children's new operations."""
        h = yield read(v.head)
        if self.help_advance:
            for child in (v.left, v.right):
                ch = yield read(child.head)
                if (yield read(child.blocks.slot(ch))) is not UNSET:
                    yield from self.advance(child, ch)
        yield mark((v.id, attempt, h))
        new = yield from self.create_block(v, h)
        if new is None:
            return True
        ok = yield cas(v.blocks.slot(h), UNSET, new)
        yield mark((v.id, attempt, h, ok))
        yield from self.advance(v, h)
        return ok

    def create_block(self, v: TreeNode, i: int):
        end_left = (yield read(v.left.head)) - 1
        end_right = (yield read(v.right.head)) - 1
        lb = yield read(v.left.blocks.slot(end_left))
        rb = yield read(v.right.blocks.slot(end_right))
        prev = yield read(v.blocks.slot(i - 1))
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
            end_left=end_left,
            end_right=end_right,
            size=size,
            super_key=None if v.parent is None else ("sup", v.id, i),
        )

    def advance(self, v: TreeNode, h: int):
        """Record the super index of ``v.blocks[h]`` and move ``v.head`` past it."""
        if v.parent is not None:
            hp = yield read(v.parent.head)
            block = yield read(v.blocks.slot(h))
            yield cas(block.super, UNSET, hp)
        yield cas(v.head, h, h + 1)

    # -- dequeue response ----------------------------------------------------------

    def index_dequeue(self, v: TreeNode, b: int, i: int):
        """Position ``<root block, rank>`` of the i-th dequeue of ``v.blocks[b]``."""
        while v.parent is not None:
            parent, left = v.parent, v.is_left
            pblocks = parent.blocks
            block = yield read(v.blocks.slot(b))
            sup = yield read(block.super)
            assert sup is not UNSET, "super index read before it was set"
            sb = yield read(pblocks.slot(sup))
            assert sb is not UNSET, "super index points past the parent's blocks"
            if b > sb.end(left):
                sup += 1
                sb = yield read(pblocks.slot(sup))
            before = yield read(pblocks.slot(sup - 1))
            prev = yield read(v.blocks.slot(b - 1))
            first = yield read(v.blocks.slot(before.end(left)))
            i += prev.sum_deq - first.sum_deq
            if not left:
                sibling = parent.left.blocks
                x = yield read(sibling.slot(sb.end_left))
                y = yield read(sibling.slot(before.end_left))
                i += x.sum_deq - y.sum_deq
            v, b = parent, sup
        return b, i

    def _sum_reader(self, v: TreeNode) -> SumReader:
        blocks = v.blocks

        def read_sum(j: int):
            return (yield read(blocks.slot(j))).sum_enq

        return read_sum

    def find_response(self, b: int, i: int):
        """Response of the i-th dequeue in root block ``b``."""
        blocks = self.root.blocks
        block = yield read(blocks.slot(b))
        prev = yield read(blocks.slot(b - 1))
        num_enq = block.sum_enq - prev.sum_enq
        assert 1 <= i <= block.sum_deq - prev.sum_deq, f"dequeue rank {i} outside root block {b}"
        if prev.size + num_enq < i:
            return EMPTY
        e = i + prev.sum_enq - prev.size
        be = yield from doubling_search(self._sum_reader(self.root), b, e)
        before = yield read(blocks.slot(be - 1))
        return (yield from self.get_enqueue(self.root, be, e - before.sum_enq))

    def get_enqueue(self, v: TreeNode, b: int, i: int):
        """Element of the i-th enqueue in ``v.blocks[b]``."""
        while v.left is not None:
            block = yield read(v.blocks.slot(b))
            prev = yield read(v.blocks.slot(b - 1))
            lsum = (yield read(v.left.blocks.slot(block.end_left))).sum_enq
            lprev = (yield read(v.left.blocks.slot(prev.end_left))).sum_enq
            if i <= lsum - lprev:
                child, lo, hi, base = v.left, prev.end_left, block.end_left, lprev
            else:
                i -= lsum - lprev
                base = (yield read(v.right.blocks.slot(prev.end_right))).sum_enq
                child, lo, hi = v.right, prev.end_right, block.end_right
            bp = yield from binary_search(self._sum_reader(child), lo, hi, i + base)
            before = yield read(child.blocks.slot(bp - 1))
            i -= before.sum_enq - base
            v, b = child, bp
        return (yield read(v.blocks.slot(b))).element
