"""Persistent red-black tree of blocks, keyed by block index.

Every update copies the nodes on the touched paths and leaves the old version
intact, so a version can be published through a single cell and read by any
number of processes without locking.  Insertions always add a new maximum and
splits keep a suffix, so both are expressed with the classic ``join``
operation on red-black trees (black heights decide where the smaller tree is
hung).  The block fields ``sum_enq`` and ``end_left``/``end_right`` are
non-decreasing in the index, which makes the threshold searches simple
descents.

Searches take an optional :class:`Meter` that counts visited nodes; the
bounded queue turns those counts into steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterator, Optional

from .blocks import Block, content_hash

RED, BLACK = 0, 1


class Node:
    __slots__ = ("color", "left", "block", "right", "bh", "size", "_hash")

    def __init__(self, color: int, left: Optional[Node], block: Block, right: Optional[Node]):
        self.color = color
        self.left = left
        self.block = block
        self.right = right
        self.bh = _bh(left) + color
        self.size = _size(left) + 1 + _size(right)
        self._hash: Optional[int] = None

    @property
    def key(self) -> int:
        return self.block.index

    def content_hash(self) -> int:
        if self._hash is None:
            self._hash = hash(
                (
                    self.color,
                    content_hash(self.block),
                    self.left.content_hash() if self.left else 0,
                    self.right.content_hash() if self.right else 0,
                )
            )
        return self._hash


def _bh(t: Optional[Node]) -> int:
    return 0 if t is None else t.bh


def _size(t: Optional[Node]) -> int:
    return 0 if t is None else t.size


def _red(t: Optional[Node]) -> bool:
    return t is not None and t.color == RED


def _blacken(t: Optional[Node]) -> Optional[Node]:
    if t is None or t.color == BLACK:
        return t
    return Node(BLACK, t.left, t.block, t.right)


def _join_right(tl: Optional[Node], block: Block, tr: Optional[Node]) -> Node:
    # bh(tl) >= bh(tr), tr black-rooted: walk down the right spine of tl.
    if not _red(tl) and _bh(tl) == _bh(tr):
        return Node(RED, tl, block, tr)
    assert tl is not None
    t = Node(tl.color, tl.left, tl.block, _join_right(tl.right, block, tr))
    r = t.right
    if tl.color == BLACK and _red(r) and _red(r.right):
        rr = _blacken(r.right)
        return Node(r.color, Node(BLACK, t.left, t.block, r.left), r.block, rr)
    return t


def _join_left(tl: Optional[Node], block: Block, tr: Optional[Node]) -> Node:
    if not _red(tr) and _bh(tr) == _bh(tl):
        return Node(RED, tl, block, tr)
    assert tr is not None
    t = Node(tr.color, _join_left(tl, block, tr.left), tr.block, tr.right)
    lft = t.left
    if tr.color == BLACK and _red(lft) and _red(lft.left):
        ll = _blacken(lft.left)
        return Node(lft.color, ll, lft.block, Node(BLACK, lft.right, t.block, t.right))
    return t


def join(tl: Optional[Node], block: Block, tr: Optional[Node]) -> Node:
    """Tree holding ``tl``'s blocks, then ``block``, then ``tr``'s blocks."""
    tl, tr = _blacken(tl), _blacken(tr)
    if _bh(tl) > _bh(tr):
        t = _join_right(tl, block, tr)
    elif _bh(tr) > _bh(tl):
        t = _join_left(tl, block, tr)
    else:
        return Node(RED if not _red(tl) and not _red(tr) else BLACK, tl, block, tr)
    if t.color == RED and (_red(t.left) or _red(t.right)):
        return _blacken(t)
    return t


def _suffix(t: Optional[Node], s: int) -> Optional[Node]:
    if t is None:
        return None
    if t.key < s:
        return _suffix(t.right, s)
    return join(_suffix(t.left, s), t.block, t.right)


class Meter:
    """Counts tree nodes visited by searches."""

    __slots__ = ("visits",)

    def __init__(self) -> None:
        self.visits = 0

    def take(self) -> int:
        n, self.visits = self.visits, 0
        return n


_NULL_METER = Meter()


@dataclass(frozen=True, eq=False)
class BlockTree:
    """One immutable version: the root plus cached minimum and maximum blocks."""

    root: Optional[Node]
    min_block: Optional[Block]
    max_block: Optional[Block]

    @property
    def count(self) -> int:
        return _size(self.root)

    def __len__(self) -> int:
        return _size(self.root)

    def content_hash(self) -> int:
        return self.root.content_hash() if self.root else 0

    def __iter__(self) -> Iterator[Block]:
        stack, t = [], self.root
        while stack or t is not None:
            while t is not None:
                stack.append(t)
                t = t.left
            t = stack.pop()
            yield t.block
            t = t.right

    def indices(self) -> list[int]:
        return [b.index for b in self]


EMPTY_TREE = BlockTree(None, None, None)


def single(block: Block) -> BlockTree:
    return BlockTree(Node(BLACK, None, block, None), block, block)


def insert_max(t: BlockTree, block: Block) -> BlockTree:
    """Add ``block``, whose index must exceed every index in ``t``."""
    if t.max_block is not None and block.index <= t.max_block.index:
        raise ValueError(f"index {block.index} is not above the maximum {t.max_block.index}")
    root = _blacken(join(t.root, block, None))
    return BlockTree(root, t.min_block or block, block)


def split_at(t: BlockTree, s: int) -> BlockTree:
    """Keep the blocks with index ``>= s``; ``s`` may not exceed the maximum."""
    if t.max_block is None or s > t.max_block.index:
        raise ValueError(f"split index {s} beyond the maximum")
    if s <= t.min_block.index:
        return t
    root = _blacken(_suffix(t.root, s))
    return BlockTree(root, find_by_index(BlockTree(root, None, None), s), t.max_block)


def find_by_index(t: BlockTree, i: int, meter: Meter = _NULL_METER) -> Optional[Block]:
    """The block with index ``i``, or ``None`` if it was removed or never added."""
    n = t.root
    while n is not None:
        meter.visits += 1
        k = n.block.index
        if i == k:
            return n.block
        n = n.left if i < k else n.right
    return None


def _first(t: BlockTree, pred: Callable[[Block], bool], meter: Meter) -> Optional[Block]:
    # Leftmost block satisfying a predicate that is monotone in the index.
    best, n = None, t.root
    while n is not None:
        meter.visits += 1
        if pred(n.block):
            best, n = n.block, n.left
        else:
            n = n.right
    return best


def _last(t: BlockTree, pred: Callable[[Block], bool], meter: Meter) -> Optional[Block]:
    # Rightmost block satisfying a predicate that is antitone in the index.
    best, n = None, t.root
    while n is not None:
        meter.visits += 1
        if pred(n.block):
            best, n = n.block, n.right
        else:
            n = n.left
    return best


def min_with_sum_enq_geq(
    t: BlockTree, e: int, hi: Optional[int] = None, meter: Meter = _NULL_METER
) -> Optional[Block]:
    """Smallest-index block with ``sum_enq >= e``; it must lie at or below ``hi``."""
    b = _first(t, lambda blk: blk.sum_enq >= e, meter)
    if hi is not None:
        assert b is not None and b.index <= hi, f"no block up to {hi} reaches sum_enq {e}"
    return b


def min_with_end_geq(
    t: BlockTree, left: bool, b: int, meter: Meter = _NULL_METER
) -> Optional[Block]:
    """Smallest-index block whose end on the given side is ``>= b``."""
    if left:
        return _first(t, lambda blk: blk.end_left >= b, meter)
    return _first(t, lambda blk: blk.end_right >= b, meter)


def max_with_end_lt(
    t: BlockTree, left: bool, b: int, meter: Meter = _NULL_METER
) -> Optional[Block]:
    """Largest-index block whose end on the given side is ``< b``."""
    if left:
        return _last(t, lambda blk: blk.end_left < b, meter)
    return _last(t, lambda blk: blk.end_right < b, meter)


def max_block(t: BlockTree) -> Optional[Block]:
    return t.max_block


def min_block(t: BlockTree) -> Optional[Block]:
    return t.min_block


# -- structural checks (tests and debug hooks) ----------------------------------


def height(t: BlockTree) -> int:
    def h(n: Optional[Node]) -> int:
        return 0 if n is None else 1 + max(h(n.left), h(n.right))

    return h(t.root)


def check_invariants(t: BlockTree) -> None:
    """Raise ``AssertionError`` unless ``t`` is a valid red-black search tree."""

    def walk(n: Optional[Node], lo: Optional[int], hi: Optional[int]) -> int:
        if n is None:
            return 0
        k = n.key
        assert (lo is None or k > lo) and (hi is None or k < hi), "search order broken"
        if n.color == RED:
            assert not _red(n.left) and not _red(n.right), "red node with red child"
        lb = walk(n.left, lo, k)
        rb = walk(n.right, k, hi)
        assert lb == rb, "unequal black heights"
        assert n.bh == lb + n.color, "stale black height"
        assert n.size == _size(n.left) + 1 + _size(n.right), "stale size"
        return lb + n.color

    walk(t.root, None, None)
    assert not _red(t.root), "red root"
    blocks = list(t)
    if blocks:
        assert t.min_block is blocks[0] and t.max_block is blocks[-1], "stale min/max"
    else:
        assert t.min_block is None and t.max_block is None


def checksum(t: BlockTree) -> Any:
    """Node-identity fingerprint used to confirm a version was never mutated."""
    out = []

    def walk(n: Optional[Node]) -> None:
        if n is None:
            return
        out.append((id(n), n.color, id(n.left), id(n.block), id(n.right), n.bh, n.size))
        walk(n.left)
        walk(n.right)

    walk(t.root)
    return tuple(out)
