"""Block records shared by both queue variants, and the growable block array."""

from __future__ import annotations

from typing import Any, Hashable, Optional

from .memory import UNSET, AtomicCell


class _Empty:
    __slots__ = ()

    def __repr__(self) -> str:
        return "EMPTY"

    def __reduce__(self):
        return "EMPTY"


EMPTY = _Empty()
"""Result of a dequeue on an empty queue.  Never a valid payload."""


def content_hash(value: Any) -> int:
    """Structural hash used to identify simulated memory states."""
    h = getattr(value, "content_hash", None)
    if h is not None:
        return h()
    return hash(value)


class Block:
    """One batch of operations stored in a tree node.

    Blocks are immutable once published, apart from the write-once
    ``super`` cell (unbounded variant) and ``response`` cell (leaf blocks of
    the bounded variant).  ``is_deq`` is only meaningful on leaf blocks.
    """

    __slots__ = (
        "sum_enq",
        "sum_deq",
        "end_left",
        "end_right",
        "size",
        "element",
        "is_deq",
        "index",
        "super",
        "response",
        "_hash",
    )

    def __init__(
        self,
        sum_enq: int,
        sum_deq: int,
        *,
        end_left: int = 0,
        end_right: int = 0,
        size: int = 0,
        element: Any = None,
        is_deq: bool = False,
        index: int = -1,
        super_key: Hashable = None,
        response_key: Hashable = None,
    ) -> None:
        self.sum_enq = sum_enq
        self.sum_deq = sum_deq
        self.end_left = end_left
        self.end_right = end_right
        self.size = size
        self.element = element
        self.is_deq = is_deq
        self.index = index
        self.super = AtomicCell(key=super_key, write_once=True) if super_key is not None else None
        self.response = (
            AtomicCell(key=response_key, write_once=True) if response_key is not None else None
        )
        self._hash: Optional[int] = None

    def end(self, left: bool) -> int:
        return self.end_left if left else self.end_right

    def content_hash(self) -> int:
        if self._hash is None:
            self._hash = hash(
                (
                    "blk",
                    self.sum_enq,
                    self.sum_deq,
                    self.end_left,
                    self.end_right,
                    self.size,
                    self.is_deq,
                    self.index,
                    content_hash(self.element) if self.element is not None else 0,
                )
            )
        return self._hash

    def __repr__(self) -> str:
        if self.element is not None or self.is_deq:
            what = "Deq" if self.is_deq else f"Enq({self.element!r})"
            return f"Block({what}, enq={self.sum_enq}, deq={self.sum_deq})"
        return (
            f"Block(enq={self.sum_enq}, deq={self.sum_deq}, "
            f"ends=({self.end_left},{self.end_right}), size={self.size})"
        )


def empty_block(*, with_super: Hashable = None, index: int = 0) -> Block:
    """The dummy block stored at index 0 of every node."""
    return Block(0, 0, index=index, super_key=with_super)


class BlockArray:
    """Unbounded array of write-once block slots.

    Slots live in chunks of geometrically growing size; chunk ``k`` holds
    ``BASE * 2**k`` slots and is installed on first use.  ``dict.setdefault``
    makes installation a single atomic step under CPython, so concurrent
    first touches agree on one chunk.  Address computation is local work and
    is not counted as a shared step.
    """

    BASE = 16
    __slots__ = ("node_id", "owner", "_chunks")

    def __init__(self, node_id: int, owner: Optional[int] = None) -> None:
        self.node_id = node_id
        self.owner = owner
        self._chunks: dict[int, list[AtomicCell]] = {}

    def slot(self, i: int) -> AtomicCell:
        j = i // self.BASE + 1
        k = j.bit_length() - 1
        chunk = self._chunks.get(k)
        if chunk is None:
            start = self.BASE * ((1 << k) - 1)
            fresh = [
                AtomicCell(key=("blk", self.node_id, start + n), write_once=True, owner=self.owner)
                for n in range(self.BASE << k)
            ]
            chunk = self._chunks.setdefault(k, fresh)
        return chunk[i - self.BASE * ((1 << k) - 1)]

    def get(self, i: int) -> Any:
        """Direct (unaccounted) read for hooks and offline inspection."""
        return self.slot(i).value

    def allocated(self) -> int:
        """Number of slots in installed chunks (a prefix of the index space)."""
        total = 0
        k = 0
        while k in self._chunks:
            total += self.BASE << k
            k += 1
        return total

    def installed(self) -> list[Block]:
        """All blocks from index 0 up to the first unset slot."""
        out = []
        i = 0
        while True:
            v = self.slot(i).value
            if v is UNSET:
                return out
            out.append(v)
            i += 1
