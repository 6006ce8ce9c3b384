"""White-box construction of the four-process example tree.

Leaf appends are done without propagation; refreshes are then run node by
node in rounds so that the root ends up with exactly the five blocks

    Enq(a) Enq(e) Deq2 | Enq(b) Deq4 Deq5 | Enq(d) Enq(f) Enq(h) Deq1 | Enq(c) Deq3 | Enq(g)

while process 4's last dequeue (Deq6) only reaches its parent.
"""

from __future__ import annotations

from wfqueue.blocks import Block
from wfqueue.history import DEQ, ENQ
from wfqueue.ordering_tree import OrderingTreeQueue

# Each round: leaf appends (process, kind, element), then the nodes to refresh.
ROUNDS = [
    ([(0, ENQ, "a"), (1, ENQ, "e"), (2, DEQ, None)], [2, 3, 1]),
    ([(0, ENQ, "b"), (1, DEQ, None), (2, DEQ, None)], [2, 3, 1]),
    ([(0, ENQ, "d"), (1, ENQ, "f"), (2, ENQ, "h"), (3, DEQ, None)], [2, 3, 1]),
    ([(2, ENQ, "c"), (3, DEQ, None)], [3, 1]),
    ([(3, ENQ, "g")], [3, 1]),
    ([(3, DEQ, None)], [3]),
]

# Dequeue labels used in the example, keyed by (process, leaf block index).
DEQ_LABELS = {
    (3, 1): "Deq1",
    (2, 1): "Deq2",
    (3, 2): "Deq3",
    (1, 2): "Deq4",
    (2, 2): "Deq5",
    (3, 4): "Deq6",
}

EXPECTED_LINEARIZATION = (
    "Enq(a) Enq(e) Deq2 | Enq(b) Deq4 Deq5 | Enq(d) Enq(f) Enq(h) Deq1 | Enq(c) Deq3 | Enq(g)"
)
EXPECTED_SIZES = [1, 0, 2, 2, 3]
EXPECTED_RESPONSES = {"Deq2": "a", "Deq4": "e", "Deq5": "b", "Deq1": "d", "Deq3": "f"}


def leaf_append(q: OrderingTreeQueue, pid: int, kind: str, element: object) -> int:
    """Append one operation to ``pid``'s leaf without propagating it."""
    h = q.handle(pid)
    leaf, i = h.leaf, h.cursor
    prev = leaf.blocks.get(i - 1)
    is_deq = kind == DEQ
    leaf.blocks.slot(i).value = Block(
        prev.sum_enq + (not is_deq),
        prev.sum_deq + is_deq,
        element=element,
        is_deq=is_deq,
        super_key=("sup", leaf.id, i),
    )
    h.cursor = i + 1
    q.memory.drive(pid, q.advance(leaf, i))
    return i


def build() -> OrderingTreeQueue:
    q = OrderingTreeQueue(4)
    for appends, refreshes in ROUNDS:
        for pid, kind, element in appends:
            leaf_append(q, pid, kind, element)
        for node_id in refreshes:
            assert q.memory.drive(0, q.refresh(q.nodes[node_id]))
    return q


def label(op) -> str:
    return f"Enq({op.arg})" if op.kind == ENQ else DEQ_LABELS[op.op_id]


def render(lin) -> str:
    return " | ".join(" ".join(label(op) for op in blk) for blk in lin.blocks())
