import random
import threading
from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfqueue.blocks import EMPTY
from wfqueue.bounded import BoundedQueue, default_gc_period
from wfqueue.checker import check, replay
from wfqueue.harness import RandomSchedule, SimConfig, make_programs, run_schedule


def test_default_gc_period():
    assert [default_gc_period(p) for p in (1, 2, 3, 4, 8)] == [1, 4, 18, 32, 192]


def test_gc_period_must_be_positive():
    with pytest.raises(ValueError):
        BoundedQueue(2, gc_period=0)


@settings(max_examples=100, deadline=None)
@given(
    st.integers(1, 3),
    st.integers(1, 5),
    st.lists(st.tuples(st.integers(0, 2), st.booleans()), max_size=80),
)
def test_sequential_matches_fifo(p, gc, script):
    q = BoundedQueue(p, gc_period=gc)
    oracle = deque()
    for n, (pid, is_enq) in enumerate(script):
        h = q.handle(pid % p)
        if is_enq:
            h.enqueue(n)
            oracle.append(n)
        else:
            assert h.dequeue() == (oracle.popleft() if oracle else EMPTY)


def test_collection_keeps_versions_small():
    q = BoundedQueue(2, gc_period=2)
    h0, h1 = q.handle(0), q.handle(1)
    for k in range(500):
        h0.enqueue(k)
        assert h1.dequeue() == k
    # q_max is 1 here, so every node holds a handful of blocks at most.
    for node in q.nodes[1:]:
        assert len(node.blocks.value) <= 2 * 1 + 4 * 2 + 1 + 2
    assert q.root.blocks.value.max_block.index >= 500


def test_versions_grow_with_queue_size_only():
    q = BoundedQueue(1, gc_period=1)
    h = q.handle(0)
    for k in range(300):
        h.enqueue(k)
    root = q.root.blocks.value
    assert len(root) <= 2 * 300 + 4 + 1 + 1
    for k in range(300):
        assert h.dequeue() == k
    # Collection follows the newest enqueue some dequeue has taken, so the
    # drained blocks go once an element enqueued after them is dequeued.
    h.enqueue("x")
    assert h.dequeue() == "x"
    h.enqueue("y")
    assert len(q.root.blocks.value) <= 4


def test_last_is_monotone_per_process():
    q = BoundedQueue(2, gc_period=1)
    h = q.handle(0)
    seen = []
    for k in range(20):
        h.enqueue(k)
        h.dequeue()
        seen.append(q.last[0].value)
    assert seen == sorted(seen) and seen[-1] > 0


def test_early_exits_answer_from_response_cell():
    exits = 0
    for seed in range(300):
        r = run_schedule(
            make_programs(4, 3, 0.5, seed), RandomSchedule(seed, 0.5), "bounded", SimConfig(gc_period=2)
        )
        assert r.report.ok, str(r.report)
        mon = r.simulation.monitor
        responses = replay(mon.linearization().ops).responses
        events = r.history.by_id()
        for pid, index, is_deq in mon.early_exits:
            exits += 1
            if is_deq:
                assert events[(pid, index)].response == responses[(pid, index)]
    assert exits > 0


def test_threads_bounded_history_linearizable():
    q = BoundedQueue(4, gc_period=3)
    out = [[] for _ in range(4)]

    def worker(pid):
        rng = random.Random(pid)
        h = q.handle(pid)
        for k in range(120):
            if rng.random() < 0.5:
                h.enqueue((pid, k))
            else:
                out[pid].append(h.dequeue())

    threads = [threading.Thread(target=worker, args=(pid,)) for pid in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    got = [x for xs in out for x in xs if x is not EMPTY]
    assert len(got) == len(set(got))
    for pid in range(4):
        # a consumer sees any one producer's elements in order
        for xs in out:
            ks = [k for p, k in (x for x in xs if x is not EMPTY) if p == pid]
            assert ks == sorted(ks)


def test_bounded_simulated_histories_accepted():
    for seed in range(100):
        r = run_schedule(
            make_programs(3, 4, 0.6, seed), RandomSchedule(seed, 0.7), "bounded", SimConfig(gc_period=1)
        )
        assert r.report.ok, str(r.report)
        assert check(r.history)
