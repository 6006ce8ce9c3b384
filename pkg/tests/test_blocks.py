import pickle
import threading

from wfqueue.blocks import EMPTY, Block, BlockArray, content_hash, empty_block
from wfqueue.memory import UNSET


def test_empty_singleton_survives_pickling():
    assert repr(EMPTY) == "EMPTY"
    assert pickle.loads(pickle.dumps(EMPTY)) is EMPTY


def test_dummy_block():
    b = empty_block(with_super=("sup", 3, 0))
    assert (b.sum_enq, b.sum_deq, b.index) == (0, 0, 0)
    assert b.super.value is UNSET and b.super.write_once


def test_end_by_side():
    b = Block(3, 2, end_left=4, end_right=7)
    assert b.end(True) == 4 and b.end(False) == 7


def test_content_hash_ignores_identity():
    a = Block(1, 0, element="x", super_key=("sup", 1, 1))
    b = Block(1, 0, element="x", super_key=("sup", 9, 9))
    assert a.content_hash() == b.content_hash()
    assert content_hash(a) == content_hash(b)
    assert Block(1, 0, element="y").content_hash() != a.content_hash()


def test_block_array_grows_across_chunks():
    arr = BlockArray(4)
    for i in (0, 15, 16, 47, 48, 1000):
        cell = arr.slot(i)
        assert cell.key == ("blk", 4, i) and cell.write_once
        assert arr.slot(i) is cell
    # Chunks between 48 and 1000 were never touched: only the prefix counts.
    assert arr.allocated() == 16 + 32 + 64
    for i in range(1001):
        arr.slot(i)
    assert arr.allocated() > 1000


def test_installed_stops_at_first_gap():
    arr = BlockArray(1)
    for i in range(3):
        arr.slot(i).value = Block(i, 0)
    arr.slot(5).value = Block(5, 0)
    assert [b.sum_enq for b in arr.installed()] == [0, 1, 2]


def test_concurrent_first_touch_agrees_on_cell():
    arr = BlockArray(2)
    seen = []
    barrier = threading.Barrier(8)

    def touch():
        barrier.wait()
        seen.append(arr.slot(300))

    threads = [threading.Thread(target=touch) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(c is seen[0] for c in seen)
