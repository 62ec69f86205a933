"""Batch cutting rules and the solo ordering service."""

import random
import threading
import time

import pytest

from donorchain.codec import canonical_json_bytes
from donorchain.ledger import ReadWriteSet, Transaction
from donorchain.ordering import (
    AheadOfChainError,
    BatchPayload,
    EnvelopeTooLargeError,
    OrderingClient,
    OrderingConfig,
    OrderingMode,
    PendingQueue,
    QueueFullError,
    SoloOrderer,
    cut_batch,
)
from donorchain.ordering.batcher import envelope_size


def tx(tx_id, pad=0):
    return Transaction(
        tx_id=tx_id,
        channel="ch",
        chaincode_id="cc",
        method="m",
        args=["x" * pad],
        rwset=ReadWriteSet(),
    )


def fill(queue, txs):
    for t in txs:
        queue.push(t, envelope_size(t))


# -- cut rules ---------------------------------------------------------------


def test_count_rule_cuts_exactly_max():
    config = OrderingConfig(max_tx_per_block=5)
    q = PendingQueue()
    fill(q, [tx(f"t{i}") for i in range(12)])
    batch = cut_batch(q, config, timer_expired=False)
    assert [t.tx_id for t in batch.transactions] == [f"t{i}" for i in range(5)]
    assert len(q) == 7
    batch = cut_batch(q, config, timer_expired=False)
    assert len(batch.transactions) == 5
    assert cut_batch(q, config, timer_expired=False) is None  # 2 left, no rule fires


def test_byte_rule_takes_longest_fitting_prefix():
    unit = envelope_size(tx("bX", pad=100))  # same id length as the real ones
    config = OrderingConfig(max_tx_per_block=50, max_block_bytes=unit * 2 + 1)
    q = PendingQueue()
    fill(q, [tx("b1", pad=100), tx("b2", pad=100), tx("b3", pad=100)])
    batch = cut_batch(q, config, timer_expired=False)
    assert [t.tx_id for t in batch.transactions] == ["b1", "b2"]
    assert len(q) == 1


def test_byte_rule_always_takes_at_least_one():
    # a single envelope right at the limit still ships
    config = OrderingConfig(max_block_bytes=envelope_size(tx("big", pad=500)))
    q = PendingQueue()
    fill(q, [tx("big", pad=500), tx("next")])
    batch = cut_batch(q, config, timer_expired=False)
    assert [t.tx_id for t in batch.transactions] == ["big"]


def test_timeout_rule_flushes_everything():
    config = OrderingConfig(max_tx_per_block=50)
    q = PendingQueue()
    fill(q, [tx("t1"), tx("t2")])
    assert cut_batch(q, config, timer_expired=False) is None
    batch = cut_batch(q, config, timer_expired=True, now=12.5)
    assert [t.tx_id for t in batch.transactions] == ["t1", "t2"]
    assert batch.cut_time == 12.5
    assert len(q) == 0


def test_empty_queue_never_cuts():
    config = OrderingConfig()
    assert cut_batch(PendingQueue(), config, timer_expired=True) is None


def test_batch_payload_roundtrip():
    batch = BatchPayload([tx("a"), tx("b")], cut_time=3.0)
    clone = BatchPayload.from_dict(batch.to_dict())
    assert [t.tx_id for t in clone.transactions] == ["a", "b"]
    assert clone.cut_time == 3.0
    canonical_json_bytes(batch.to_dict())  # wire-encodable


def test_config_validation():
    with pytest.raises(ValueError):
        OrderingConfig(max_tx_per_block=0).validate()
    with pytest.raises(ValueError):
        OrderingConfig(batch_timeout=0).validate()
    with pytest.raises(ValueError):
        OrderingConfig(mode=OrderingMode.RAFT, cluster=("a", "b")).validate()  # even
    with pytest.raises(ValueError):
        OrderingConfig(mode=OrderingMode.RAFT, cluster=("a",)).validate()  # too few
    OrderingConfig(mode=OrderingMode.RAFT, cluster=("a", "b", "c")).validate()


# -- solo orderer ----------------------------------------------------------------


def test_solo_orders_all_submissions_fifo():
    config = OrderingConfig(max_tx_per_block=10, batch_timeout=0.05)
    with SoloOrderer(config) as orderer:
        for i in range(95):
            orderer.submit(tx(f"t{i}"))
        got = []
        seq = 0
        while len(got) < 95:
            batch = orderer.deliver(seq, timeout=2.0)
            assert batch.seq == seq
            got.extend(t.tx_id for t in batch.transactions)
            seq += 1
        assert got == [f"t{i}" for i in range(95)]


def test_solo_dedups_resubmitted_tx_ids():
    config = OrderingConfig(max_tx_per_block=100, batch_timeout=0.05)
    with SoloOrderer(config) as orderer:
        orderer.submit(tx("a"))
        orderer.submit(tx("b"))
        orderer.submit(tx("a"))  # client retry
        time.sleep(0.15)
        delivered = []
        seq = 0
        while True:
            try:
                batch = orderer.deliver(seq, timeout=0.2)
            except AheadOfChainError:
                break
            delivered.extend(t.tx_id for t in batch.transactions)
            seq += 1
        assert delivered == ["a", "b"]
        orderer.submit(tx("a"))  # still seen after delivery
        time.sleep(0.15)
        with pytest.raises(AheadOfChainError):
            orderer.deliver(seq, timeout=0.2)


def test_envelope_too_large_rejected_at_submit():
    config = OrderingConfig(max_block_bytes=256)
    with SoloOrderer(config) as orderer:
        with pytest.raises(EnvelopeTooLargeError):
            orderer.submit(tx("fat", pad=1000))
        orderer.submit(tx("ok"))


def test_queue_full_backpressure():
    config = OrderingConfig(max_tx_per_block=1000, batch_timeout=60.0)
    orderer = SoloOrderer(config, max_backlog=10)
    orderer.start()
    try:
        for i in range(10):
            orderer.submit(tx(f"t{i}"))
        with pytest.raises(QueueFullError):
            orderer.submit(tx("overflow"))
    finally:
        orderer.stop()


def test_deliver_blocks_until_batch_exists():
    config = OrderingConfig(batch_timeout=0.05)
    with SoloOrderer(config) as orderer:
        results = {}

        def waiter():
            results["batch"] = orderer.deliver(0, timeout=3.0)

        t = threading.Thread(target=waiter)
        t.start()
        time.sleep(0.05)
        orderer.submit(tx("late"))
        t.join(timeout=3.0)
        assert not t.is_alive()
        assert [x.tx_id for x in results["batch"].transactions] == ["late"]


def test_deliver_past_height_raises_after_timeout():
    with SoloOrderer(OrderingConfig(batch_timeout=0.02)) as orderer:
        with pytest.raises(AheadOfChainError):
            orderer.deliver(7, timeout=0.05)


def test_ordering_client_clears_outbox_on_delivery():
    config = OrderingConfig(batch_timeout=0.05)
    with SoloOrderer(config) as orderer:
        client = OrderingClient(orderer, submit_timeout=2.0, resubmit_interval=0.05)
        client.start()
        try:
            client.submit(tx("t1"))
            batch = client.deliver(0, timeout=2.0)
            assert [t.tx_id for t in batch.transactions] == ["t1"]
            with client._lock:
                assert client._outbox == {}
        finally:
            client.stop()


def test_ordering_client_resubmits_until_observed():
    # stop/start the orderer around a submit to force the retry path
    config = OrderingConfig(batch_timeout=0.05)
    orderer = SoloOrderer(config)
    client = OrderingClient(orderer, submit_timeout=3.0, resubmit_interval=0.05)
    client.start()
    orderer.start()
    try:
        client.submit(tx("keeper"))
        # resubmission of the same id later is harmless (dedup downstream)
        client.submit(tx("keeper"))
        batch = client.deliver(0, timeout=2.0)
        assert [t.tx_id for t in batch.transactions] == ["keeper"]
    finally:
        client.stop()
        orderer.stop()


def test_random_workload_partitions_into_batches_in_order():
    rng = random.Random(51)
    config = OrderingConfig(max_tx_per_block=7, batch_timeout=0.03)
    with SoloOrderer(config) as orderer:
        ids = [f"t{i}" for i in range(200)]
        for tx_id in ids:
            orderer.submit(tx(tx_id, pad=rng.randrange(0, 50)))
            if rng.random() < 0.1:
                time.sleep(0.002)
        got = []
        seq = 0
        while len(got) < len(ids):
            batch = orderer.deliver(seq, timeout=2.0)
            assert 1 <= len(batch.transactions) <= 7
            got.extend(t.tx_id for t in batch.transactions)
            seq += 1
        assert got == ids
