"""Batch cutting: turn a pending transaction queue into block payloads.

A batch is cut when the queue reaches the count limit, the byte limit,
or the batch timer fires with anything pending. Arrival order is always
preserved.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..codec import canonical_json_bytes
from ..ledger import Transaction


class OrderingMode(str, Enum):
    SOLO = "solo"
    RAFT = "raft"


@dataclass
class OrderingConfig:
    max_tx_per_block: int = 50
    max_block_bytes: int = 1 << 20
    batch_timeout: float = 0.5  # seconds
    mode: OrderingMode = OrderingMode.SOLO
    cluster: tuple[str, ...] = ()
    # live-cluster timing; election timeout is randomized per node in
    # [election_timeout, 2 * election_timeout]
    election_timeout: float = 0.15
    heartbeat_interval: float = 0.05

    def validate(self) -> None:
        if self.max_tx_per_block < 1:
            raise ValueError("max_tx_per_block must be >= 1")
        if self.max_block_bytes < 1:
            raise ValueError("max_block_bytes must be >= 1")
        if self.batch_timeout <= 0:
            raise ValueError("batch_timeout must be > 0")
        if self.mode is OrderingMode.RAFT:
            if len(self.cluster) < 3 or len(self.cluster) % 2 == 0:
                raise ValueError("raft cluster size must be odd and >= 3")


@dataclass
class BatchPayload:
    transactions: list[Transaction]
    cut_time: float = 0.0
    seq: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "transactions": [tx.to_dict() for tx in self.transactions],
            "cut_time": self.cut_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BatchPayload":
        return cls(
            transactions=[Transaction.from_dict(t) for t in d["transactions"]],
            cut_time=d.get("cut_time", 0.0),
        )


def envelope_size(tx: Transaction) -> int:
    return len(canonical_json_bytes(tx.to_dict()))


@dataclass
class PendingQueue:
    """FIFO of (transaction, size) with a running byte total."""

    items: deque = field(default_factory=deque)
    total_bytes: int = 0

    def __len__(self) -> int:
        return len(self.items)

    def push(self, tx: Transaction, size: Optional[int] = None) -> None:
        size = envelope_size(tx) if size is None else size
        self.items.append((tx, size))
        self.total_bytes += size

    def _pop_front(self, n: int) -> list[Transaction]:
        out = []
        for _ in range(n):
            tx, size = self.items.popleft()
            self.total_bytes -= size
            out.append(tx)
        return out


def cut_batch(
    pending: PendingQueue, config: OrderingConfig, timer_expired: bool, now: float = 0.0
) -> Optional[BatchPayload]:
    """Cut by count, by bytes, or on timeout; None when no rule fires."""
    if not pending.items:
        return None
    if len(pending) >= config.max_tx_per_block:
        return BatchPayload(pending._pop_front(config.max_tx_per_block), cut_time=now)
    if pending.total_bytes >= config.max_block_bytes:
        # longest prefix within the byte limit; a lone oversized envelope is
        # rejected at submit, so at least one tx always fits
        taken = 0
        size_sum = 0
        for tx, size in pending.items:
            if taken > 0 and size_sum + size > config.max_block_bytes:
                break
            size_sum += size
            taken += 1
            if taken >= config.max_tx_per_block:
                break
        return BatchPayload(pending._pop_front(taken), cut_time=now)
    if timer_expired:
        return BatchPayload(pending._pop_front(len(pending)), cut_time=now)
    return None
