"""Per-channel ledger: hash-chained block store plus MVCC world state.

The block store is an append-only chain; each block header is hashed over
a fixed 72-byte layout (8-byte big-endian number, 32-byte prev_hash,
32-byte data_hash) so any standalone SHA-256 tool can recompute it. World
state holds the latest value per key, tagged with the (block, tx_index)
version that wrote it; commit-time validation rejects transactions whose
read versions went stale (optimistic concurrency, Fabric style).
"""

import logging
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Callable, Iterable, Optional, Protocol

from .codec import ZERO_HASH, canonical_json_bytes, read_frames, sha256, write_frame
from .identity import Signature

logger = logging.getLogger(__name__)


class LedgerError(Exception):
    pass


class ChainGapError(LedgerError):
    pass


class HashMismatchError(LedgerError):
    pass


# (block_number, tx_index); tuples order lexicographically, (0, 0) is genesis.
StateVersion = tuple[int, int]


def version_to_wire(v: Optional[StateVersion]) -> Optional[list[int]]:
    return None if v is None else [v[0], v[1]]


def version_from_wire(v) -> Optional[StateVersion]:
    return None if v is None else (int(v[0]), int(v[1]))


@dataclass(frozen=True)
class VersionedValue:
    value: bytes
    version: StateVersion
    deleted: bool = False


@dataclass
class ReadWriteSet:
    """Endorsement output: reads with observed versions, writes with new values.

    A read version of None means the key was absent (never written) at
    simulation time; a write value of None is a delete.
    """

    reads: list[tuple[str, Optional[StateVersion]]] = field(default_factory=list)
    writes: list[tuple[str, Optional[bytes]]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "reads": [[k, version_to_wire(v)] for k, v in sorted(self.reads)],
            "writes": [
                [k, None if v is None else v.hex()]
                for k, v in sorted(self.writes, key=lambda w: w[0])
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReadWriteSet":
        return cls(
            reads=[(k, version_from_wire(v)) for k, v in d["reads"]],
            writes=[(k, None if v is None else bytes.fromhex(v)) for k, v in d["writes"]],
        )


@dataclass(frozen=True)
class Endorsement:
    org_id: str
    endorser_id: str
    signature: Signature

    def to_dict(self) -> dict:
        return {"org": self.org_id, "endorser": self.endorser_id, "signature": self.signature.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Endorsement":
        return cls(d["org"], d["endorser"], Signature.from_dict(d["signature"]))


@dataclass
class Transaction:
    tx_id: str
    channel: str
    chaincode_id: str
    method: str
    args: list[str]
    rwset: ReadWriteSet
    event: Optional[dict] = None  # {"name": ..., "payload": {...}}
    endorsements: list[Endorsement] = field(default_factory=list)
    client_signature: Optional[Signature] = None
    submitter: str = ""
    timestamp: float = 0.0  # client clock, informational

    def endorsed_payload(self) -> bytes:
        """Bytes every endorser signs: the rwset plus any chaincode event."""
        return canonical_json_bytes({"rwset": self.rwset.to_dict(), "event": self.event})

    def signing_payload(self) -> bytes:
        """Bytes the submitting client signs."""
        return canonical_json_bytes(
            {
                "tx_id": self.tx_id,
                "channel": self.channel,
                "chaincode_id": self.chaincode_id,
                "method": self.method,
                "args": self.args,
                "rwset": self.rwset.to_dict(),
                "event": self.event,
                "submitter": self.submitter,
            }
        )

    def to_dict(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "channel": self.channel,
            "chaincode_id": self.chaincode_id,
            "method": self.method,
            "args": self.args,
            "rwset": self.rwset.to_dict(),
            "event": self.event,
            "endorsements": [e.to_dict() for e in self.endorsements],
            "client_signature": None if self.client_signature is None else self.client_signature.to_dict(),
            "submitter": self.submitter,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transaction":
        return cls(
            tx_id=d["tx_id"],
            channel=d["channel"],
            chaincode_id=d["chaincode_id"],
            method=d["method"],
            args=list(d["args"]),
            rwset=ReadWriteSet.from_dict(d["rwset"]),
            event=d.get("event"),
            endorsements=[Endorsement.from_dict(e) for e in d.get("endorsements", [])],
            client_signature=(
                Signature.from_dict(d["client_signature"]) if d.get("client_signature") else None
            ),
            submitter=d.get("submitter", ""),
            timestamp=d.get("timestamp", 0.0),
        )


class TxFlag(str, Enum):
    VALID = "valid"
    MVCC_CONFLICT = "mvcc_conflict"
    POLICY_FAILURE = "policy_failure"
    BAD_SIGNATURE = "bad_signature"


def compute_block_hash(number: int, prev_hash: bytes, data_hash: bytes) -> bytes:
    """SHA-256 over the fixed-width header: number (8B BE) | prev_hash | data_hash."""
    if len(prev_hash) != 32 or len(data_hash) != 32:
        raise ValueError("prev_hash and data_hash must be 32 bytes")
    return sha256(number.to_bytes(8, "big") + prev_hash + data_hash)


def compute_data_hash(transactions: Iterable[Transaction]) -> bytes:
    return sha256(canonical_json_bytes([tx.to_dict() for tx in transactions]))


@dataclass
class Block:
    number: int
    prev_hash: bytes
    data_hash: bytes
    transactions: list[Transaction]
    timestamp: float = 0.0  # orderer clock at batch cut; informational, not hashed
    validation_flags: Optional[list[TxFlag]] = None

    def header_hash(self) -> bytes:
        return compute_block_hash(self.number, self.prev_hash, self.data_hash)

    def to_dict(self) -> dict:
        return {
            "number": self.number,
            "prev_hash": self.prev_hash.hex(),
            "data_hash": self.data_hash.hex(),
            "timestamp": self.timestamp,
            "transactions": [tx.to_dict() for tx in self.transactions],
            "validation_flags": (
                None
                if self.validation_flags is None
                else [f.value for f in self.validation_flags]
            ),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        return cls(
            number=d["number"],
            prev_hash=bytes.fromhex(d["prev_hash"]),
            data_hash=bytes.fromhex(d["data_hash"]),
            transactions=[Transaction.from_dict(t) for t in d["transactions"]],
            timestamp=d.get("timestamp", 0.0),
            validation_flags=(
                None
                if d.get("validation_flags") is None
                else [TxFlag(f) for f in d["validation_flags"]]
            ),
        )


def make_block(number: int, prev_hash: bytes, transactions: list[Transaction], timestamp: float = 0.0) -> Block:
    return Block(
        number=number,
        prev_hash=prev_hash,
        data_hash=compute_data_hash(transactions),
        transactions=transactions,
        timestamp=timestamp,
    )


class BlockStore:
    """Append-only chain of blocks, optionally persisted as length-prefixed
    canonical JSON records."""

    def __init__(self, path: str | Path | None = None):
        self._blocks: list[Block] = []
        self._lock = threading.RLock()
        self._path = Path(path) if path is not None else None
        self._fh: Optional[BinaryIO] = None
        if self._path is not None:
            if self._path.exists():
                with self._path.open("rb") as fh:
                    for payload in read_frames(fh):
                        import json as _json

                        self._blocks.append(Block.from_dict(_json.loads(payload)))
            self._fh = self._path.open("ab")

    @property
    def height(self) -> int:
        return len(self._blocks)

    def tip_hash(self) -> bytes:
        with self._lock:
            if not self._blocks:
                return ZERO_HASH
            return self._blocks[-1].header_hash()

    def get(self, number: int) -> Block:
        return self._blocks[number]

    def blocks(self) -> list[Block]:
        with self._lock:
            return list(self._blocks)

    def append_block(self, block: Block) -> None:
        with self._lock:
            if block.number != self.height:
                raise ChainGapError(f"expected block {self.height}, got {block.number}")
            expected_prev = self.tip_hash()
            if block.prev_hash != expected_prev:
                raise HashMismatchError(
                    f"block {block.number} prev_hash does not match chain tip"
                )
            self._blocks.append(block)
            if self._fh is not None:
                write_frame(self._fh, canonical_json_bytes(block.to_dict()))
                self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def verify_chain(store: BlockStore) -> Optional[int]:
    """Walk the chain recomputing hashes; return the first bad block number,
    or None when intact."""
    prev = ZERO_HASH
    for block in store.blocks():
        if block.prev_hash != prev:
            return block.number
        if compute_data_hash(block.transactions) != block.data_hash:
            return block.number
        prev = block.header_hash()
    return None


class StateSnapshot:
    """Immutable point-in-time view used by endorsement simulations."""

    def __init__(self, entries: dict[str, VersionedValue], height: int):
        self._entries = entries
        self.height = height

    def get(self, key: str) -> tuple[Optional[bytes], Optional[StateVersion]]:
        """Value (None when absent or tombstoned) plus the committed version
        (tombstones keep theirs)."""
        vv = self._entries.get(key)
        if vv is None:
            return None, None
        if vv.deleted:
            return None, vv.version
        return vv.value, vv.version

    def scan_prefix(self, prefix: str) -> list[tuple[str, bytes, StateVersion]]:
        out = []
        for key in sorted(self._entries):
            if not key.startswith(prefix):
                continue
            vv = self._entries[key]
            if not vv.deleted:
                out.append((key, vv.value, vv.version))
        return out


class WorldState:
    """Latest-value view of a channel, derivable by replaying its chain.

    Mutations happen only from the commit path (single writer); readers take
    snapshots. With a path set, every applied write is appended to a
    write-ahead log before the in-memory map changes.
    """

    def __init__(self, path: str | Path | None = None):
        self._entries: dict[str, VersionedValue] = {}
        self._lock = threading.RLock()
        self._height = 0
        self._path = Path(path) if path is not None else None
        self._fh: Optional[BinaryIO] = None
        if self._path is not None:
            if self._path.exists():
                import json as _json

                with self._path.open("rb") as fh:
                    for payload in read_frames(fh):
                        rec = _json.loads(payload)
                        self._replay(rec)
            self._fh = self._path.open("ab")

    def _replay(self, rec: dict) -> None:
        version = (rec["version"][0], rec["version"][1])
        if rec["delete"]:
            self._entries[rec["key"]] = VersionedValue(b"", version, deleted=True)
        else:
            self._entries[rec["key"]] = VersionedValue(bytes.fromhex(rec["value"]), version)
        self._height = max(self._height, version[0] + 1)

    @property
    def height(self) -> int:
        return self._height

    def snapshot(self) -> StateSnapshot:
        with self._lock:
            return StateSnapshot(dict(self._entries), self._height)

    def get_state(self, key: str) -> Optional[bytes]:
        with self._lock:
            vv = self._entries.get(key)
            if vv is None or vv.deleted:
                return None
            return vv.value

    def get_version(self, key: str) -> Optional[StateVersion]:
        with self._lock:
            vv = self._entries.get(key)
            return None if vv is None else vv.version

    def apply_write(self, key: str, value: Optional[bytes], version: StateVersion) -> None:
        with self._lock:
            if self._fh is not None:
                rec = {
                    "key": key,
                    "value": None if value is None else value.hex(),
                    "version": list(version),
                    "delete": value is None,
                }
                write_frame(self._fh, canonical_json_bytes(rec))
                self._fh.flush()
            if value is None:
                self._entries[key] = VersionedValue(b"", version, deleted=True)
            else:
                self._entries[key] = VersionedValue(value, version)

    def note_block(self, block_number: int) -> None:
        with self._lock:
            self._height = max(self._height, block_number + 1)

    def export_bytes(self) -> bytes:
        """Canonical sorted dump of every entry, tombstones included; used for
        the cross-peer determinism check and CLI export."""
        with self._lock:
            doc = {
                key: {
                    "value": None if vv.deleted else vv.value.hex(),
                    "version": list(vv.version),
                    "deleted": vv.deleted,
                }
                for key, vv in self._entries.items()
            }
        return canonical_json_bytes(doc)

    def keys(self) -> list[str]:
        with self._lock:
            return sorted(k for k, vv in self._entries.items() if not vv.deleted)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def mvcc_validate(world: WorldState, tx: Transaction, earlier_writes: set[str]) -> TxFlag:
    """Valid iff every read version still matches the committed version and no
    read key was written by an earlier valid tx of the same block."""
    for key, observed in tx.rwset.reads:
        if key in earlier_writes:
            return TxFlag.MVCC_CONFLICT
        if world.get_version(key) != observed:
            return TxFlag.MVCC_CONFLICT
    return TxFlag.VALID


class CommitContext(Protocol):
    """Hooks the network layer supplies so commit can check signatures and
    endorsement policy without the ledger knowing about channels."""

    def verify_client_signature(self, tx: Transaction) -> bool: ...

    def verify_endorsements(self, tx: Transaction) -> bool: ...

    def endorsement_policy_satisfied(self, tx: Transaction) -> bool: ...


class PermissiveCommitContext:
    """Accepts everything; for ledger-level tests and replay of pre-validated chains."""

    def verify_client_signature(self, tx: Transaction) -> bool:
        return True

    def verify_endorsements(self, tx: Transaction) -> bool:
        return True

    def endorsement_policy_satisfied(self, tx: Transaction) -> bool:
        return True


def commit_block(
    world: WorldState,
    store: BlockStore,
    block: Block,
    ctx: CommitContext | None = None,
) -> list[TxFlag]:
    """Validate and commit a block: per tx, check signatures, endorsement
    policy, then MVCC; apply writes of valid transactions at version
    (block.number, tx_index). The stored block carries the flag vector."""
    ctx = ctx or PermissiveCommitContext()
    flags: list[TxFlag] = []
    valid_writes: set[str] = set()
    staged: list[tuple[int, Transaction]] = []
    for idx, tx in enumerate(block.transactions):
        if not ctx.verify_client_signature(tx) or not ctx.verify_endorsements(tx):
            flags.append(TxFlag.BAD_SIGNATURE)
            continue
        if not ctx.endorsement_policy_satisfied(tx):
            flags.append(TxFlag.POLICY_FAILURE)
            continue
        flag = mvcc_validate(world, tx, valid_writes)
        flags.append(flag)
        if flag is TxFlag.VALID:
            staged.append((idx, tx))
            valid_writes.update(k for k, _ in tx.rwset.writes)
    committed = replace(block, validation_flags=flags)
    store.append_block(committed)  # raises ChainGap/HashMismatch before state changes
    for idx, tx in staged:
        for key, value in tx.rwset.writes:
            world.apply_write(key, value, (block.number, idx))
    world.note_block(block.number)
    return flags


@dataclass(frozen=True)
class HistoryEntry:
    tx_id: str
    block_number: int
    value: Optional[bytes]  # None records a delete

    @property
    def is_delete(self) -> bool:
        return self.value is None


def get_history(store: BlockStore, key: str) -> list[HistoryEntry]:
    """All valid writes to key in chain order; invalidated txs are excluded."""
    out: list[HistoryEntry] = []
    for block in store.blocks():
        flags = block.validation_flags or []
        for idx, tx in enumerate(block.transactions):
            if idx >= len(flags) or flags[idx] is not TxFlag.VALID:
                continue
            for wkey, value in tx.rwset.writes:
                if wkey == key:
                    out.append(HistoryEntry(tx.tx_id, block.number, value))
    return out


def replay_chain(
    blocks: Iterable[Block],
    store: BlockStore,
    world: WorldState,
    ctx: CommitContext | None = None,
) -> None:
    """Rebuild a ledger by re-committing a block sequence (flags recomputed)."""
    for block in blocks:
        bare = replace(block, validation_flags=None)
        commit_block(world, store, bare, ctx)
