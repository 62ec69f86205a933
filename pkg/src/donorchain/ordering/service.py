"""Ordering service runtimes.

Two implementations of the same contract: a single-process SoloOrderer for
development topologies and a RaftOrderingCluster of event-loop nodes for
crash-tolerant ordering. Both deliver an identical, gap-free sequence of
batches; duplicates from client resubmission are dropped at apply time by
tx_id, which is deterministic because every node applies the same log.

`OrderingClient` wraps a service with leader redirect handling and an
outbox that resubmits transactions until they are observed in the
delivered stream, giving exactly-once delivery over at-least-once
submission.
"""

import logging
import queue
import random
import threading
import time
from typing import Optional, Protocol

from ..ledger import Transaction
from .batcher import BatchPayload, OrderingConfig, OrderingMode, PendingQueue, cut_batch, envelope_size
from .raft import (
    ElectionTimeout,
    HeartbeatTick,
    Message,
    Propose,
    RaftNode,
    RaftRole,
    StepResult,
)

logger = logging.getLogger(__name__)


class NotLeaderError(Exception):
    """Submitted to a follower; `hint` names the leader when known."""

    def __init__(self, hint: Optional[str] = None):
        super().__init__(f"not the leader (hint: {hint})")
        self.hint = hint


class QueueFullError(Exception):
    pass


class EnvelopeTooLargeError(Exception):
    pass


class OrdererUnavailableError(Exception):
    pass


class AheadOfChainError(Exception):
    """Asked for a batch sequence the service has not delivered yet."""

    def __init__(self, requested: int, height: int):
        super().__init__(f"batch {requested} not delivered yet (height {height})")
        self.requested = requested
        self.height = height


class DeliveredLog:
    """Append-only sequence of batches with blocking reads."""

    def __init__(self):
        self._batches: list[BatchPayload] = []
        self._cond = threading.Condition()

    @property
    def height(self) -> int:
        with self._cond:
            return len(self._batches)

    def append(self, batch: BatchPayload) -> None:
        with self._cond:
            batch.seq = len(self._batches)
            self._batches.append(batch)
            self._cond.notify_all()

    def get(self, seq: int, timeout: Optional[float] = None) -> BatchPayload:
        if seq < 0:
            raise ValueError("batch sequence must be >= 0")
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while seq >= len(self._batches):
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise AheadOfChainError(seq, len(self._batches))
                self._cond.wait(remaining)
            return self._batches[seq]


class OrderingService(Protocol):
    def start(self) -> None: ...

    def stop(self) -> None: ...

    def submit(self, tx: Transaction) -> None: ...

    def deliver(self, seq: int, timeout: Optional[float] = None) -> BatchPayload: ...

    @property
    def height(self) -> int: ...


def _dedup(batch: BatchPayload, seen: set[str]) -> Optional[BatchPayload]:
    # sequential so that duplicates inside one batch also collapse
    fresh = []
    for tx in batch.transactions:
        if tx.tx_id in seen:
            continue
        seen.add(tx.tx_id)
        fresh.append(tx)
    if not fresh:
        return None
    return BatchPayload(fresh, cut_time=batch.cut_time)


class SoloOrderer:
    """Single-node ordering: one queue, one cutter thread."""

    def __init__(self, config: Optional[OrderingConfig] = None, max_backlog: int = 100_000):
        self.config = config or OrderingConfig()
        self.config.validate()
        self.max_backlog = max_backlog
        self.delivered = DeliveredLog()
        self._pending = PendingQueue()
        self._seen: set[str] = set()
        self._batch_deadline: Optional[float] = None
        self._cond = threading.Condition()
        self._running = False
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        if self._running:
            return
        self._running = True
        self._thread = threading.Thread(target=self._run, name="solo-orderer", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        with self._cond:
            self._running = False
            self._cond.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    def __enter__(self) -> "SoloOrderer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def height(self) -> int:
        return self.delivered.height

    def submit(self, tx: Transaction) -> None:
        size = envelope_size(tx)
        if size > self.config.max_block_bytes:
            raise EnvelopeTooLargeError(
                f"envelope is {size} bytes, limit {self.config.max_block_bytes}"
            )
        with self._cond:
            if not self._running:
                raise OrdererUnavailableError("orderer is stopped")
            if len(self._pending) >= self.max_backlog:
                raise QueueFullError(f"backlog at {self.max_backlog}")
            self._pending.push(tx, size)
            if self._batch_deadline is None:
                self._batch_deadline = time.monotonic() + self.config.batch_timeout
            self._cond.notify_all()

    def deliver(self, seq: int, timeout: Optional[float] = None) -> BatchPayload:
        return self.delivered.get(seq, timeout)

    def _run(self) -> None:
        while True:
            cut: Optional[BatchPayload] = None
            with self._cond:
                if not self._running:
                    return
                now = time.monotonic()
                timer_expired = self._batch_deadline is not None and now >= self._batch_deadline
                cut = cut_batch(self._pending, self.config, timer_expired, now)
                if cut is not None:
                    if self._pending.items:
                        self._batch_deadline = now + self.config.batch_timeout
                    else:
                        self._batch_deadline = None
                else:
                    wait = None
                    if self._batch_deadline is not None:
                        wait = max(self._batch_deadline - now, 0.0)
                    self._cond.wait(timeout=wait if wait is not None else 1.0)
            if cut is not None:
                deduped = _dedup(cut, self._seen)
                if deduped is not None:
                    self.delivered.append(deduped)


class _InProcTransport:
    """Routes raft messages between live nodes in the same process."""

    def __init__(self):
        self._nodes: dict[str, "RaftOrdererNode"] = {}
        self._dead: set[str] = set()
        self._lock = threading.Lock()

    def register(self, node: "RaftOrdererNode") -> None:
        with self._lock:
            self._nodes[node.node_id] = node

    def mark_dead(self, node_id: str) -> None:
        with self._lock:
            self._dead.add(node_id)

    def send(self, src: str, dest: str, msg: Message) -> None:
        with self._lock:
            if src in self._dead or dest in self._dead:
                return
            node = self._nodes.get(dest)
        if node is not None:
            node.enqueue_message(msg)


class RaftOrdererNode:
    """One orderer: a raft state machine driven by a single event-loop thread.

    The loop owns all raft state; submit() and the transport only touch the
    inbox and the pending queue under the node lock. Committed raft entries
    are batches; applying them (dedup by tx_id, then sequence assignment)
    is deterministic, so every node's delivered log is an identical prefix.
    """

    def __init__(
        self,
        node_id: str,
        cluster: list[str],
        config: OrderingConfig,
        transport: _InProcTransport,
        rng: random.Random,
        max_backlog: int = 100_000,
    ):
        self.node_id = node_id
        self.config = config
        self.max_backlog = max_backlog
        self.raft = RaftNode(node_id, cluster)
        self.delivered = DeliveredLog()
        self._transport = transport
        self._rng = rng
        self._inbox: "queue.Queue[tuple]" = queue.Queue()
        self._pending = PendingQueue()
        self._seen: set[str] = set()
        self._lock = threading.Lock()
        self._alive = False
        self._thread: Optional[threading.Thread] = None
        self._election_deadline = 0.0
        self._heartbeat_deadline = 0.0
        self._batch_deadline: Optional[float] = None
        transport.register(self)

    # -- called from other threads ------------------------------------------

    def enqueue_message(self, msg: Message) -> None:
        self._inbox.put(("msg", msg))

    def submit(self, tx: Transaction) -> None:
        size = envelope_size(tx)
        if size > self.config.max_block_bytes:
            raise EnvelopeTooLargeError(
                f"envelope is {size} bytes, limit {self.config.max_block_bytes}"
            )
        with self._lock:
            if not self._alive:
                raise OrdererUnavailableError(f"{self.node_id} is down")
            if self.raft.role is not RaftRole.LEADER:
                raise NotLeaderError(self.raft.leader_id)
            if len(self._pending) >= self.max_backlog:
                raise QueueFullError(f"backlog at {self.max_backlog}")
            self._pending.push(tx, size)
            if self._batch_deadline is None:
                self._batch_deadline = time.monotonic() + self.config.batch_timeout
        self._inbox.put(("wake",))

    @property
    def alive(self) -> bool:
        with self._lock:
            return self._alive

    @property
    def role(self) -> RaftRole:
        with self._lock:
            return self.raft.role

    @property
    def leader_hint(self) -> Optional[str]:
        with self._lock:
            return self.raft.leader_id

    def start(self) -> None:
        with self._lock:
            if self._alive:
                return
            self._alive = True
            self._reset_election_deadline()
        self._thread = threading.Thread(
            target=self._run, name=f"raft-{self.node_id}", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        with self._lock:
            self._alive = False
        self._inbox.put(("wake",))
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    # -- event loop -----------------------------------------------------------

    def _reset_election_deadline(self) -> None:
        low = self.config.election_timeout
        self._election_deadline = time.monotonic() + self._rng.uniform(low, 2 * low)

    def _route(self, res: StepResult) -> None:
        for dest, msg in res.outbound:
            self._transport.send(self.node_id, dest, msg)
        if res.reset_election_timer:
            self._reset_election_deadline()

    def _step(self, event) -> None:
        was_leader = self.raft.role is RaftRole.LEADER
        self._route(self.raft.step(event))
        is_leader = self.raft.role is RaftRole.LEADER
        if was_leader and not is_leader:
            # in-flight submissions are the client's to resubmit
            self._pending = PendingQueue()
            self._batch_deadline = None
        if not was_leader and is_leader:
            self._heartbeat_deadline = time.monotonic() + self.config.heartbeat_interval

    def _maybe_cut(self, now: float) -> None:
        if self.raft.role is not RaftRole.LEADER:
            return
        while True:
            timer_expired = self._batch_deadline is not None and now >= self._batch_deadline
            cut = cut_batch(self._pending, self.config, timer_expired, now)
            if cut is None:
                break
            self._step(Propose(cut.to_dict()))
            self._batch_deadline = (
                now + self.config.batch_timeout if self._pending.items else None
            )

    def _drain_committed(self) -> None:
        for _idx, payload in self.raft.take_committed():
            if payload is None:
                continue
            deduped = _dedup(BatchPayload.from_dict(payload), self._seen)
            if deduped is not None:
                self.delivered.append(deduped)

    def _next_wakeup(self, now: float) -> float:
        deadline = self._election_deadline
        if self.raft.role is RaftRole.LEADER:
            deadline = min(deadline, self._heartbeat_deadline)
            if self._batch_deadline is not None:
                deadline = min(deadline, self._batch_deadline)
        return max(deadline - now, 0.0)

    def _run(self) -> None:
        while True:
            with self._lock:
                if not self._alive:
                    return
                wait = self._next_wakeup(time.monotonic())
            try:
                item: Optional[tuple] = self._inbox.get(timeout=min(wait, 0.05))
            except queue.Empty:
                item = None
            with self._lock:
                if not self._alive:
                    return
                while item is not None:
                    if item[0] == "msg":
                        self._step(item[1])
                    try:
                        item = self._inbox.get_nowait()
                    except queue.Empty:
                        item = None
                now = time.monotonic()
                if self.raft.role is not RaftRole.LEADER and now >= self._election_deadline:
                    self._step(ElectionTimeout())
                    self._reset_election_deadline()
                if self.raft.role is RaftRole.LEADER and now >= self._heartbeat_deadline:
                    self._step(HeartbeatTick())
                    self._heartbeat_deadline = now + self.config.heartbeat_interval
                self._maybe_cut(now)
                self._drain_committed()


class RaftOrderingCluster:
    """A set of RaftOrdererNodes wired over an in-process transport."""

    def __init__(self, config: OrderingConfig, seed: Optional[int] = None):
        if config.mode is not OrderingMode.RAFT:
            raise ValueError("config.mode must be raft")
        config.validate()
        self.config = config
        self._transport = _InProcTransport()
        cluster = list(config.cluster)
        self.nodes: dict[str, RaftOrdererNode] = {
            node_id: RaftOrdererNode(
                node_id,
                cluster,
                config,
                self._transport,
                random.Random(f"{seed}:{node_id}"),
            )
            for node_id in cluster
        }

    def start(self) -> None:
        for node in self.nodes.values():
            node.start()

    def stop(self) -> None:
        for node in self.nodes.values():
            node.stop()

    def __enter__(self) -> "RaftOrderingCluster":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    def kill(self, node_id: str) -> None:
        """Crash a node: it stops processing and the transport drops its
        traffic. There is no restart."""
        self._transport.mark_dead(node_id)
        self.nodes[node_id].stop()

    def alive_nodes(self) -> list[RaftOrdererNode]:
        return [n for n in self.nodes.values() if n.alive]

    def leader_id(self, timeout: float = 0.0) -> Optional[str]:
        deadline = time.monotonic() + timeout
        while True:
            for node in self.alive_nodes():
                if node.role is RaftRole.LEADER:
                    return node.node_id
            if time.monotonic() >= deadline:
                return None
            time.sleep(0.01)

    @property
    def height(self) -> int:
        heights = [n.delivered.height for n in self.alive_nodes()]
        return max(heights, default=0)

    def submit(self, tx: Transaction) -> None:
        """One submission attempt: find the leader, follow at most one
        redirect. Retry policy lives in OrderingClient."""
        target: Optional[RaftOrdererNode] = None
        for node in self.alive_nodes():
            if node.role is RaftRole.LEADER:
                target = node
                break
        if target is None:
            raise OrdererUnavailableError("no leader")
        try:
            target.submit(tx)
            return
        except NotLeaderError as exc:
            hint = self.nodes.get(exc.hint) if exc.hint else None
            if hint is not None and hint.alive:
                hint.submit(tx)
                return
            raise

    def deliver(self, seq: int, timeout: Optional[float] = None) -> BatchPayload:
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            best: Optional[RaftOrdererNode] = None
            for node in self.alive_nodes():
                if node.delivered.height > seq:
                    best = node
                    break
            if best is not None:
                return best.delivered.get(seq, timeout=0.0)
            if deadline is not None and time.monotonic() >= deadline:
                raise AheadOfChainError(seq, self.height)
            time.sleep(0.005)


class OrderingClient:
    """Submission front end: redirect handling plus resubmit-until-observed.

    Every submitted transaction sits in an outbox until it shows up in a
    delivered batch read through this client. A background thread resubmits
    stragglers, so a leader crash after accept-but-before-replicate cannot
    lose the transaction; apply-side dedup keeps delivery exactly-once.
    """

    def __init__(
        self,
        service: OrderingService,
        submit_timeout: float = 5.0,
        resubmit_interval: float = 0.5,
    ):
        self.service = service
        self.submit_timeout = submit_timeout
        self.resubmit_interval = resubmit_interval
        self._outbox: dict[str, Transaction] = {}
        self._lock = threading.Lock()
        self._running = False
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        if self._running:
            return
        self._running = True
        self._thread = threading.Thread(
            target=self._resubmit_loop, name="ordering-client", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    def submit(self, tx: Transaction) -> None:
        with self._lock:
            self._outbox[tx.tx_id] = tx
        deadline = time.monotonic() + self.submit_timeout
        while True:
            try:
                self.service.submit(tx)
                return
            except (NotLeaderError, OrdererUnavailableError):
                if time.monotonic() >= deadline:
                    with self._lock:
                        self._outbox.pop(tx.tx_id, None)
                    raise OrdererUnavailableError(
                        f"no orderer accepted tx within {self.submit_timeout}s"
                    )
                time.sleep(0.02)
            except (EnvelopeTooLargeError, QueueFullError):
                with self._lock:
                    self._outbox.pop(tx.tx_id, None)
                raise

    def deliver(self, seq: int, timeout: Optional[float] = None) -> BatchPayload:
        batch = self.service.deliver(seq, timeout)
        with self._lock:
            for tx in batch.transactions:
                self._outbox.pop(tx.tx_id, None)
        return batch

    def pending_count(self) -> int:
        with self._lock:
            return len(self._outbox)

    def _resubmit_loop(self) -> None:
        while self._running:
            time.sleep(self.resubmit_interval)
            with self._lock:
                stragglers = list(self._outbox.values())
            for tx in stragglers:
                if not self._running:
                    return
                try:
                    self.service.submit(tx)
                except Exception:
                    pass  # next pass retries; dedup makes repeats harmless
