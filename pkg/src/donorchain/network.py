"""Channel and peer orchestration.

Ties the other layers into the full transaction flow: clients get proposals
endorsed by peers (simulation against read snapshots, no state change),
byte-compare the endorsements, submit the assembled transaction to the
ordering service, and a single commit pipeline per channel turns delivered
batches into blocks committed on every joined peer. Event subscribers are
fed per-transaction commit events; delivery never blocks commit.

Peers sign endorsements with their own keys, kept in a network-level peer
directory separate from the user-facing membership registry.
"""

import json
import logging
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterator, Optional

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from .chaincode import ChaincodeStub, DonationContract
from .codec import canonical_json_bytes, sha256, ZERO_HASH
from .identity import (
    Identity,
    MembershipRegistry,
    Signature,
    SigningKey,
    UnknownIdentityError,
    UnknownOrgError,
    verify_signature,
)
from .ledger import (
    Block,
    BlockStore,
    Endorsement,
    HashMismatchError,
    ReadWriteSet,
    Transaction,
    TxFlag,
    WorldState,
    commit_block,
    make_block,
)
from .ordering import (
    AheadOfChainError,
    OrderingClient,
    OrderingConfig,
    OrderingMode,
    RaftOrderingCluster,
    SoloOrderer,
)
from .policy import PolicyExpr, evaluate_policy, mentions_org, parse_policy, referenced_orgs

logger = logging.getLogger(__name__)

DONATION_CHANNEL = "donation-system"


def _clone_block(block: Block) -> Block:
    """Wire round-trip so each peer stores fully independent objects;
    mutating one peer's copy must never leak into another's."""
    return Block.from_dict(json.loads(canonical_json_bytes(block.to_dict())))
CONFIG_CHAINCODE = "_config"


class NetworkError(Exception):
    pass


class UnknownChannelError(NetworkError):
    pass


class NotJoinedError(NetworkError):
    pass


class PolicyViolationError(NetworkError):
    pass


class EndorsementMismatchError(NetworkError):
    """Endorsing peers returned different results; nothing was ordered."""


class NoEndorsersError(NetworkError):
    pass


class ChannelHaltedError(NetworkError):
    pass


class CommitTimeoutError(NetworkError):
    pass


@dataclass
class ChannelConfig:
    name: str
    member_orgs: tuple[str, ...]
    policy_text: str  # s-expression, e.g. "(and org-2 (submitter))"
    ordering: OrderingConfig = field(default_factory=OrderingConfig)
    chaincodes: tuple[str, ...] = ()

    def policy(self) -> PolicyExpr:
        return parse_policy(self.policy_text)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "member_orgs": sorted(self.member_orgs),
            "policy": self.policy_text,
            "chaincodes": sorted(self.chaincodes),
        }


@dataclass(frozen=True)
class Proposal:
    channel: str
    chaincode_id: str
    method: str
    args: tuple[str, ...]
    submitter: str  # identity_id


@dataclass
class ProposalResponse:
    peer_id: str
    org_id: str
    rwset: ReadWriteSet
    event: Optional[dict]
    result: Any
    payload_digest: bytes  # sha256 over the endorsed bytes
    signature: "Signature"

    @property
    def endorsement(self) -> Endorsement:
        return Endorsement(org_id=self.org_id, endorser_id=self.peer_id, signature=self.signature)


@dataclass(frozen=True)
class CommitEvent:
    """What subscribers and await_commit observe for each committed tx."""

    channel: str
    block_number: int
    tx_index: int
    tx_id: str
    flag: TxFlag
    method: str
    submitter: str
    chaincode_event: Optional[dict]  # {"name": ..., "payload": {...}}

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "block_number": self.block_number,
            "tx_index": self.tx_index,
            "tx_id": self.tx_id,
            "flag": self.flag.value,
            "method": self.method,
            "submitter": self.submitter,
            "chaincode_event": self.chaincode_event,
        }


class _PeerLedger:
    def __init__(self):
        self.store = BlockStore()
        self.world = WorldState()
        self.contracts: dict[str, Any] = {}


class Peer:
    """One peer node: a ledger plus installed contracts per joined channel."""

    def __init__(self, peer_id: str, org_id: str, registry: MembershipRegistry):
        self.peer_id = peer_id
        self.org_id = org_id
        self._registry = registry
        private = Ed25519PrivateKey.generate()
        self._key = SigningKey(peer_id, private)
        self.public_key = private.public_key().public_bytes_raw()
        self._ledgers: dict[str, _PeerLedger] = {}

    def ledger(self, channel: str) -> _PeerLedger:
        try:
            return self._ledgers[channel]
        except KeyError:
            raise NotJoinedError(f"{self.peer_id} has not joined {channel!r}") from None

    def joined(self, channel: str) -> bool:
        return channel in self._ledgers

    def join_channel(self, channel: str, blocks: list[Block], ctx: "_ChannelCommitContext") -> None:
        """Join with the channel's current chain: genesis installs directly,
        later blocks re-validate through the normal commit path."""
        if channel in self._ledgers:
            return
        if not blocks:
            raise NetworkError("channel has no genesis block")
        led = _PeerLedger()
        led.store.append_block(_clone_block(blocks[0]))
        led.world.note_block(0)
        for block in blocks[1:]:
            commit_block(led.world, led.store, replace(_clone_block(block), validation_flags=None), ctx)
        self._ledgers[channel] = led

    def install_chaincode(self, channel: str, contract) -> None:
        self.ledger(channel).contracts[contract.chaincode_id] = contract

    def endorse(self, proposal: Proposal) -> ProposalResponse:
        """Simulate the method on this peer's current snapshot and sign the
        result. The peer's state is never mutated."""
        led = self.ledger(proposal.channel)
        try:
            contract = led.contracts[proposal.chaincode_id]
        except KeyError:
            raise NotJoinedError(
                f"chaincode {proposal.chaincode_id!r} not installed on {self.peer_id}"
            ) from None
        caller = self._registry.identity(proposal.submitter)
        stub = ChaincodeStub(led.world.snapshot(), caller, self._registry.authorize)
        result = contract.invoke(stub, proposal.method, list(proposal.args))
        rwset = stub.build_rwset()
        endorsed = Transaction(
            tx_id="", channel=proposal.channel, chaincode_id=proposal.chaincode_id,
            method=proposal.method, args=list(proposal.args), rwset=rwset, event=stub.event,
        ).endorsed_payload()
        # the comparison digest also covers the result so a peer returning a
        # doctored read (same versions, different values) still diverges
        response_bytes = canonical_json_bytes(
            {"rwset": rwset.to_dict(), "event": stub.event, "result": result}
        )
        return ProposalResponse(
            peer_id=self.peer_id,
            org_id=self.org_id,
            rwset=rwset,
            event=stub.event,
            result=result,
            payload_digest=sha256(response_bytes),
            signature=self._key.sign(endorsed),
        )


class _ChannelCommitContext:
    """Commit-time checks: client signature, endorsement signatures, policy."""

    def __init__(self, registry: MembershipRegistry, network: "Network", channel: "Channel"):
        self._registry = registry
        self._network = network
        self._channel = channel

    def verify_client_signature(self, tx: Transaction) -> bool:
        sig = tx.client_signature
        if sig is None or sig.signer != tx.submitter:
            return False
        try:
            return self._registry.verify(tx.signing_payload(), sig)
        except UnknownIdentityError:
            return False

    def verify_endorsements(self, tx: Transaction) -> bool:
        if not tx.endorsements:
            return False
        payload = tx.endorsed_payload()
        for end in tx.endorsements:
            peer = self._network.peers.get(end.endorser_id)
            if peer is None or peer.org_id != end.org_id:
                return False
            if end.org_id not in self._channel.config.member_orgs:
                return False
            if not verify_signature(peer.public_key, payload, end.signature.sig):
                return False
        return True

    def endorsement_policy_satisfied(self, tx: Transaction) -> bool:
        try:
            submitter_org = self._registry.identity(tx.submitter).org_id
        except UnknownIdentityError:
            return False
        orgs = {e.org_id for e in tx.endorsements}
        return evaluate_policy(self._channel.policy, orgs, submitter_org)


class _TxFuture:
    def __init__(self):
        self._event = threading.Event()
        self.result: Optional[CommitEvent] = None

    def resolve(self, result: CommitEvent) -> None:
        self.result = result
        self._event.set()

    def wait(self, timeout: Optional[float]) -> Optional[CommitEvent]:
        if self._event.wait(timeout):
            return self.result
        return None


class EventSubscription:
    """A queue of CommitEvents matching a filter; close() detaches it."""

    def __init__(self, channel: "Channel", matcher: Callable[[CommitEvent], bool]):
        self._channel = channel
        self._matcher = matcher
        self._queue: "queue.Queue[Optional[CommitEvent]]" = queue.Queue()
        self.closed = False

    def _offer(self, event: CommitEvent) -> None:
        if not self.closed and self._matcher(event):
            self._queue.put(event)

    def get(self, timeout: Optional[float] = None) -> Optional[CommitEvent]:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def __iter__(self) -> Iterator[CommitEvent]:
        while not self.closed:
            item = self._queue.get()
            if item is None:
                return
            yield item

    def close(self) -> None:
        self.closed = True
        self._queue.put(None)
        self._channel._drop_subscription(self)


class Channel:
    """A private ledger shared by member orgs, with one commit pipeline."""

    def __init__(
        self,
        network: "Network",
        config: ChannelConfig,
        ordering_service,
        genesis: Block,
    ):
        self.network = network
        self.config = config
        self.policy = config.policy()
        self.genesis = genesis
        self.ordering_service = ordering_service
        self.client = OrderingClient(ordering_service)
        self.peers: list[Peer] = []
        self.ctx = _ChannelCommitContext(network.registry, network, self)
        self.halted: Optional[str] = None
        self._next_seq = 0
        self._futures: dict[str, _TxFuture] = {}
        self._subs: list[EventSubscription] = []
        self._lock = threading.RLock()  # guards commit, membership, and subscriptions
        self._running = False
        self._thread: Optional[threading.Thread] = None

    @property
    def name(self) -> str:
        return self.config.name

    def _reference_ledger(self) -> _PeerLedger:
        if not self.peers:
            raise NetworkError(f"channel {self.name!r} has no peers")
        return self.peers[0].ledger(self.name)

    @property
    def height(self) -> int:
        with self._lock:
            return self._reference_ledger().store.height

    def blocks(self) -> list[Block]:
        with self._lock:
            return self._reference_ledger().store.blocks()

    # -- lifecycle --------------------------------------------------------------

    def start(self) -> None:
        if self._running:
            return
        self._running = True
        self.ordering_service.start()
        self.client.start()
        self._thread = threading.Thread(
            target=self._commit_loop, name=f"commit-{self.name}", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
        self.client.stop()
        self.ordering_service.stop()
        with self._lock:
            for sub in list(self._subs):
                sub.close()

    # -- membership ----------------------------------------------------------------

    def join_peer(self, peer: Peer) -> None:
        if peer.org_id not in self.config.member_orgs:
            raise UnknownOrgError(f"{peer.org_id} is not a member of {self.name!r}")
        with self._lock:
            if peer in self.peers:
                return
            blocks = self.peers[0].ledger(self.name).store.blocks() if self.peers else [self.genesis]
            peer.join_channel(self.name, blocks, self.ctx)
            for other in self.peers[:1]:
                for contract in other.ledger(self.name).contracts.values():
                    peer.install_chaincode(self.name, contract)
            self.peers.append(peer)

    def install_chaincode(self, contract) -> None:
        with self._lock:
            for peer in self.peers:
                peer.install_chaincode(self.name, contract)

    # -- endorse / submit -------------------------------------------------------

    def endorsing_orgs_for(self, submitter_org: str) -> list[str]:
        orgs = set(referenced_orgs(self.policy))
        orgs.add(submitter_org)
        return sorted(orgs & set(self.config.member_orgs))

    def endorse(self, proposal: Proposal) -> list[ProposalResponse]:
        """Collect one endorsement per relevant org (policy orgs plus the
        submitter's)."""
        if self.halted:
            raise ChannelHaltedError(self.halted)
        submitter_org = self.network.registry.identity(proposal.submitter).org_id
        wanted = self.endorsing_orgs_for(submitter_org)
        responses = []
        with self._lock:
            peers = list(self.peers)
        for org in wanted:
            peer = next((p for p in peers if p.org_id == org), None)
            if peer is not None:
                responses.append(peer.endorse(proposal))
        if not responses:
            raise NoEndorsersError(f"no peers available to endorse on {self.name!r}")
        return responses

    def submit_transaction(
        self,
        identity: Identity,
        signing_key: SigningKey,
        proposal: Proposal,
        responses: list[ProposalResponse],
        tx_id: Optional[str] = None,
    ) -> str:
        """Byte-compare endorsements, assemble and sign the transaction, hand
        it to ordering. Returns the tx_id; commit status arrives later."""
        if self.halted:
            raise ChannelHaltedError(self.halted)
        if not responses:
            raise NoEndorsersError("no proposal responses")
        digests = {r.payload_digest for r in responses}
        if len(digests) > 1:
            raise EndorsementMismatchError(
                "endorsing peers disagree; transaction aborted before ordering"
            )
        tx_id = tx_id or uuid.uuid4().hex
        tx = Transaction(
            tx_id=tx_id,
            channel=self.name,
            chaincode_id=proposal.chaincode_id,
            method=proposal.method,
            args=list(proposal.args),
            rwset=responses[0].rwset,
            event=responses[0].event,
            endorsements=[r.endorsement for r in responses],
            submitter=identity.identity_id,
            timestamp=time.time(),
        )
        tx.client_signature = signing_key.sign(tx.signing_payload())
        with self._lock:
            self._futures[tx_id] = _TxFuture()
        try:
            self.client.submit(tx)
        except Exception:
            with self._lock:
                self._futures.pop(tx_id, None)
            raise
        return tx_id

    def await_commit(self, tx_id: str, timeout: Optional[float] = 30.0) -> CommitEvent:
        with self._lock:
            fut = self._futures.get(tx_id)
        if fut is None:
            # already resolved (or unknown): scan the chain
            found = self.lookup_tx(tx_id)
            if found is not None:
                return found
            raise KeyError(f"unknown tx {tx_id!r}")
        result = fut.wait(timeout)
        if result is None:
            raise CommitTimeoutError(f"tx {tx_id} not committed within {timeout}s")
        return result

    def lookup_tx(self, tx_id: str) -> Optional[CommitEvent]:
        with self._lock:
            for block in self._reference_ledger().store.blocks():
                for idx, tx in enumerate(block.transactions):
                    if tx.tx_id == tx_id:
                        flags = block.validation_flags or []
                        return CommitEvent(
                            channel=self.name,
                            block_number=block.number,
                            tx_index=idx,
                            tx_id=tx_id,
                            flag=flags[idx] if idx < len(flags) else TxFlag.VALID,
                            method=tx.method,
                            submitter=tx.submitter,
                            chaincode_event=tx.event,
                        )
        return None

    def query(self, proposal: Proposal) -> Any:
        """Read path: endorse on one peer, return the result, order nothing."""
        if self.halted:
            raise ChannelHaltedError(self.halted)
        submitter_org = self.network.registry.identity(proposal.submitter).org_id
        with self._lock:
            peers = list(self.peers)
        peer = next((p for p in peers if p.org_id == submitter_org), peers[0] if peers else None)
        if peer is None:
            raise NoEndorsersError(f"no peers on {self.name!r}")
        return peer.endorse(proposal).result

    # -- events -------------------------------------------------------------------

    def subscribe(
        self,
        tx_id: Optional[str] = None,
        event_name: Optional[str] = None,
        from_block: Optional[int] = None,
    ) -> EventSubscription:
        """Subscribe to commit events; with from_block, history is replayed
        into the queue before live events flow (no gap, no duplicates)."""

        def matcher(ev: CommitEvent) -> bool:
            if tx_id is not None and ev.tx_id != tx_id:
                return False
            if event_name is not None and (
                ev.chaincode_event is None or ev.chaincode_event.get("name") != event_name
            ):
                return False
            return True

        sub = EventSubscription(self, matcher)
        with self._lock:
            if from_block is not None:
                for block in self._reference_ledger().store.blocks():
                    if block.number < from_block:
                        continue
                    for ev in self._block_events(block):
                        sub._offer(ev)
            self._subs.append(sub)
        return sub

    def _drop_subscription(self, sub: EventSubscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def _block_events(self, block: Block) -> list[CommitEvent]:
        flags = block.validation_flags or [TxFlag.VALID] * len(block.transactions)
        out = []
        for idx, tx in enumerate(block.transactions):
            out.append(
                CommitEvent(
                    channel=self.name,
                    block_number=block.number,
                    tx_index=idx,
                    tx_id=tx.tx_id,
                    flag=flags[idx],
                    method=tx.method,
                    submitter=tx.submitter,
                    chaincode_event=tx.event if flags[idx] is TxFlag.VALID else None,
                )
            )
        return out

    # -- the commit pipeline ------------------------------------------------------

    def _commit_loop(self) -> None:
        while self._running:
            try:
                batch = self.client.deliver(self._next_seq, timeout=0.2)
            except AheadOfChainError:
                continue
            except Exception:
                if self._running:
                    logger.exception("delivery failed on %s", self.name)
                    time.sleep(0.1)
                continue
            with self._lock:
                number = batch.seq + 1  # block 0 is the genesis config block
                led = self._reference_ledger()
                block = make_block(number, led.store.tip_hash(), batch.transactions, time.time())
                flag_sets = []
                try:
                    for peer in self.peers:
                        peer_led = peer.ledger(self.name)
                        flags = commit_block(peer_led.world, peer_led.store, _clone_block(block), self.ctx)
                        flag_sets.append(flags)
                except HashMismatchError as exc:
                    self.halted = f"commit halted at block {number}: {exc}"
                    logger.error("%s", self.halted)
                    self._running = False
                    return
                assert all(f == flag_sets[0] for f in flag_sets), "peers diverged on flags"
                self._next_seq += 1
                committed = led.store.get(number)
                events = self._block_events(committed)
                for ev in events:
                    fut = self._futures.pop(ev.tx_id, None)
                    if fut is not None:
                        fut.resolve(ev)
                    for sub in self._subs:
                        sub._offer(ev)

    # -- exports -------------------------------------------------------------------

    def export_state(self) -> bytes:
        with self._lock:
            return self._reference_ledger().world.export_bytes()

    def export_chain(self) -> bytes:
        with self._lock:
            return canonical_json_bytes([b.to_dict() for b in self.blocks()])


class Network:
    """Top level: the membership registry, the peer directory, and channels."""

    def __init__(self, registry: Optional[MembershipRegistry] = None):
        self.registry = registry or MembershipRegistry()
        self.peers: dict[str, Peer] = {}
        self.channels: dict[str, Channel] = {}
        self._peer_seq = 0
        self._lock = threading.Lock()

    def add_peer(self, org_id: str, peer_id: Optional[str] = None) -> Peer:
        if org_id not in {o.org_id for o in self.registry.orgs()}:
            raise UnknownOrgError(f"unknown org {org_id!r}")
        with self._lock:
            if peer_id is None:
                self._peer_seq += 1
                peer_id = f"peer-{self._peer_seq}"
            if peer_id in self.peers:
                raise NetworkError(f"peer id {peer_id!r} taken")
            peer = Peer(peer_id, org_id, self.registry)
            self.peers[peer_id] = peer
            return peer

    def create_channel(
        self, config: ChannelConfig, ordering_seed: Optional[int] = None
    ) -> Channel:
        if config.name in self.channels:
            raise NetworkError(f"channel {config.name!r} exists")
        if not config.member_orgs:
            raise PolicyViolationError("channel needs at least one member org")
        known = {o.org_id for o in self.registry.orgs()}
        for org in config.member_orgs:
            if org not in known:
                raise UnknownOrgError(f"unknown org {org!r}")
        policy = config.policy()
        refs = referenced_orgs(policy)
        outside = refs - set(config.member_orgs)
        if outside:
            raise PolicyViolationError(
                f"policy references non-member orgs: {', '.join(sorted(outside))}"
            )
        if config.name == DONATION_CHANNEL:
            gov = self.registry.government_org()
            if gov is None or gov.org_id not in config.member_orgs or not mentions_org(policy, gov.org_id):
                raise PolicyViolationError(
                    f"{DONATION_CHANNEL!r} requires the government org in its "
                    "membership and endorsement policy"
                )
        ordering_service = self._build_orderer(config.ordering, config.name, ordering_seed)
        genesis = self._genesis_block(config)
        channel = Channel(self, config, ordering_service, genesis)
        self.channels[config.name] = channel
        for peer in self.peers.values():
            if peer.org_id in config.member_orgs:
                channel.join_peer(peer)
        channel.start()
        return channel

    def _build_orderer(self, config: OrderingConfig, channel_name: str, seed: Optional[int]):
        config.validate()
        if config.mode is OrderingMode.RAFT:
            cluster = config.cluster or (
                f"{channel_name}-o1", f"{channel_name}-o2", f"{channel_name}-o3"
            )
            return RaftOrderingCluster(replace(config, cluster=tuple(cluster)), seed=seed)
        return SoloOrderer(config)

    @staticmethod
    def _genesis_block(config: ChannelConfig) -> Block:
        tx = Transaction(
            tx_id=f"config-{config.name}",
            channel=config.name,
            chaincode_id=CONFIG_CHAINCODE,
            method="create_channel",
            args=[json.dumps(config.to_dict(), sort_keys=True)],
            rwset=ReadWriteSet(reads=[], writes=[]),
        )
        block = make_block(0, ZERO_HASH, [tx], time.time())
        block.validation_flags = [TxFlag.VALID]
        return block

    def channel(self, name: str) -> Channel:
        try:
            return self.channels[name]
        except KeyError:
            raise UnknownChannelError(f"unknown channel {name!r}") from None

    def install_chaincode(self, channel_name: str, contract=None) -> None:
        self.channel(channel_name).install_chaincode(contract or DonationContract())

    # -- client conveniences -------------------------------------------------------

    def endorse(self, proposal: Proposal) -> list[ProposalResponse]:
        return self.channel(proposal.channel).endorse(proposal)

    def invoke(
        self,
        identity: Identity,
        signing_key: SigningKey,
        proposal: Proposal,
        timeout: Optional[float] = 30.0,
    ) -> tuple[str, Any, CommitEvent]:
        """Full write path: endorse, submit, wait for commit."""
        channel = self.channel(proposal.channel)
        responses = channel.endorse(proposal)
        tx_id = channel.submit_transaction(identity, signing_key, proposal, responses)
        event = channel.await_commit(tx_id, timeout)
        return tx_id, responses[0].result, event

    def query(self, proposal: Proposal) -> Any:
        return self.channel(proposal.channel).query(proposal)

    def shutdown(self) -> None:
        for channel in self.channels.values():
            channel.stop()
