"""Raft consensus as a pure event-driven state machine.

`RaftNode.step` consumes one input (a message, a timeout, or a proposal)
and returns the messages to send; timeouts arrive as inputs rather than
from hidden clocks, so the same code runs under deterministic simulation
and behind real timers. Log indices are 1-based; index 0 is the empty
sentinel. Leaders append a no-op entry on election so the commit index
can advance without fresh client traffic.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Union

logger = logging.getLogger(__name__)


class RaftRole(Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


@dataclass(frozen=True)
class LogEntry:
    term: int
    payload: Optional[dict]  # None marks a leader no-op


@dataclass(frozen=True)
class RequestVote:
    term: int
    candidate_id: str
    last_log_index: int
    last_log_term: int


@dataclass(frozen=True)
class RequestVoteReply:
    term: int
    voter_id: str
    granted: bool


@dataclass(frozen=True)
class AppendEntries:
    term: int
    leader_id: str
    prev_log_index: int
    prev_log_term: int
    entries: tuple[LogEntry, ...]
    leader_commit: int


@dataclass(frozen=True)
class AppendEntriesReply:
    term: int
    follower_id: str
    success: bool
    match_index: int


Message = Union[RequestVote, RequestVoteReply, AppendEntries, AppendEntriesReply]

_MSG_TYPES = {
    "request_vote": RequestVote,
    "request_vote_reply": RequestVoteReply,
    "append_entries": AppendEntries,
    "append_entries_reply": AppendEntriesReply,
}
_TYPE_NAMES = {v: k for k, v in _MSG_TYPES.items()}


def message_to_dict(msg: Message) -> dict:
    d: dict[str, Any] = {"type": _TYPE_NAMES[type(msg)]}
    if isinstance(msg, AppendEntries):
        d.update(
            term=msg.term,
            leader_id=msg.leader_id,
            prev_log_index=msg.prev_log_index,
            prev_log_term=msg.prev_log_term,
            entries=[[e.term, e.payload] for e in msg.entries],
            leader_commit=msg.leader_commit,
        )
    else:
        d.update(vars(msg))
    return d


def message_from_dict(d: dict) -> Message:
    kind = _MSG_TYPES[d["type"]]
    body = {k: v for k, v in d.items() if k != "type"}
    if kind is AppendEntries:
        body["entries"] = tuple(LogEntry(term=e[0], payload=e[1]) for e in body["entries"])
    return kind(**body)


# step() inputs besides messages
@dataclass(frozen=True)
class ElectionTimeout:
    pass


@dataclass(frozen=True)
class HeartbeatTick:
    pass


@dataclass(frozen=True)
class Propose:
    payload: dict


Input = Union[Message, ElectionTimeout, HeartbeatTick, Propose]


class NotLeader(Exception):
    def __init__(self, hint: Optional[str]):
        super().__init__(f"not the leader (hint: {hint})")
        self.hint = hint


@dataclass
class StepResult:
    outbound: list[tuple[str, Message]] = field(default_factory=list)
    # runtime should restart its election timer (valid leader contact or vote cast)
    reset_election_timer: bool = False


class RaftNode:
    def __init__(self, node_id: str, peers: list[str]):
        self.node_id = node_id
        self.peers = [p for p in peers if p != node_id]
        self.current_term = 0
        self.voted_for: Optional[str] = None
        self.log: list[LogEntry] = []
        self.commit_index = 0
        self.last_applied = 0
        self.role = RaftRole.FOLLOWER
        self.leader_id: Optional[str] = None
        self.next_index: dict[str, int] = {}
        self.match_index: dict[str, int] = {}
        self._votes: set[str] = set()

    # -- helpers -------------------------------------------------------------

    @property
    def cluster_size(self) -> int:
        return len(self.peers) + 1

    @property
    def _majority(self) -> int:
        return self.cluster_size // 2 + 1

    def _last_log_index(self) -> int:
        return len(self.log)

    def _last_log_term(self) -> int:
        return self.log[-1].term if self.log else 0

    def _term_at(self, index: int) -> int:
        return self.log[index - 1].term if index >= 1 and index <= len(self.log) else 0

    def _become_follower(self, term: int) -> None:
        self.current_term = term
        self.voted_for = None
        self.role = RaftRole.FOLLOWER
        self._votes = set()

    def _append_entries_for(self, peer: str) -> tuple[str, AppendEntries]:
        next_idx = self.next_index.get(peer, self._last_log_index() + 1)
        prev = next_idx - 1
        return peer, AppendEntries(
            term=self.current_term,
            leader_id=self.node_id,
            prev_log_index=prev,
            prev_log_term=self._term_at(prev),
            entries=tuple(self.log[prev:]),
            leader_commit=self.commit_index,
        )

    def _broadcast_append(self) -> list[tuple[str, Message]]:
        return [self._append_entries_for(p) for p in self.peers]

    def _become_leader(self) -> list[tuple[str, Message]]:
        self.role = RaftRole.LEADER
        self.leader_id = self.node_id
        self.next_index = {p: self._last_log_index() + 1 for p in self.peers}
        self.match_index = {p: 0 for p in self.peers}
        logger.debug("%s becomes leader for term %d", self.node_id, self.current_term)
        self.log.append(LogEntry(self.current_term, None))  # no-op to anchor commits
        self._maybe_advance_commit()
        return self._broadcast_append()

    def _maybe_advance_commit(self) -> None:
        # only entries of the current term commit by counting (Raft §5.4.2)
        for n in range(self._last_log_index(), self.commit_index, -1):
            if self._term_at(n) != self.current_term:
                break
            replicas = 1 + sum(1 for p in self.peers if self.match_index.get(p, 0) >= n)
            if replicas >= self._majority:
                self.commit_index = n
                break

    # -- the transition function ----------------------------------------------

    def step(self, event: Input) -> StepResult:
        if isinstance(event, ElectionTimeout):
            return self._on_election_timeout()
        if isinstance(event, HeartbeatTick):
            if self.role is RaftRole.LEADER:
                return StepResult(outbound=self._broadcast_append())
            return StepResult()
        if isinstance(event, Propose):
            if self.role is not RaftRole.LEADER:
                raise NotLeader(self.leader_id)
            self.log.append(LogEntry(self.current_term, event.payload))
            self._maybe_advance_commit()  # single-node cluster commits instantly
            return StepResult(outbound=self._broadcast_append())
        if isinstance(event, RequestVote):
            return self._on_request_vote(event)
        if isinstance(event, RequestVoteReply):
            return self._on_vote_reply(event)
        if isinstance(event, AppendEntries):
            return self._on_append_entries(event)
        if isinstance(event, AppendEntriesReply):
            return self._on_append_reply(event)
        logger.warning("%s ignoring malformed input %r", self.node_id, event)
        return StepResult()

    def _on_election_timeout(self) -> StepResult:
        if self.role is RaftRole.LEADER:
            return StepResult()
        self.current_term += 1
        self.role = RaftRole.CANDIDATE
        self.voted_for = self.node_id
        self._votes = {self.node_id}
        self.leader_id = None
        if self._votes_win():
            return StepResult(outbound=self._become_leader(), reset_election_timer=True)
        msg = RequestVote(
            term=self.current_term,
            candidate_id=self.node_id,
            last_log_index=self._last_log_index(),
            last_log_term=self._last_log_term(),
        )
        return StepResult(outbound=[(p, msg) for p in self.peers], reset_election_timer=True)

    def _votes_win(self) -> bool:
        return len(self._votes) >= self._majority

    def _on_request_vote(self, msg: RequestVote) -> StepResult:
        if msg.term > self.current_term:
            self._become_follower(msg.term)
        reply_deny = RequestVoteReply(self.current_term, self.node_id, False)
        if msg.term < self.current_term:
            return StepResult(outbound=[(msg.candidate_id, reply_deny)])
        if self.voted_for not in (None, msg.candidate_id):
            return StepResult(outbound=[(msg.candidate_id, reply_deny)])
        up_to_date = msg.last_log_term > self._last_log_term() or (
            msg.last_log_term == self._last_log_term()
            and msg.last_log_index >= self._last_log_index()
        )
        if not up_to_date:
            return StepResult(outbound=[(msg.candidate_id, reply_deny)])
        self.voted_for = msg.candidate_id
        grant = RequestVoteReply(self.current_term, self.node_id, True)
        return StepResult(outbound=[(msg.candidate_id, grant)], reset_election_timer=True)

    def _on_vote_reply(self, msg: RequestVoteReply) -> StepResult:
        if msg.term > self.current_term:
            self._become_follower(msg.term)
            return StepResult()
        if self.role is not RaftRole.CANDIDATE or msg.term < self.current_term:
            return StepResult()
        if msg.granted:
            self._votes.add(msg.voter_id)
            if self._votes_win():
                return StepResult(outbound=self._become_leader(), reset_election_timer=True)
        return StepResult()

    def _on_append_entries(self, msg: AppendEntries) -> StepResult:
        if msg.term > self.current_term:
            self._become_follower(msg.term)
        if msg.term < self.current_term:
            reject = AppendEntriesReply(self.current_term, self.node_id, False, 0)
            return StepResult(outbound=[(msg.leader_id, reject)])
        # valid leader for this term
        if self.role is not RaftRole.FOLLOWER:
            self._become_follower(msg.term)
        self.leader_id = msg.leader_id
        if msg.prev_log_index > self._last_log_index() or (
            msg.prev_log_index >= 1 and self._term_at(msg.prev_log_index) != msg.prev_log_term
        ):
            # hint our log length so the leader can jump back quickly
            reject = AppendEntriesReply(
                self.current_term,
                self.node_id,
                False,
                min(self._last_log_index(), max(msg.prev_log_index - 1, 0)),
            )
            return StepResult(outbound=[(msg.leader_id, reject)], reset_election_timer=True)
        for i, entry in enumerate(msg.entries):
            idx = msg.prev_log_index + 1 + i
            if idx <= self._last_log_index():
                if self.log[idx - 1].term != entry.term:
                    assert idx > self.commit_index, "refusing to truncate a committed entry"
                    del self.log[idx - 1 :]
                    self.log.append(entry)
            else:
                self.log.append(entry)
        match = msg.prev_log_index + len(msg.entries)
        if msg.leader_commit > self.commit_index:
            self.commit_index = max(self.commit_index, min(msg.leader_commit, match))
        ok = AppendEntriesReply(self.current_term, self.node_id, True, match)
        return StepResult(outbound=[(msg.leader_id, ok)], reset_election_timer=True)

    def _on_append_reply(self, msg: AppendEntriesReply) -> StepResult:
        if msg.term > self.current_term:
            self._become_follower(msg.term)
            return StepResult()
        if self.role is not RaftRole.LEADER or msg.term < self.current_term:
            return StepResult()
        if msg.success:
            self.match_index[msg.follower_id] = max(
                self.match_index.get(msg.follower_id, 0), msg.match_index
            )
            self.next_index[msg.follower_id] = self.match_index[msg.follower_id] + 1
            self._maybe_advance_commit()
            if self.next_index[msg.follower_id] <= self._last_log_index():
                return StepResult(outbound=[self._append_entries_for(msg.follower_id)])
            return StepResult()
        self.next_index[msg.follower_id] = max(1, min(
            self.next_index.get(msg.follower_id, 1) - 1, msg.match_index + 1
        ))
        return StepResult(outbound=[self._append_entries_for(msg.follower_id)])

    # -- committed entries ------------------------------------------------------

    def take_committed(self) -> list[tuple[int, Optional[dict]]]:
        """Newly committed (index, payload) pairs in log order; advances the
        applied cursor."""
        out = []
        while self.last_applied < self.commit_index:
            self.last_applied += 1
            out.append((self.last_applied, self.log[self.last_applied - 1].payload))
        return out
