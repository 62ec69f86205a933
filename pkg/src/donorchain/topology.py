"""Boot a network from a topology file.

The file (YAML or JSON) declares orgs with peer counts, channels with
member lists and endorsement policy strings, ordering parameters, and any
identities to pre-enroll. `load_topology` + `build_network` turn it into a
running in-process network; enrollment keys land in a wallet dict so the
CLI and gateway can sign on behalf of those identities.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .chaincode import DonationContract
from .identity import MembershipRegistry, OrgKind, Role, SigningKey
from .network import ChannelConfig, Network
from .ordering import OrderingConfig, OrderingMode


class TopologyError(Exception):
    pass


@dataclass
class OrgSpec:
    name: str
    kind: OrgKind
    org_id: Optional[str] = None
    peers: int = 1


@dataclass
class IdentitySpec:
    org: str
    role: Role
    identity_id: Optional[str] = None
    name: str = ""


@dataclass
class ChannelSpec:
    name: str
    members: list[str]
    policy: str
    chaincodes: list[str] = field(default_factory=lambda: ["donation"])
    ordering: OrderingConfig = field(default_factory=OrderingConfig)


@dataclass
class Topology:
    orgs: list[OrgSpec]
    channels: list[ChannelSpec]
    identities: list[IdentitySpec] = field(default_factory=list)


def _parse_ordering(raw: dict) -> OrderingConfig:
    cfg = OrderingConfig(
        max_tx_per_block=int(raw.get("max_tx_per_block", 50)),
        max_block_bytes=int(raw.get("max_block_bytes", 1 << 20)),
        batch_timeout=float(raw.get("batch_timeout", 0.5)),
        mode=OrderingMode(raw.get("mode", "solo")),
        cluster=tuple(raw.get("cluster", ())),
        election_timeout=float(raw.get("election_timeout", 0.15)),
        heartbeat_interval=float(raw.get("heartbeat_interval", 0.05)),
    )
    if cfg.mode is OrderingMode.RAFT and not cfg.cluster:
        cfg.cluster = ("orderer-1", "orderer-2", "orderer-3")
    cfg.validate()
    return cfg


def parse_topology(doc: dict) -> Topology:
    try:
        orgs = [
            OrgSpec(
                name=o["name"],
                kind=OrgKind(o["kind"]),
                org_id=o.get("id"),
                peers=int(o.get("peers", 1)),
            )
            for o in doc["orgs"]
        ]
        channels = [
            ChannelSpec(
                name=c["name"],
                members=list(c["members"]),
                policy=c["policy"],
                chaincodes=list(c.get("chaincodes", ["donation"])),
                ordering=_parse_ordering(c.get("ordering", {})),
            )
            for c in doc.get("channels", [])
        ]
        identities = [
            IdentitySpec(
                org=i["org"],
                role=Role(i["role"]),
                identity_id=i.get("id"),
                name=i.get("name", ""),
            )
            for i in doc.get("identities", [])
        ]
    except (KeyError, ValueError, TypeError) as exc:
        raise TopologyError(f"bad topology document: {exc}") from exc
    if not orgs:
        raise TopologyError("topology declares no orgs")
    return Topology(orgs=orgs, channels=channels, identities=identities)


def load_topology(path: str | Path) -> Topology:
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        doc = json.loads(text)
    else:
        doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise TopologyError("topology must be a mapping")
    return parse_topology(doc)


@dataclass
class RunningNetwork:
    """A booted network plus the keys minted while booting it."""

    network: Network
    topology: Topology
    wallet: dict[str, SigningKey]  # identity_id -> signing key

    @property
    def registry(self) -> MembershipRegistry:
        return self.network.registry

    def shutdown(self) -> None:
        self.network.shutdown()


def build_network(topology: Topology, ordering_seed: Optional[int] = None) -> RunningNetwork:
    registry = MembershipRegistry()
    network = Network(registry)
    for spec in topology.orgs:
        org = registry.register_org(spec.name, spec.kind, org_id=spec.org_id)
        for _ in range(spec.peers):
            network.add_peer(org.org_id)
    wallet: dict[str, SigningKey] = {}
    for ident in topology.identities:
        enrolled, key = registry.enroll_identity(
            ident.org, ident.role, ident.name, identity_id=ident.identity_id
        )
        wallet[enrolled.identity_id] = key
    for chan in topology.channels:
        config = ChannelConfig(
            name=chan.name,
            member_orgs=tuple(chan.members),
            policy_text=chan.policy,
            ordering=chan.ordering,
            chaincodes=tuple(chan.chaincodes),
        )
        channel = network.create_channel(config, ordering_seed=ordering_seed)
        for cc_name in chan.chaincodes:
            if cc_name == DonationContract.chaincode_id:
                channel.install_chaincode(DonationContract())
            else:
                raise TopologyError(f"unknown chaincode {cc_name!r}")
    return RunningNetwork(network=network, topology=topology, wallet=wallet)


def default_topology() -> Topology:
    """Two hospitals, government, admin, and transporters on one channel."""
    return parse_topology(
        {
            "orgs": [
                {"id": "gov", "name": "Health Authority", "kind": "government", "peers": 1},
                {"id": "hospital-a", "name": "Hospital A", "kind": "hospital", "peers": 2},
                {"id": "hospital-b", "name": "Hospital B", "kind": "hospital", "peers": 1},
                {"id": "admin-org", "name": "System Admin", "kind": "admin", "peers": 1},
                {"id": "transport", "name": "Transport Pool", "kind": "transporter_pool", "peers": 0},
            ],
            "channels": [
                {
                    "name": "donation-system",
                    # admin-org holds a peer so administrator writes can satisfy
                    # the submitter clause of the endorsement policy
                    "members": ["gov", "hospital-a", "hospital-b", "admin-org"],
                    "policy": "(and gov (submitter))",
                    "chaincodes": ["donation"],
                    "ordering": {"mode": "solo", "max_tx_per_block": 50, "batch_timeout": 0.2},
                }
            ],
            "identities": [
                {"id": "auditor-1", "org": "gov", "role": "government_auditor", "name": "Auditor"},
                {"id": "staff-a", "org": "hospital-a", "role": "hospital_staff", "name": "Staff A"},
                {"id": "staff-b", "org": "hospital-b", "role": "hospital_staff", "name": "Staff B"},
                {"id": "admin-1", "org": "admin-org", "role": "administrator", "name": "Admin"},
                {"id": "transporter-1", "org": "transport", "role": "transporter", "name": "Courier"},
            ],
        }
    )
