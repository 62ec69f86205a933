"""Membership service: organizations, identities, keys, and authorization.

Identities are bound to Ed25519 key pairs. The registry stores only
verification keys; signing keys are handed to the caller at enrollment
and never retained. Authorization is a pure decision table over
(role, org, action, resource owner) so deployments can amend it without
touching code.
"""

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .codec import canonical_json


class MembershipError(Exception):
    pass


class DuplicateGovernmentError(MembershipError):
    pass


class EmptyNameError(MembershipError):
    pass


class RoleOrgMismatchError(MembershipError):
    pass


class UnknownIdentityError(MembershipError):
    pass


class UnknownOrgError(MembershipError):
    pass


class NetworkSealedError(MembershipError):
    pass


class OrgKind(str, Enum):
    HOSPITAL = "hospital"
    GOVERNMENT = "government"
    ADMIN = "admin"
    TRANSPORTER_POOL = "transporter_pool"


class Role(str, Enum):
    HOSPITAL_STAFF = "hospital_staff"
    ADMINISTRATOR = "administrator"
    GOVERNMENT_AUDITOR = "government_auditor"
    TRANSPORTER = "transporter"
    PATIENT = "patient"


# Which roles an org of a given kind may enroll. Patients enroll under the
# hospital that registers them.
ROLE_COMPAT: dict[OrgKind, frozenset[Role]] = {
    OrgKind.HOSPITAL: frozenset({Role.HOSPITAL_STAFF, Role.PATIENT}),
    OrgKind.GOVERNMENT: frozenset({Role.GOVERNMENT_AUDITOR}),
    OrgKind.ADMIN: frozenset({Role.ADMINISTRATOR}),
    OrgKind.TRANSPORTER_POOL: frozenset({Role.TRANSPORTER}),
}


@dataclass(frozen=True)
class Org:
    org_id: str
    display_name: str
    kind: OrgKind


@dataclass(frozen=True)
class Identity:
    identity_id: str
    org_id: str
    role: Role
    public_key: bytes
    display_name: str = ""


@dataclass(frozen=True)
class Signature:
    signer: str
    sig: bytes

    def to_dict(self) -> dict:
        return {"signer": self.signer, "sig": self.sig.hex()}

    @classmethod
    def from_dict(cls, d: dict) -> "Signature":
        return cls(signer=d["signer"], sig=bytes.fromhex(d["sig"]))


class SigningKey:
    """Private half of an enrollment, held by the client only."""

    def __init__(self, identity_id: str, private_key: Ed25519PrivateKey):
        self.identity_id = identity_id
        self._key = private_key

    def sign(self, message: bytes) -> Signature:
        return Signature(signer=self.identity_id, sig=self._key.sign(message))

    def private_bytes(self) -> bytes:
        return self._key.private_bytes_raw()

    @classmethod
    def from_private_bytes(cls, identity_id: str, raw: bytes) -> "SigningKey":
        return cls(identity_id, Ed25519PrivateKey.from_private_bytes(raw))


def verify_signature(public_key: bytes, message: bytes, sig: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(sig, message)
        return True
    except (InvalidSignature, ValueError):
        return False


class Action(str, Enum):
    ADD_PATIENT = "addPatient"
    ADD_DONOR = "addDonor"
    GET_PATIENT = "getPatient"
    GET_DONOR = "getDonor"
    GET_ALL_PATIENTS = "getAllPatients"
    GET_ALL_DONORS = "getAllDonors"
    GET_MY_PATIENTS = "getMyPatients"
    GET_MY_DONORS = "getMyDonors"
    DELETE_PATIENT = "deletePatient"
    DELETE_DONOR = "deleteDonor"
    FIND_MATCH = "findMatch"
    SELECT_MATCH = "selectMatch"
    READ_TRANSPORT_FEED = "readTransportFeed"


@dataclass(frozen=True)
class Resource:
    """Owner coordinates of the thing an action touches.

    hospital_id: org owning the record(s); subject_id: the record ID, used
    for the patient own-record rule (a patient identity's id equals their
    record ID by enrollment convention).
    """

    hospital_id: Optional[str] = None
    subject_id: Optional[str] = None


class Rule(str, Enum):
    ALLOW = "allow"
    OWN_ORG = "own_org"  # resource.hospital_id must equal the caller's org
    OWN_RECORD = "own_record"  # resource.subject_id must equal the caller's identity id


_READ_ACTIONS = (
    Action.GET_PATIENT,
    Action.GET_DONOR,
    Action.GET_ALL_PATIENTS,
    Action.GET_ALL_DONORS,
    Action.GET_MY_PATIENTS,
    Action.GET_MY_DONORS,
)

# (role, action) -> rule; absent entries deny. Hospitals operate on their own
# records only; admins read everything and may delete; the government audits
# everything and writes nothing; patients see their own record; transporters
# get the match feed.
AUTHORIZATION_MATRIX: dict[tuple[Role, Action], Rule] = {
    (Role.HOSPITAL_STAFF, Action.ADD_PATIENT): Rule.OWN_ORG,
    (Role.HOSPITAL_STAFF, Action.ADD_DONOR): Rule.OWN_ORG,
    (Role.HOSPITAL_STAFF, Action.GET_PATIENT): Rule.OWN_ORG,
    (Role.HOSPITAL_STAFF, Action.GET_DONOR): Rule.OWN_ORG,
    (Role.HOSPITAL_STAFF, Action.GET_MY_PATIENTS): Rule.OWN_ORG,
    (Role.HOSPITAL_STAFF, Action.GET_MY_DONORS): Rule.OWN_ORG,
    (Role.HOSPITAL_STAFF, Action.DELETE_PATIENT): Rule.OWN_ORG,
    (Role.HOSPITAL_STAFF, Action.DELETE_DONOR): Rule.OWN_ORG,
    (Role.HOSPITAL_STAFF, Action.FIND_MATCH): Rule.OWN_ORG,
    (Role.HOSPITAL_STAFF, Action.SELECT_MATCH): Rule.OWN_ORG,
    **{(Role.ADMINISTRATOR, a): Rule.ALLOW for a in _READ_ACTIONS},
    (Role.ADMINISTRATOR, Action.DELETE_PATIENT): Rule.ALLOW,
    (Role.ADMINISTRATOR, Action.DELETE_DONOR): Rule.ALLOW,
    **{(Role.GOVERNMENT_AUDITOR, a): Rule.ALLOW for a in _READ_ACTIONS},
    (Role.GOVERNMENT_AUDITOR, Action.READ_TRANSPORT_FEED): Rule.ALLOW,
    (Role.PATIENT, Action.GET_PATIENT): Rule.OWN_RECORD,
    (Role.TRANSPORTER, Action.READ_TRANSPORT_FEED): Rule.ALLOW,
}


def evaluate_rule(identity: Identity, action: Action, resource: Resource) -> bool:
    """Pure decision: same (role, org, action, resource) always yields the same answer."""
    rule = AUTHORIZATION_MATRIX.get((identity.role, action))
    if rule is None:
        return False
    if rule is Rule.ALLOW:
        return True
    if rule is Rule.OWN_ORG:
        return resource.hospital_id is not None and resource.hospital_id == identity.org_id
    if rule is Rule.OWN_RECORD:
        return resource.subject_id is not None and resource.subject_id == identity.identity_id
    return False


class MembershipRegistry:
    """Network-wide registry of orgs and identities.

    Safe for concurrent reads; registration and enrollment are serialized
    through a single lock. Identities are immutable once created.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._orgs: dict[str, Org] = {}
        self._identities: dict[str, Identity] = {}
        self._sealed = False
        self._org_seq = 0
        self._identity_seq = 0

    # -- orgs ---------------------------------------------------------------

    def register_org(self, display_name: str, kind: OrgKind, org_id: str | None = None) -> Org:
        if not display_name:
            raise EmptyNameError("org display_name must be non-empty")
        with self._lock:
            if self._sealed:
                raise NetworkSealedError("membership is sealed")
            if kind is OrgKind.GOVERNMENT and any(
                o.kind is OrgKind.GOVERNMENT for o in self._orgs.values()
            ):
                raise DuplicateGovernmentError("a Government org already exists")
            if org_id is None:
                self._org_seq += 1
                org_id = f"org-{self._org_seq}"
            if org_id in self._orgs:
                raise MembershipError(f"org_id {org_id!r} already registered")
            org = Org(org_id=org_id, display_name=display_name, kind=kind)
            self._orgs[org_id] = org
            return org

    def org(self, org_id: str) -> Org:
        try:
            return self._orgs[org_id]
        except KeyError:
            raise UnknownOrgError(org_id) from None

    def orgs(self) -> list[Org]:
        return list(self._orgs.values())

    def government_org(self) -> Org | None:
        for o in self._orgs.values():
            if o.kind is OrgKind.GOVERNMENT:
                return o
        return None

    def seal(self) -> None:
        with self._lock:
            self._sealed = True

    # -- identities ---------------------------------------------------------

    def enroll_identity(
        self,
        org: Org | str,
        role: Role,
        display_name: str = "",
        identity_id: str | None = None,
    ) -> tuple[Identity, SigningKey]:
        """Create an identity under org; the signing key is returned exactly
        once and never stored here."""
        org_obj = self.org(org) if isinstance(org, str) else org
        if role not in ROLE_COMPAT[org_obj.kind]:
            raise RoleOrgMismatchError(f"role {role.value} not allowed under {org_obj.kind.value} org")
        private_key = Ed25519PrivateKey.generate()
        public = private_key.public_key().public_bytes_raw()
        with self._lock:
            if self._sealed:
                raise NetworkSealedError("membership is sealed")
            if identity_id is None:
                self._identity_seq += 1
                identity_id = f"id-{self._identity_seq}"
            if identity_id in self._identities:
                raise MembershipError(f"identity_id {identity_id!r} already enrolled")
            ident = Identity(
                identity_id=identity_id,
                org_id=org_obj.org_id,
                role=role,
                public_key=public,
                display_name=display_name,
            )
            self._identities[identity_id] = ident
        return ident, SigningKey(identity_id, private_key)

    def identity(self, identity_id: str) -> Identity:
        try:
            return self._identities[identity_id]
        except KeyError:
            raise UnknownIdentityError(identity_id) from None

    def identities(self) -> list[Identity]:
        return list(self._identities.values())

    def verify(self, message: bytes, signature: Signature) -> bool:
        try:
            ident = self.identity(signature.signer)
        except UnknownIdentityError:
            return False
        return verify_signature(ident.public_key, message, signature.sig)

    def authorize(self, identity: Identity | str, action: Action, resource: Resource) -> bool:
        ident = self.identity(identity) if isinstance(identity, str) else identity
        if ident.identity_id not in self._identities:
            raise UnknownIdentityError(ident.identity_id)
        return evaluate_rule(ident, action, resource)

    # -- export / import ----------------------------------------------------

    def export_json(self) -> str:
        doc = {
            "orgs": [
                {"id": o.org_id, "display_name": o.display_name, "kind": o.kind.value}
                for o in sorted(self._orgs.values(), key=lambda o: o.org_id)
            ],
            "identities": [
                {
                    "id": i.identity_id,
                    "org": i.org_id,
                    "role": i.role.value,
                    "public_key_hex": i.public_key.hex(),
                    "display_name": i.display_name,
                }
                for i in sorted(self._identities.values(), key=lambda i: i.identity_id)
            ],
        }
        return canonical_json(doc)

    @classmethod
    def import_json(cls, doc: str) -> "MembershipRegistry":
        import json as _json

        data = _json.loads(doc)
        reg = cls()
        for o in data["orgs"]:
            reg.register_org(o["display_name"], OrgKind(o["kind"]), org_id=o["id"])
        for i in data["identities"]:
            ident = Identity(
                identity_id=i["id"],
                org_id=i["org"],
                role=Role(i["role"]),
                public_key=bytes.fromhex(i["public_key_hex"]),
                display_name=i.get("display_name", ""),
            )
            reg._identities[ident.identity_id] = ident
        return reg
