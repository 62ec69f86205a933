"""The organ-donation contract and the endorsement runtime it executes in.

Contract methods run single-threaded against an immutable state snapshot;
every read and write goes through the stub's read-write-set recorder and
nothing mutates world state until commit. Records travel as canonical
JSON (sorted keys, lowercase enum strings) — that exact encoding is what
lands in world state and what the gateway returns.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .codec import canonical_json_bytes
from .identity import Action, Identity, Resource
from .ledger import ReadWriteSet, StateSnapshot, StateVersion

logger = logging.getLogger(__name__)

ORGANS = ("kidney", "liver", "heart", "lung", "pancreas")
BLOOD_GROUPS = ("a+", "a-", "b+", "b-", "ab+", "ab-", "o+", "o-")
GENDERS = ("m", "f", "o")

PATIENT_PREFIX = "PAT_"
DONOR_PREFIX = "DON_"

STATUS_WAITING = "waiting"
STATUS_AVAILABLE = "available"
STATUS_MATCHED = "matched"

EVENT_RECORD_ADDED = "RecordAdded"
EVENT_MATCH_SELECTED = "MatchSelected"


class ChaincodeError(Exception):
    """Aborts the proposal; nothing is ordered."""

    code = "chaincode_error"


class DuplicateIDError(ChaincodeError):
    code = "duplicate_id"


class NotFoundError(ChaincodeError):
    code = "not_found"


class UnauthorizedError(ChaincodeError):
    code = "unauthorized"


class ValidationError(ChaincodeError):
    code = "validation_error"


class NotAMatchError(ChaincodeError):
    code = "not_a_match"


class AlreadyMatchedError(ChaincodeError):
    code = "already_matched"


class MatchedRecordLockedError(ChaincodeError):
    code = "matched_record_locked"


class RecordKind(str, Enum):
    PATIENT = "patient"
    DONOR = "donor"

    @property
    def key_prefix(self) -> str:
        return PATIENT_PREFIX if self is RecordKind.PATIENT else DONOR_PREFIX

    @property
    def initial_status(self) -> str:
        return STATUS_WAITING if self is RecordKind.PATIENT else STATUS_AVAILABLE

    def key(self, record_id: str) -> str:
        return self.key_prefix + record_id


AuthorizeFn = Callable[[Identity, Action, Resource], bool]


class ChaincodeStub:
    """Execution context handed to a contract method.

    Reads come from the snapshot (never from this transaction's own writes,
    matching commit semantics where the write set is invisible until
    applied) and are recorded with their observed versions.
    """

    def __init__(self, snapshot: StateSnapshot, caller: Identity, authorize: AuthorizeFn):
        self.snapshot = snapshot
        self.caller = caller
        self._authorize = authorize
        self._reads: dict[str, Optional[StateVersion]] = {}
        self._writes: dict[str, Optional[bytes]] = {}
        self.event: Optional[dict] = None

    def get_state(self, key: str) -> Optional[bytes]:
        value, version = self.snapshot.get(key)
        self._reads.setdefault(key, version)
        return value

    def put_state(self, key: str, value: bytes) -> None:
        self._writes[key] = value

    def delete_state(self, key: str) -> None:
        self._writes[key] = None

    def scan_records(self, prefix: str) -> list[tuple[str, bytes]]:
        """Read every live key under prefix, recording each version."""
        out = []
        for key, value, version in self.snapshot.scan_prefix(prefix):
            self._reads.setdefault(key, version)
            out.append((key, value))
        return out

    def set_event(self, name: str, payload: dict) -> None:
        self.event = {"name": name, "payload": payload}

    def require_authorized(self, action: Action, resource: Resource) -> None:
        if not self._authorize(self.caller, action, resource):
            raise UnauthorizedError(
                f"{self.caller.identity_id} ({self.caller.role.value}) may not {action.value}"
            )

    def build_rwset(self) -> ReadWriteSet:
        return ReadWriteSet(
            reads=sorted(self._reads.items()),
            writes=sorted(self._writes.items()),
        )


_RECORD_FIELDS = (
    "ID",
    "firstName",
    "lastName",
    "age",
    "phoneNumber",
    "address",
    "organRequired",
    "bloodgroup",
    "gender",
    "medhistory",
)


def validate_record_fields(fields: dict) -> dict:
    """Check the registration field set; returns a normalized copy
    (enum strings lowercased)."""
    missing = [f for f in _RECORD_FIELDS if f not in fields]
    if missing:
        raise ValidationError(f"missing fields: {', '.join(missing)}")
    out = dict(fields)
    if not isinstance(out["ID"], str) or not out["ID"]:
        raise ValidationError("ID must be a non-empty string")
    if not isinstance(out["age"], int) or isinstance(out["age"], bool) or out["age"] < 1:
        raise ValidationError("age must be a positive integer")
    for name in ("firstName", "lastName", "phoneNumber", "address", "medhistory"):
        if not isinstance(out[name], str):
            raise ValidationError(f"{name} must be a string")
    for name, allowed in (
        ("organRequired", ORGANS),
        ("bloodgroup", BLOOD_GROUPS),
        ("gender", GENDERS),
    ):
        value = str(out[name]).lower()
        if value not in allowed:
            raise ValidationError(f"{name} must be one of {', '.join(allowed)}")
        out[name] = value
    return out


def record_to_bytes(record: dict) -> bytes:
    return canonical_json_bytes(record)


def record_from_bytes(raw: bytes) -> dict:
    return json.loads(raw)


def match_predicate(patient: dict, donor: dict) -> bool:
    """The matchmaking test: identical blood group, offered organ, and gender."""
    return (
        donor["bloodgroup"] == patient["bloodgroup"]
        and donor["organRequired"] == patient["organRequired"]
        and donor["gender"] == patient["gender"]
    )


_ADD_ACTION = {RecordKind.PATIENT: Action.ADD_PATIENT, RecordKind.DONOR: Action.ADD_DONOR}
_GET_ACTION = {RecordKind.PATIENT: Action.GET_PATIENT, RecordKind.DONOR: Action.GET_DONOR}
_GET_ALL_ACTION = {RecordKind.PATIENT: Action.GET_ALL_PATIENTS, RecordKind.DONOR: Action.GET_ALL_DONORS}
_GET_MY_ACTION = {RecordKind.PATIENT: Action.GET_MY_PATIENTS, RecordKind.DONOR: Action.GET_MY_DONORS}
_DELETE_ACTION = {RecordKind.PATIENT: Action.DELETE_PATIENT, RecordKind.DONOR: Action.DELETE_DONOR}


class DonationContract:
    """All twelve contract methods, dispatched by their public names."""

    chaincode_id = "donation"

    _METHODS = {
        "addPatient": ("add_record", RecordKind.PATIENT),
        "addDonor": ("add_record", RecordKind.DONOR),
        "getPatient": ("get_record", RecordKind.PATIENT),
        "getDonor": ("get_record", RecordKind.DONOR),
        "getAllPatients": ("get_all_records", RecordKind.PATIENT),
        "getAllDonors": ("get_all_records", RecordKind.DONOR),
        "getMyPatients": ("get_my_records", RecordKind.PATIENT),
        "getMyDonors": ("get_my_records", RecordKind.DONOR),
        "deletePatient": ("delete_record", RecordKind.PATIENT),
        "deleteDonor": ("delete_record", RecordKind.DONOR),
        "findMatch": ("find_match", None),
        "selectMatch": ("select_match", None),
    }

    def methods(self) -> list[str]:
        return list(self._METHODS)

    def invoke(self, stub: ChaincodeStub, method: str, args: list[str]):
        try:
            handler_name, kind = self._METHODS[method]
        except KeyError:
            raise ValidationError(f"unknown method {method!r}") from None
        handler = getattr(self, handler_name)
        return handler(stub, args) if kind is None else handler(stub, kind, args)

    # -- registration ---------------------------------------------------------

    def add_record(self, stub: ChaincodeStub, kind: RecordKind, args: list[str]) -> dict:
        if len(args) != 1:
            raise ValidationError(f"{_ADD_ACTION[kind].value} expects one JSON argument")
        try:
            fields = json.loads(args[0])
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed record JSON: {exc}") from None
        fields = validate_record_fields(fields)
        # hospitalId always comes from the caller, never the payload
        stub.require_authorized(_ADD_ACTION[kind], Resource(hospital_id=stub.caller.org_id))
        key = kind.key(fields["ID"])
        if stub.get_state(key) is not None:
            raise DuplicateIDError(f"{key} already exists")
        record = {f: fields[f] for f in _RECORD_FIELDS}
        record["hospitalId"] = stub.caller.org_id
        record["match"] = ""
        record["status"] = kind.initial_status
        stub.put_state(key, record_to_bytes(record))
        stub.set_event(
            EVENT_RECORD_ADDED,
            {"kind": kind.value, "id": fields["ID"], "key": key},
        )
        return {"key": key}

    # -- reads ------------------------------------------------------------------

    def _load(self, stub: ChaincodeStub, kind: RecordKind, record_id: str) -> dict:
        raw = stub.get_state(kind.key(record_id))
        if raw is None:
            raise NotFoundError(f"{kind.key(record_id)} not found")
        return record_from_bytes(raw)

    def get_record(self, stub: ChaincodeStub, kind: RecordKind, args: list[str]) -> dict:
        if len(args) != 1:
            raise ValidationError("expects one ID argument")
        record = self._load(stub, kind, args[0])
        stub.require_authorized(
            _GET_ACTION[kind],
            Resource(hospital_id=record["hospitalId"], subject_id=args[0]),
        )
        return record

    def get_all_records(self, stub: ChaincodeStub, kind: RecordKind, args: list[str]) -> list[dict]:
        stub.require_authorized(_GET_ALL_ACTION[kind], Resource())
        return [record_from_bytes(raw) for _, raw in stub.scan_records(kind.key_prefix)]

    def get_my_records(self, stub: ChaincodeStub, kind: RecordKind, args: list[str]) -> list[dict]:
        if len(args) != 1:
            raise ValidationError("expects one hospital org id argument")
        hospital = args[0]
        stub.require_authorized(_GET_MY_ACTION[kind], Resource(hospital_id=hospital))
        return [
            rec
            for _, raw in stub.scan_records(kind.key_prefix)
            if (rec := record_from_bytes(raw))["hospitalId"] == hospital
        ]

    # -- deletion -----------------------------------------------------------------

    def delete_record(self, stub: ChaincodeStub, kind: RecordKind, args: list[str]) -> dict:
        if len(args) != 1:
            raise ValidationError("expects one ID argument")
        record = self._load(stub, kind, args[0])
        stub.require_authorized(
            _DELETE_ACTION[kind],
            Resource(hospital_id=record["hospitalId"], subject_id=args[0]),
        )
        if record["status"] == STATUS_MATCHED:
            raise MatchedRecordLockedError(f"{kind.value} {args[0]} is matched; deletion locked")
        stub.delete_state(kind.key(args[0]))
        return {"deleted": kind.key(args[0])}

    # -- matchmaking ----------------------------------------------------------------

    def find_match(self, stub: ChaincodeStub, args: list[str]) -> dict:
        """Scan all donors for those matching the patient; read-only."""
        if len(args) != 1:
            raise ValidationError("expects one patient ID argument")
        patient_id = args[0]
        patient = self._load(stub, RecordKind.PATIENT, patient_id)
        stub.require_authorized(
            Action.FIND_MATCH,
            Resource(hospital_id=patient["hospitalId"], subject_id=patient_id),
        )
        if patient["status"] != STATUS_WAITING:
            raise AlreadyMatchedError(f"patient {patient_id} is already matched")
        candidates = []
        for _, raw in stub.scan_records(DONOR_PREFIX):
            donor = record_from_bytes(raw)
            if donor["status"] == STATUS_AVAILABLE and match_predicate(patient, donor):
                candidates.append(donor["ID"])
        return {
            "patientId": patient_id,
            "candidates": sorted(candidates),
            "produced_at": stub.snapshot.height,
        }

    def select_match(self, stub: ChaincodeStub, args: list[str]) -> dict:
        """Cross-link a patient and a donor after re-checking eligibility.

        Eligibility is re-derived here rather than trusted from a prior
        findMatch result; the recorded read versions of both records make
        concurrent double-selection lose at MVCC validation.
        """
        if len(args) != 2:
            raise ValidationError("expects patient ID and donor ID arguments")
        patient_id, donor_id = args
        patient = self._load(stub, RecordKind.PATIENT, patient_id)
        stub.require_authorized(
            Action.SELECT_MATCH,
            Resource(hospital_id=patient["hospitalId"], subject_id=patient_id),
        )
        donor = self._load(stub, RecordKind.DONOR, donor_id)
        if patient["status"] != STATUS_WAITING:
            raise AlreadyMatchedError(f"patient {patient_id} is already matched")
        if donor["status"] != STATUS_AVAILABLE:
            raise AlreadyMatchedError(f"donor {donor_id} is not available")
        if not match_predicate(patient, donor):
            raise NotAMatchError(f"donor {donor_id} does not match patient {patient_id}")
        patient = {**patient, "match": donor_id, "status": STATUS_MATCHED}
        donor = {**donor, "match": patient_id, "status": STATUS_MATCHED}
        stub.put_state(RecordKind.PATIENT.key(patient_id), record_to_bytes(patient))
        stub.put_state(RecordKind.DONOR.key(donor_id), record_to_bytes(donor))
        stub.set_event(
            EVENT_MATCH_SELECTED,
            {
                "patientId": patient_id,
                "donorId": donor_id,
                "organ": donor["organRequired"],
            },
        )
        return {"patientId": patient_id, "donorId": donor_id}
