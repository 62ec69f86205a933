"""Request and response bodies for the REST gateway."""

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field


class NonceRequest(BaseModel):
    identity_id: str


class NonceResponse(BaseModel):
    identity_id: str
    nonce: str


class LoginRequest(BaseModel):
    identity_id: str
    nonce: str
    signature: str  # hex over the UTF-8 nonce string


class LoginResponse(BaseModel):
    token: str
    identity_id: str
    org_id: str
    role: str
    expires_at: float


class RecordIn(BaseModel):
    """Registration payload; field names follow the chaincode wire format."""

    model_config = ConfigDict(extra="forbid")

    ID: str
    firstName: str
    lastName: str
    age: int
    phoneNumber: str
    address: str
    organRequired: str
    bloodgroup: str
    gender: str
    medhistory: str


class RecordOut(BaseModel):
    model_config = ConfigDict(extra="allow")

    ID: str
    firstName: str
    lastName: str
    age: int
    phoneNumber: str
    address: str
    organRequired: str
    bloodgroup: str
    gender: str
    medhistory: str
    hospitalId: str
    match: str
    status: str


class WriteAck(BaseModel):
    tx_id: str
    flag: str
    block_number: int
    result: Optional[dict] = None


class PendingAck(BaseModel):
    tx_id: str
    status: str = "pending"


class MatchSelectIn(BaseModel):
    patientId: str
    donorId: str


class FindMatchOut(BaseModel):
    patientId: str
    candidates: list[str]
    produced_at: int


class StatusOut(BaseModel):
    patientId: str
    status: str  # Waiting | Matched
    matchedDonorId: Optional[str] = None
    registered_at: float
    waiting_time_s: float


class TxOut(BaseModel):
    tx_id: str
    block_number: int
    tx_index: int
    flag: str
    method: str
    chaincode_event: Optional[dict] = None


class ChainVerifyOut(BaseModel):
    ok: bool
    height: int
    bad_block: Optional[int] = None


class InvokeIn(BaseModel):
    chaincode: str = "donation"
    method: str
    args: list[str] = Field(default_factory=list)


class InvokeOut(BaseModel):
    tx_id: str
    flag: str
    block_number: int
    result: Any = None


class QueryOut(BaseModel):
    result: Any = None


class ChannelCreateIn(BaseModel):
    name: str
    members: list[str]
    policy: str
    ordering: dict = Field(default_factory=dict)
    chaincodes: list[str] = Field(default_factory=list)


class ChaincodeDeployIn(BaseModel):
    channel: str
    chaincode: str = "donation"


class PeerOut(BaseModel):
    peer_id: str
    org_id: str
    channels: list[str]


class ErrorOut(BaseModel):
    error: str
    detail: str
