"""REST gateway over a running network.

Maps HTTP routes onto the endorse-submit-commit flow. Reads are served
from committed peer state through the query path; writes run the full
flow and only acknowledge 2xx after the transaction is Valid in a
committed block. If commit takes longer than the await timeout the
gateway answers 202 with the tx_id for later polling via GET /tx/{id}.

Login exchanges a signed server nonce for a bearer token bound to an
enrolled identity. Sessions are in-memory: restarting the gateway loses
sessions but never committed data.
"""

import json
import logging
import os
import secrets
import signal
import threading
import time
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Optional

import anyio
from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse

from .. import chaincode as cc
from ..identity import (
    Action,
    Identity,
    Resource,
    Role,
    UnknownIdentityError,
    UnknownOrgError,
    verify_signature,
)
from ..ledger import TxFlag, get_history, verify_chain
from ..network import (
    ChannelConfig,
    ChannelHaltedError,
    CommitTimeoutError,
    DonationContract,
    EndorsementMismatchError,
    NetworkError,
    NoEndorsersError,
    PolicyViolationError,
    Proposal,
    UnknownChannelError,
)
from ..ordering import (
    EnvelopeTooLargeError,
    OrdererUnavailableError,
    QueueFullError,
)
from ..topology import RunningNetwork, _parse_ordering
from . import schemas as S

logger = logging.getLogger(__name__)

DEFAULT_CHANNEL = "donation-system"
NONCE_TTL_S = 300.0

_CHAINCODE_STATUS = {
    "duplicate_id": 409,
    "not_found": 404,
    "unauthorized": 403,
    "validation_error": 422,
    "not_a_match": 422,
    "already_matched": 409,
    "matched_record_locked": 409,
    "chaincode_error": 422,
}


class SessionStore:
    """Bearer tokens and login nonces, both with expiry."""

    def __init__(self, ttl_s: float = 12 * 3600.0):
        self.ttl_s = ttl_s
        self._tokens: dict[str, tuple[str, float]] = {}
        self._nonces: dict[str, tuple[str, float]] = {}
        self._lock = threading.Lock()

    def new_nonce(self, identity_id: str) -> str:
        nonce = secrets.token_hex(16)
        with self._lock:
            self._nonces[identity_id] = (nonce, time.time() + NONCE_TTL_S)
        return nonce

    def take_nonce(self, identity_id: str) -> Optional[str]:
        with self._lock:
            entry = self._nonces.pop(identity_id, None)
        if entry is None or entry[1] < time.time():
            return None
        return entry[0]

    def issue(self, identity_id: str) -> tuple[str, float]:
        token = secrets.token_urlsafe(32)
        expires = time.time() + self.ttl_s
        with self._lock:
            self._tokens[token] = (identity_id, expires)
        return token, expires

    def resolve(self, token: str) -> Optional[str]:
        with self._lock:
            entry = self._tokens.get(token)
            if entry is None:
                return None
            identity_id, expires = entry
            if expires < time.time():
                del self._tokens[token]
                return None
            return identity_id


def _record_arg(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def create_app(
    running: RunningNetwork,
    channel_name: str = DEFAULT_CHANNEL,
    await_timeout: float = 30.0,
    session_ttl_s: float = 12 * 3600.0,
    console_dir: Optional[str] = None,
) -> FastAPI:
    @asynccontextmanager
    async def _lifespan(_app):
        # writes block a worker thread for their whole commit wait
        anyio.to_thread.current_default_thread_limiter().total_tokens = 256
        yield

    app = FastAPI(title="organ donation gateway", version="0.1.0", lifespan=_lifespan)
    sessions = SessionStore(session_ttl_s)
    network = running.network
    registry = running.registry

    def channel():
        return network.channel(channel_name)

    # -- error mapping ---------------------------------------------------------

    @app.exception_handler(cc.ChaincodeError)
    async def _chaincode_error(_req, exc: cc.ChaincodeError):
        status = _CHAINCODE_STATUS.get(exc.code, 422)
        return JSONResponse(status_code=status, content={"error": exc.code, "detail": str(exc)})

    @app.exception_handler(NetworkError)
    async def _network_error(_req, exc: NetworkError):
        status = 503
        slug = "network_error"
        if isinstance(exc, EndorsementMismatchError):
            status, slug = 502, "endorsement_mismatch"
        elif isinstance(exc, UnknownChannelError):
            status, slug = 404, "unknown_channel"
        elif isinstance(exc, PolicyViolationError):
            status, slug = 422, "policy_violation"
        elif isinstance(exc, ChannelHaltedError):
            slug = "channel_halted"
        elif isinstance(exc, NoEndorsersError):
            slug = "no_endorsers"
        return JSONResponse(status_code=status, content={"error": slug, "detail": str(exc)})

    @app.exception_handler(OrdererUnavailableError)
    async def _orderer_unavailable(_req, exc):
        return JSONResponse(status_code=503, content={"error": "orderer_unavailable", "detail": str(exc)})

    @app.exception_handler(QueueFullError)
    async def _queue_full(_req, exc):
        return JSONResponse(status_code=503, content={"error": "queue_full", "detail": str(exc)})

    @app.exception_handler(EnvelopeTooLargeError)
    async def _too_large(_req, exc):
        return JSONResponse(status_code=413, content={"error": "envelope_too_large", "detail": str(exc)})

    @app.exception_handler(UnknownIdentityError)
    async def _unknown_identity(_req, exc):
        return JSONResponse(status_code=401, content={"error": "unknown_identity", "detail": str(exc)})

    @app.exception_handler(UnknownOrgError)
    async def _unknown_org(_req, exc):
        return JSONResponse(status_code=422, content={"error": "unknown_org", "detail": str(exc)})

    # -- auth ----------------------------------------------------------------------

    def current_identity(request: Request) -> Identity:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise HTTPException(401, detail="missing bearer token")
        identity_id = sessions.resolve(header[7:].strip())
        if identity_id is None:
            raise HTTPException(401, detail="invalid or expired token")
        return registry.identity(identity_id)

    def require(identity: Identity, action: Action, resource: Resource) -> None:
        if not registry.authorize(identity, action, resource):
            raise HTTPException(403, detail=f"{identity.role.value} may not {action.value}")

    @app.post("/auth/nonce", response_model=S.NonceResponse)
    def auth_nonce(body: S.NonceRequest):
        registry.identity(body.identity_id)  # 401 if unknown
        return S.NonceResponse(identity_id=body.identity_id, nonce=sessions.new_nonce(body.identity_id))

    @app.post("/auth/login", response_model=S.LoginResponse)
    def auth_login(body: S.LoginRequest):
        ident = registry.identity(body.identity_id)
        expected = sessions.take_nonce(body.identity_id)
        if expected is None or expected != body.nonce:
            raise HTTPException(401, detail="nonce missing or expired; request a new one")
        try:
            sig = bytes.fromhex(body.signature)
        except ValueError:
            raise HTTPException(401, detail="signature is not hex") from None
        if not verify_signature(ident.public_key, body.nonce.encode(), sig):
            raise HTTPException(401, detail="nonce signature does not verify")
        if body.identity_id not in running.wallet:
            raise HTTPException(401, detail="gateway holds no signing key for this identity")
        token, expires = sessions.issue(body.identity_id)
        return S.LoginResponse(
            token=token,
            identity_id=ident.identity_id,
            org_id=ident.org_id,
            role=ident.role.value,
            expires_at=expires,
        )

    # -- core flows -------------------------------------------------------------

    def do_write(ident: Identity, method: str, args: tuple[str, ...], ok_status: int = 200):
        """Endorse, submit, await commit; honest acks only."""
        ch = channel()
        prop = Proposal(channel_name, "donation", method, args, ident.identity_id)
        responses = ch.endorse(prop)
        key = running.wallet[ident.identity_id]
        tx_id = ch.submit_transaction(ident, key, prop, responses)
        try:
            event = ch.await_commit(tx_id, await_timeout)
        except CommitTimeoutError:
            return JSONResponse(status_code=202, content=S.PendingAck(tx_id=tx_id).model_dump())
        if event.flag is TxFlag.MVCC_CONFLICT:
            return JSONResponse(
                status_code=409,
                content={"error": "mvcc_conflict", "detail": "read versions went stale", "tx_id": tx_id},
            )
        if event.flag is not TxFlag.VALID:
            return JSONResponse(
                status_code=500,
                content={"error": event.flag.value, "detail": "transaction invalidated", "tx_id": tx_id},
            )
        result = responses[0].result if isinstance(responses[0].result, dict) else None
        ack = S.WriteAck(
            tx_id=tx_id, flag=event.flag.value, block_number=event.block_number, result=result
        )
        return JSONResponse(status_code=ok_status, content=ack.model_dump())

    def do_query(ident: Identity, method: str, args: tuple[str, ...]):
        prop = Proposal(channel_name, "donation", method, args, ident.identity_id)
        return channel().query(prop)

    # -- records -----------------------------------------------------------------

    @app.post("/patients", status_code=201)
    def add_patient(body: S.RecordIn, ident: Identity = Depends(current_identity)):
        return do_write(ident, "addPatient", (_record_arg(body.model_dump()),), ok_status=201)

    @app.post("/donors", status_code=201)
    def add_donor(body: S.RecordIn, ident: Identity = Depends(current_identity)):
        return do_write(ident, "addDonor", (_record_arg(body.model_dump()),), ok_status=201)

    @app.get("/patients")
    def get_all_patients(ident: Identity = Depends(current_identity)):
        return do_query(ident, "getAllPatients", ())

    @app.get("/donors")
    def get_all_donors(ident: Identity = Depends(current_identity)):
        return do_query(ident, "getAllDonors", ())

    @app.get("/patients/{record_id}/status", response_model=S.StatusOut)
    def patient_status(record_id: str, ident: Identity = Depends(current_identity)):
        record = do_query(ident, "getPatient", (record_id,))
        led = channel().peers[0].ledger(channel_name)
        history = get_history(led.store, cc.RecordKind.PATIENT.key(record_id))
        if not history:
            raise cc.NotFoundError(f"no commit history for patient {record_id}")
        registered_at = led.store.get(history[0].block_number).timestamp
        matched = record["status"] == cc.STATUS_MATCHED
        return S.StatusOut(
            patientId=record_id,
            status="Matched" if matched else "Waiting",
            matchedDonorId=record["match"] or None,
            registered_at=registered_at,
            waiting_time_s=max(time.time() - registered_at, 0.0),
        )

    @app.get("/patients/{record_id}")
    def get_patient(record_id: str, ident: Identity = Depends(current_identity)):
        return do_query(ident, "getPatient", (record_id,))

    @app.get("/donors/{record_id}")
    def get_donor(record_id: str, ident: Identity = Depends(current_identity)):
        return do_query(ident, "getDonor", (record_id,))

    @app.delete("/patients/{record_id}")
    def delete_patient(record_id: str, ident: Identity = Depends(current_identity)):
        return do_write(ident, "deletePatient", (record_id,))

    @app.delete("/donors/{record_id}")
    def delete_donor(record_id: str, ident: Identity = Depends(current_identity)):
        return do_write(ident, "deleteDonor", (record_id,))

    @app.get("/hospitals/{org_id}/patients")
    def get_my_patients(org_id: str, ident: Identity = Depends(current_identity)):
        return do_query(ident, "getMyPatients", (org_id,))

    @app.get("/hospitals/{org_id}/donors")
    def get_my_donors(org_id: str, ident: Identity = Depends(current_identity)):
        return do_query(ident, "getMyDonors", (org_id,))

    # -- matchmaking ----------------------------------------------------------------

    @app.post("/patients/{record_id}/find-match", response_model=S.FindMatchOut)
    def find_match(record_id: str, ident: Identity = Depends(current_identity)):
        return do_query(ident, "findMatch", (record_id,))

    @app.post("/match/select")
    def select_match(body: S.MatchSelectIn, ident: Identity = Depends(current_identity)):
        return do_write(ident, "selectMatch", (body.patientId, body.donorId))

    # -- generic invoke/query (CLI) ---------------------------------------------------

    @app.post("/invoke")
    def invoke(body: S.InvokeIn, ident: Identity = Depends(current_identity)):
        if body.chaincode != "donation":
            raise HTTPException(404, detail=f"unknown chaincode {body.chaincode!r}")
        return do_write(ident, body.method, tuple(body.args))

    @app.post("/query", response_model=S.QueryOut)
    def query(body: S.InvokeIn, ident: Identity = Depends(current_identity)):
        if body.chaincode != "donation":
            raise HTTPException(404, detail=f"unknown chaincode {body.chaincode!r}")
        return S.QueryOut(result=do_query(ident, body.method, tuple(body.args)))

    # -- chain inspection --------------------------------------------------------------

    @app.get("/tx/{tx_id}", response_model=S.TxOut)
    def get_tx(tx_id: str, ident: Identity = Depends(current_identity)):
        found = channel().lookup_tx(tx_id)
        if found is None:
            raise HTTPException(404, detail=f"tx {tx_id} not committed (yet)")
        return S.TxOut(
            tx_id=found.tx_id,
            block_number=found.block_number,
            tx_index=found.tx_index,
            flag=found.flag.value,
            method=found.method,
            chaincode_event=found.chaincode_event,
        )

    @app.get("/chain/verify", response_model=S.ChainVerifyOut)
    def chain_verify(ident: Identity = Depends(current_identity)):
        ch = channel()
        bad = verify_chain(ch.peers[0].ledger(channel_name).store)
        return S.ChainVerifyOut(ok=bad is None, height=ch.height, bad_block=bad)

    # -- transport notification stream ---------------------------------------------------

    def _notice(ev) -> dict:
        payload = ev.chaincode_event["payload"]
        world = channel().peers[0].ledger(channel_name).world
        donor = cc.record_from_bytes(world.get_state(cc.RecordKind.DONOR.key(payload["donorId"])))
        patient = cc.record_from_bytes(world.get_state(cc.RecordKind.PATIENT.key(payload["patientId"])))
        return {
            "noticeId": f"{ev.block_number}.{ev.tx_index}",
            "patientId": payload["patientId"],
            "donorId": payload["donorId"],
            "organ": payload["organ"],
            "sourceHospital": donor["hospitalId"],
            "destinationHospital": patient["hospitalId"],
            "createdAtBlock": ev.block_number,
        }

    @app.get("/events/transport")
    def transport_events(
        request: Request,
        limit: Optional[int] = None,
        ident: Identity = Depends(current_identity),
    ):
        """Server-sent MatchSelected notices for transporters.

        Reconnecting clients send the standard Last-Event-ID header (or
        ?last_id=) and receive every notice committed since, in block
        order, before live ones. `limit` closes the stream after that
        many notices; consoles leave it unset and stay connected.
        """
        require(ident, Action.READ_TRANSPORT_FEED, Resource())
        raw_last = request.headers.get("last-event-id") or request.query_params.get("last_id")
        after: Optional[tuple[int, int]] = None
        if raw_last:
            try:
                block_s, _, idx_s = raw_last.partition(".")
                after = (int(block_s), int(idx_s or 0))
            except ValueError:
                raise HTTPException(422, detail=f"bad last event id {raw_last!r}") from None
        sub = channel().subscribe(
            event_name=cc.EVENT_MATCH_SELECTED,
            from_block=0 if after is None else after[0],
        )

        def stream():
            remaining = limit
            try:
                while remaining is None or remaining > 0:
                    ev = sub.get(timeout=15.0)
                    if ev is None:
                        if sub.closed:
                            return
                        yield ": keep-alive\n\n"
                        continue
                    eid = (ev.block_number, ev.tx_index)
                    if after is not None and eid <= after:
                        continue
                    data = json.dumps(_notice(ev), sort_keys=True)
                    yield f"id: {eid[0]}.{eid[1]}\nevent: transport\ndata: {data}\n\n"
                    if remaining is not None:
                        remaining -= 1
            finally:
                sub.close()

        return StreamingResponse(
            stream(),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache"},
        )

    # -- operator routes -------------------------------------------------------------------

    def require_admin(ident: Identity) -> None:
        if ident.role is not Role.ADMINISTRATOR:
            raise HTTPException(403, detail="administrator role required")

    @app.get("/healthz")
    def healthz():
        ch = network.channels.get(channel_name)
        return {"status": "ok", "channel": channel_name, "height": ch.height if ch else 0}

    @app.get("/admin/peers")
    def admin_peers(ident: Identity = Depends(current_identity)):
        require_admin(ident)
        return [
            S.PeerOut(
                peer_id=p.peer_id,
                org_id=p.org_id,
                channels=[c for c in network.channels if p.joined(c)],
            ).model_dump()
            for p in network.peers.values()
        ]

    @app.get("/admin/state-export")
    def admin_state_export(
        request: Request, ident: Identity = Depends(current_identity)
    ):
        require_admin(ident)
        chan = request.query_params.get("channel", channel_name)
        peer_id = request.query_params.get("peer")
        ch = network.channel(chan)
        peer = ch.peers[0] if peer_id is None else network.peers.get(peer_id)
        if peer is None or not peer.joined(chan):
            raise HTTPException(404, detail=f"peer {peer_id!r} not on {chan!r}")
        return Response(
            content=peer.ledger(chan).world.export_bytes(),
            media_type="application/octet-stream",
        )

    @app.get("/admin/chain-export")
    def admin_chain_export(request: Request, ident: Identity = Depends(current_identity)):
        require_admin(ident)
        chan = request.query_params.get("channel", channel_name)
        return Response(
            content=network.channel(chan).export_chain(),
            media_type="application/octet-stream",
        )

    @app.post("/admin/channels", status_code=201)
    def admin_create_channel(body: S.ChannelCreateIn, ident: Identity = Depends(current_identity)):
        require_admin(ident)
        config = ChannelConfig(
            name=body.name,
            member_orgs=tuple(body.members),
            policy_text=body.policy,
            ordering=_parse_ordering(body.ordering),
            chaincodes=tuple(body.chaincodes),
        )
        network.create_channel(config)
        return {"created": body.name}

    @app.post("/admin/chaincode")
    def admin_deploy_chaincode(body: S.ChaincodeDeployIn, ident: Identity = Depends(current_identity)):
        require_admin(ident)
        if body.chaincode != DonationContract.chaincode_id:
            raise HTTPException(404, detail=f"unknown chaincode {body.chaincode!r}")
        network.channel(body.channel).install_chaincode(DonationContract())
        return {"deployed": body.chaincode, "channel": body.channel}

    @app.post("/admin/shutdown", status_code=202)
    def admin_shutdown(ident: Identity = Depends(current_identity)):
        require_admin(ident)

        def stop():
            network.shutdown()
            os.kill(os.getpid(), signal.SIGTERM)

        threading.Timer(0.2, stop).start()
        return {"status": "stopping"}

    if console_dir is not None and Path(console_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")

    return app
