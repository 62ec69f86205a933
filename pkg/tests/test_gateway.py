"""HTTP gateway: auth flow, REST surface, error mapping, transport stream.

Everything runs against an in-process network through the FastAPI test
client; record ids are uuid-suffixed so tests can share one stack.
"""

import json
import threading
import time
import uuid

import pytest
from fastapi.testclient import TestClient

from donorchain.gateway import create_app
from donorchain.identity import Role
from donorchain.topology import build_network, default_topology


def rid(prefix):
    return f"{prefix}-{uuid.uuid4().hex[:8]}"


def record(record_id, organ="kidney", blood="o+", gender="f"):
    return {
        "ID": record_id,
        "firstName": "F",
        "lastName": "L",
        "age": 41,
        "phoneNumber": "123",
        "address": "x",
        "organRequired": organ,
        "bloodgroup": blood,
        "gender": gender,
        "medhistory": "none",
    }


def login(client, running, identity_id):
    nonce = client.post("/auth/nonce", json={"identity_id": identity_id}).json()["nonce"]
    sig = running.wallet[identity_id].sign(nonce.encode()).sig.hex()
    resp = client.post(
        "/auth/login",
        json={"identity_id": identity_id, "nonce": nonce, "signature": sig},
    )
    assert resp.status_code == 200, resp.text
    return {"Authorization": f"Bearer {resp.json()['token']}"}


@pytest.fixture(scope="module")
def gw():
    topo = default_topology()
    topo.channels[0].ordering.batch_timeout = 0.05
    running = build_network(topo)
    # a patient-facing login whose identity id doubles as their record id
    _, key = running.registry.enroll_identity(
        "hospital-a", Role.PATIENT, identity_id="pat-self"
    )
    running.wallet["pat-self"] = key
    app = create_app(running, await_timeout=10.0)
    with TestClient(app) as client:
        tokens = {
            iid: login(client, running, iid)
            for iid in ("staff-a", "staff-b", "auditor-1", "admin-1", "transporter-1", "pat-self")
        }
        yield client, running, tokens
    running.shutdown()


def add(gw_tuple, who, kind, rec, expect=201):
    client, _, tokens = gw_tuple
    resp = client.post(f"/{kind}", json=rec, headers=tokens[who])
    assert resp.status_code == expect, resp.text
    return resp


# -- auth ---------------------------------------------------------------------------


def test_healthz_needs_no_token(gw):
    client, _, _ = gw
    body = client.get("/healthz").json()
    assert body["status"] == "ok"
    assert body["channel"] == "donation-system"


def test_nonce_for_unknown_identity(gw):
    client, _, _ = gw
    assert client.post("/auth/nonce", json={"identity_id": "ghost"}).status_code == 401


def test_login_rejects_wrong_nonce(gw):
    client, running, _ = gw
    client.post("/auth/nonce", json={"identity_id": "staff-a"})
    sig = running.wallet["staff-a"].sign(b"not-the-nonce").sig.hex()
    resp = client.post(
        "/auth/login",
        json={"identity_id": "staff-a", "nonce": "not-the-nonce", "signature": sig},
    )
    assert resp.status_code == 401


def test_login_rejects_wrong_key(gw):
    client, running, _ = gw
    nonce = client.post("/auth/nonce", json={"identity_id": "staff-a"}).json()["nonce"]
    sig = running.wallet["staff-b"].sign(nonce.encode()).sig.hex()
    resp = client.post(
        "/auth/login",
        json={"identity_id": "staff-a", "nonce": nonce, "signature": sig},
    )
    assert resp.status_code == 401


def test_login_rejects_non_hex_signature(gw):
    client, _, _ = gw
    nonce = client.post("/auth/nonce", json={"identity_id": "staff-a"}).json()["nonce"]
    resp = client.post(
        "/auth/login",
        json={"identity_id": "staff-a", "nonce": nonce, "signature": "zz-not-hex"},
    )
    assert resp.status_code == 401


def test_nonce_is_single_use(gw):
    client, running, _ = gw
    nonce = client.post("/auth/nonce", json={"identity_id": "staff-a"}).json()["nonce"]
    sig = running.wallet["staff-a"].sign(nonce.encode()).sig.hex()
    body = {"identity_id": "staff-a", "nonce": nonce, "signature": sig}
    assert client.post("/auth/login", json=body).status_code == 200
    assert client.post("/auth/login", json=body).status_code == 401  # consumed


def test_routes_require_token(gw):
    client, _, _ = gw
    assert client.get("/patients").status_code == 401
    assert client.get("/patients", headers={"Authorization": "Bearer junk"}).status_code == 401
    assert client.get("/patients", headers={"Authorization": "Basic abc"}).status_code == 401


def test_sessions_expire():
    topo = default_topology()
    topo.channels[0].ordering.batch_timeout = 0.05
    running = build_network(topo)
    try:
        app = create_app(running, await_timeout=5.0, session_ttl_s=0.05)
        with TestClient(app) as client:
            headers = login(client, running, "auditor-1")
            assert client.get("/patients", headers=headers).status_code == 200
            time.sleep(0.12)
            assert client.get("/patients", headers=headers).status_code == 401
    finally:
        running.shutdown()


# -- record routes ---------------------------------------------------------------------


def test_add_patient_and_read_back(gw):
    client, _, tokens = gw
    pid = rid("p")
    ack = add(gw, "staff-a", "patients", record(pid)).json()
    assert ack["flag"] == "valid"
    assert ack["block_number"] >= 1
    assert ack["result"] == {"key": f"PAT_{pid}"}
    got = client.get(f"/patients/{pid}", headers=tokens["staff-a"]).json()
    assert got["ID"] == pid
    assert got["hospitalId"] == "hospital-a"  # forced server-side
    assert got["status"] == "waiting"
    assert got["match"] == ""


def test_add_donor_and_read_back(gw):
    client, _, tokens = gw
    did = rid("d")
    ack = add(gw, "staff-b", "donors", record(did)).json()
    assert ack["result"] == {"key": f"DON_{did}"}
    got = client.get(f"/donors/{did}", headers=tokens["staff-b"]).json()
    assert got["hospitalId"] == "hospital-b"


def test_duplicate_id_conflict(gw):
    client, _, _ = gw
    pid = rid("p")
    add(gw, "staff-a", "patients", record(pid))
    resp = add(gw, "staff-a", "patients", record(pid), expect=409)
    assert resp.json()["error"] == "duplicate_id"


def test_contract_validation_maps_to_422(gw):
    resp = add(gw, "staff-a", "patients", record(rid("p"), gender="x"), expect=422)
    assert resp.json()["error"] == "validation_error"


def test_schema_violation_is_422(gw):
    client, _, tokens = gw
    incomplete = {"ID": rid("p"), "firstName": "F"}
    assert client.post("/patients", json=incomplete, headers=tokens["staff-a"]).status_code == 422


def test_missing_record_404(gw):
    client, _, tokens = gw
    resp = client.get("/patients/never-there", headers=tokens["staff-a"])
    assert resp.status_code == 404
    assert resp.json()["error"] == "not_found"


def test_delete_roundtrip(gw):
    client, _, tokens = gw
    did = rid("d")
    add(gw, "staff-a", "donors", record(did))
    assert client.delete(f"/donors/{did}", headers=tokens["staff-a"]).status_code == 200
    assert client.get(f"/donors/{did}", headers=tokens["staff-a"]).status_code == 404


def test_hospital_scoped_listings(gw):
    client, _, tokens = gw
    pid = rid("p")
    add(gw, "staff-a", "patients", record(pid))
    mine = client.get("/hospitals/hospital-a/patients", headers=tokens["staff-a"]).json()
    assert pid in {r["ID"] for r in mine}
    assert all(r["hospitalId"] == "hospital-a" for r in mine)
    # staff may not pull another hospital's listing
    other = client.get("/hospitals/hospital-b/patients", headers=tokens["staff-a"])
    assert other.status_code == 403


# -- authorization through the API ---------------------------------------------------------


def test_cross_hospital_record_read_denied(gw):
    client, _, tokens = gw
    pid = rid("p")
    add(gw, "staff-a", "patients", record(pid))
    resp = client.get(f"/patients/{pid}", headers=tokens["staff-b"])
    assert resp.status_code == 403
    assert resp.json()["error"] == "unauthorized"


def test_auditor_reads_everything_writes_nothing(gw):
    client, _, tokens = gw
    pid = rid("p")
    add(gw, "staff-a", "patients", record(pid))
    allp = client.get("/patients", headers=tokens["auditor-1"]).json()
    assert pid in {r["ID"] for r in allp}
    assert client.get(f"/patients/{pid}", headers=tokens["auditor-1"]).status_code == 200
    assert add(gw, "auditor-1", "patients", record(rid("p")), expect=403).json()["error"] == "unauthorized"
    assert client.delete(f"/patients/{pid}", headers=tokens["auditor-1"]).status_code == 403
    assert client.post(f"/patients/{pid}/find-match", headers=tokens["auditor-1"]).status_code == 403


def test_admin_deletes_across_hospitals_but_cannot_add(gw):
    client, _, tokens = gw
    did = rid("d")
    add(gw, "staff-b", "donors", record(did))
    assert add(gw, "admin-1", "donors", record(rid("d")), expect=403).json()["error"] == "unauthorized"
    assert client.delete(f"/donors/{did}", headers=tokens["admin-1"]).status_code == 200


def test_transporter_sees_feed_not_records(gw):
    client, _, tokens = gw
    assert client.get("/patients", headers=tokens["transporter-1"]).status_code == 403
    assert add(gw, "transporter-1", "donors", record(rid("d")), expect=403)
    resp = client.get("/events/transport", params={"limit": 0}, headers=tokens["transporter-1"])
    assert resp.status_code == 200


def test_patient_login_reads_own_record_only(gw):
    client, _, tokens = gw
    add(gw, "staff-a", "patients", record("pat-self"))
    own = client.get("/patients/pat-self", headers=tokens["pat-self"])
    assert own.status_code == 200
    assert own.json()["ID"] == "pat-self"
    other = rid("p")
    add(gw, "staff-a", "patients", record(other))
    assert client.get(f"/patients/{other}", headers=tokens["pat-self"]).status_code == 403
    assert client.get("/patients", headers=tokens["pat-self"]).status_code == 403
    donor = rid("d")
    add(gw, "staff-a", "donors", record(donor))
    assert client.get(f"/donors/{donor}", headers=tokens["pat-self"]).status_code == 403


def test_staff_cannot_reach_transport_feed(gw):
    client, _, tokens = gw
    resp = client.get("/events/transport", params={"limit": 0}, headers=tokens["staff-a"])
    assert resp.status_code == 403


# -- matchmaking flow ------------------------------------------------------------------------


def test_find_select_status_flow(gw):
    client, _, tokens = gw
    pid, d_ok, d_far = rid("p"), rid("d"), rid("d")
    add(gw, "staff-a", "patients", record(pid, blood="a+"))
    add(gw, "staff-a", "donors", record(d_ok, blood="a+"))
    add(gw, "staff-a", "donors", record(d_far, blood="b-"))

    found = client.post(f"/patients/{pid}/find-match", headers=tokens["staff-a"]).json()
    assert found["patientId"] == pid
    assert d_ok in found["candidates"] and d_far not in found["candidates"]

    before = client.get(f"/patients/{pid}/status", headers=tokens["staff-a"]).json()
    assert before["status"] == "Waiting" and before["matchedDonorId"] is None
    assert before["waiting_time_s"] >= 0.0

    sel = client.post(
        "/match/select",
        json={"patientId": pid, "donorId": d_ok},
        headers=tokens["staff-a"],
    )
    assert sel.status_code == 200, sel.text
    assert sel.json()["flag"] == "valid"

    after = client.get(f"/patients/{pid}/status", headers=tokens["staff-a"]).json()
    assert after["status"] == "Matched"
    assert after["matchedDonorId"] == d_ok
    donor = client.get(f"/donors/{d_ok}", headers=tokens["staff-a"]).json()
    assert donor["match"] == pid and donor["status"] == "matched"

    # the matched pair is now frozen
    assert client.delete(f"/patients/{pid}", headers=tokens["staff-a"]).status_code == 409
    again = client.post(
        "/match/select",
        json={"patientId": pid, "donorId": d_ok},
        headers=tokens["staff-a"],
    )
    assert again.status_code == 409


def test_incompatible_select_rejected(gw):
    client, _, tokens = gw
    pid, did = rid("p"), rid("d")
    add(gw, "staff-a", "patients", record(pid, blood="a+"))
    add(gw, "staff-a", "donors", record(did, blood="ab-"))
    resp = client.post(
        "/match/select", json={"patientId": pid, "donorId": did}, headers=tokens["staff-a"]
    )
    assert resp.status_code == 422
    assert resp.json()["error"] == "not_a_match"


def test_racing_selects_one_winner(gw):
    client, _, tokens = gw
    p1, p2, did = rid("p"), rid("p"), rid("d")
    for pid in (p1, p2):
        add(gw, "staff-a", "patients", record(pid))
    add(gw, "staff-a", "donors", record(did))

    results = {}

    def fire(pid):
        results[pid] = client.post(
            "/match/select", json={"patientId": pid, "donorId": did}, headers=tokens["staff-a"]
        )

    threads = [threading.Thread(target=fire, args=(pid,)) for pid in (p1, p2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    codes = sorted(r.status_code for r in results.values())
    assert codes == [200, 409], {k: (v.status_code, v.text) for k, v in results.items()}
    donor = client.get(f"/donors/{did}", headers=tokens["staff-a"]).json()
    winner = p1 if results[p1].status_code == 200 else p2
    assert donor["match"] == winner


# -- generic invoke/query and chain inspection ------------------------------------------------


def test_generic_invoke_and_query(gw):
    client, _, tokens = gw
    did = rid("d")
    resp = client.post(
        "/invoke",
        json={"method": "addDonor", "args": [json.dumps(record(did))]},
        headers=tokens["staff-a"],
    )
    assert resp.status_code == 200
    assert resp.json()["flag"] == "valid"
    q = client.post(
        "/query", json={"method": "getDonor", "args": [did]}, headers=tokens["staff-a"]
    )
    assert q.status_code == 200
    assert q.json()["result"]["ID"] == did


def test_unknown_chaincode_404(gw):
    client, _, tokens = gw
    for route in ("/invoke", "/query"):
        resp = client.post(
            route,
            json={"chaincode": "voting", "method": "x", "args": []},
            headers=tokens["staff-a"],
        )
        assert resp.status_code == 404


def test_unknown_method_maps_to_422(gw):
    client, _, tokens = gw
    resp = client.post(
        "/query", json={"method": "mintCoins", "args": []}, headers=tokens["staff-a"]
    )
    assert resp.status_code == 422
    assert resp.json()["error"] == "validation_error"


def test_tx_lookup(gw):
    client, _, tokens = gw
    ack = add(gw, "staff-a", "patients", record(rid("p"))).json()
    found = client.get(f"/tx/{ack['tx_id']}", headers=tokens["staff-a"]).json()
    assert found["flag"] == "valid"
    assert found["block_number"] == ack["block_number"]
    assert found["method"] == "addPatient"
    assert client.get("/tx/nope", headers=tokens["staff-a"]).status_code == 404


def test_chain_verify_reports_intact(gw):
    client, _, tokens = gw
    body = client.get("/chain/verify", headers=tokens["staff-a"]).json()
    assert body["ok"] is True
    assert body["bad_block"] is None
    assert body["height"] >= 1


# -- transport stream ----------------------------------------------------------------------


def parse_sse(text):
    events = []
    for chunk in text.split("\n\n"):
        chunk = chunk.strip()
        if not chunk or chunk.startswith(":"):
            continue
        fields = {}
        for line in chunk.splitlines():
            key, _, value = line.partition(": ")
            fields[key] = value
        events.append(fields)
    return events


def make_match(gw_tuple, blood="o-"):
    client, _, tokens = gw_tuple
    pid, did = rid("p"), rid("d")
    add(gw_tuple, "staff-a", "patients", record(pid, blood=blood))
    add(gw_tuple, "staff-b", "donors", record(did, blood=blood))
    resp = client.post(
        "/match/select", json={"patientId": pid, "donorId": did}, headers=tokens["staff-a"]
    )
    assert resp.status_code == 200, resp.text
    return pid, did


@pytest.fixture
def fresh_gw():
    """Private stack so notice counts are exact; limits must match what the
    chain holds or the buffering test client would wait on the open stream."""
    topo = default_topology()
    topo.channels[0].ordering.batch_timeout = 0.05
    running = build_network(topo)
    app = create_app(running, await_timeout=10.0)
    with TestClient(app) as client:
        tokens = {
            iid: login(client, running, iid)
            for iid in ("staff-a", "staff-b", "transporter-1")
        }
        yield client, running, tokens
    running.shutdown()


def test_transport_notice_content(fresh_gw):
    client, _, tokens = fresh_gw
    pid, did = make_match(fresh_gw)
    resp = client.get("/events/transport", params={"limit": 1}, headers=tokens["transporter-1"])
    assert resp.status_code == 200
    assert resp.headers["content-type"].startswith("text/event-stream")
    events = parse_sse(resp.text)
    assert len(events) == 1
    notice = json.loads(events[0]["data"])
    assert notice == {
        "noticeId": events[0]["id"],
        "patientId": pid,
        "donorId": did,
        "organ": "kidney",
        "sourceHospital": "hospital-b",
        "destinationHospital": "hospital-a",
        "createdAtBlock": int(events[0]["id"].split(".")[0]),
    }
    assert events[0]["event"] == "transport"


def test_transport_resume_skips_delivered(fresh_gw):
    client, _, tokens = fresh_gw
    p1, _ = make_match(fresh_gw)
    p2, _ = make_match(fresh_gw, blood="a-")
    first = parse_sse(
        client.get(
            "/events/transport", params={"limit": 2}, headers=tokens["transporter-1"]
        ).text
    )
    assert [json.loads(e["data"])["patientId"] for e in first] == [p1, p2]
    ids = [tuple(map(int, e["id"].split("."))) for e in first]
    assert ids == sorted(ids) and len(set(ids)) == 2
    cursor = first[0]["id"]
    resumed = parse_sse(
        client.get(
            "/events/transport",
            params={"limit": 1},
            headers={**tokens["transporter-1"], "Last-Event-ID": cursor},
        ).text
    )
    assert [json.loads(e["data"])["patientId"] for e in resumed] == [p2]
    # the ?last_id= fallback behaves like the header
    resumed_q = parse_sse(
        client.get(
            "/events/transport",
            params={"limit": 1, "last_id": cursor},
            headers=tokens["transporter-1"],
        ).text
    )
    assert [json.loads(e["data"])["patientId"] for e in resumed_q] == [p2]


def test_transport_bad_cursor_rejected(gw):
    client, _, tokens = gw
    resp = client.get(
        "/events/transport",
        params={"limit": 1},
        headers={**tokens["transporter-1"], "Last-Event-ID": "one.two"},
    )
    assert resp.status_code == 422


def test_auditor_may_watch_transport_feed(gw):
    client, _, tokens = gw
    resp = client.get("/events/transport", params={"limit": 0}, headers=tokens["auditor-1"])
    assert resp.status_code == 200


# -- operator routes -------------------------------------------------------------------------


def test_admin_routes_need_admin_role(gw):
    client, _, tokens = gw
    for method, route in (
        ("get", "/admin/peers"),
        ("get", "/admin/state-export"),
        ("get", "/admin/chain-export"),
        ("post", "/admin/shutdown"),
    ):
        resp = getattr(client, method)(route, headers=tokens["staff-a"])
        assert resp.status_code == 403, route


def test_admin_peer_listing(gw):
    client, running, tokens = gw
    peers = client.get("/admin/peers", headers=tokens["admin-1"]).json()
    assert {p["peer_id"] for p in peers} == set(running.network.peers)
    joined = [p for p in peers if "donation-system" in p["channels"]]
    assert len(joined) == 5  # gov 1, hospital-a 2, hospital-b 1, admin-org 1


def test_admin_exports(gw):
    client, running, tokens = gw
    state = client.get("/admin/state-export", headers=tokens["admin-1"])
    assert state.status_code == 200
    channel = running.network.channel("donation-system")
    assert state.content == channel.export_state()
    chain = client.get("/admin/chain-export", headers=tokens["admin-1"])
    blocks = json.loads(chain.content)
    assert len(blocks) == channel.height
    assert blocks[0]["number"] == 0
    missing = client.get(
        "/admin/state-export", params={"peer": "ghost"}, headers=tokens["admin-1"]
    )
    assert missing.status_code == 404


def test_admin_creates_channel_and_deploys(gw):
    client, running, tokens = gw
    resp = client.post(
        "/admin/channels",
        json={
            "name": "ops-lane",
            "members": ["gov", "hospital-a"],
            "policy": "(and gov (submitter))",
            "ordering": {"mode": "solo", "batch_timeout": 0.05},
            "chaincodes": [],
        },
        headers=tokens["admin-1"],
    )
    assert resp.status_code == 201, resp.text
    assert "ops-lane" in running.network.channels
    deploy = client.post(
        "/admin/chaincode",
        json={"channel": "ops-lane", "chaincode": "donation"},
        headers=tokens["admin-1"],
    )
    assert deploy.status_code == 200
    bad = client.post(
        "/admin/chaincode",
        json={"channel": "ops-lane", "chaincode": "voting"},
        headers=tokens["admin-1"],
    )
    assert bad.status_code == 404
