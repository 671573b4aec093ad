"""REST surface: auth, routes, status codes, and engine equivalence.

The differential test drives the same operation sequence over HTTP and
directly against a twin engine, then compares state snapshots with
non-deterministic fields (timestamps, salts, nonce-dependent digests)
stripped.
"""
from __future__ import annotations

import base64
import os

import pytest
from fastapi.testclient import TestClient
from filelock import FileLock

from descrow.errors import IoFailure
from descrow.server import ServeConfig, create_app, serve, _load_program
from descrow.vault import new_key

from conftest import toy_program, add_agent, upload_text


@pytest.fixture
def client(factory):
    es = factory.open()
    app = create_app(es)
    with TestClient(app) as c:
        c.escrow = es
        yield c


def register(client, name, password="pw", external_id=None):
    """Register + login + key submission; returns (agent_id, token, key)."""
    r = client.post("/agents", json={"name": name, "password": password,
                                     "external_id": external_id or name})
    assert r.status_code == 201, r.text
    agent_id = r.json()["agent_id"]
    r = client.post("/login", json={"external_id": external_id or name,
                                    "password": password})
    assert r.status_code == 200
    token = r.json()["token"]
    key = new_key()
    r = client.post("/keys", json={"key_b64": base64.b64encode(key).decode()},
                    headers=auth(token))
    assert r.status_code == 204
    assert r.content == b""  # the key is never echoed back
    return agent_id, token, key


def auth(token):
    return {"Authorization": f"Bearer {token}"}


def upload(client, token, text: str, discoverable=False) -> int:
    r = client.post("/data", json={"type": "kv", "discoverable": discoverable},
                    headers=auth(token))
    assert r.status_code == 201
    de_id = r.json()["de_id"]
    r = client.put(f"/data/{de_id}/content", content=text.encode(),
                   headers=auth(token))
    assert r.status_code == 204
    return de_id


# --- auth -----------------------------------------------------------------------

def test_register_login_and_token_use(client):
    a, token, _ = register(client, "alpha")
    r = client.get("/functions", headers=auth(token))
    assert r.status_code == 200
    names = [f["name"] for f in r.json()["functions"]]
    assert "ping" in names and "gated_only" not in names


def test_register_requires_password(client):
    r = client.post("/agents", json={"name": "nopass"})
    assert r.status_code == 422
    assert r.json()["code"] == "InvalidArgument"


def test_duplicate_external_id_is_conflict(client):
    register(client, "alpha")
    r = client.post("/agents", json={"name": "alpha2", "password": "pw",
                                     "external_id": "alpha"})
    assert r.status_code == 409
    assert r.json()["code"] == "DuplicateExternalId"


def test_bad_login_is_401(client):
    register(client, "alpha")
    r = client.post("/login", json={"external_id": "alpha", "password": "nope"})
    assert r.status_code == 401
    assert r.json() == {"code": "AuthFailure", "message": "bad credentials"}
    r = client.post("/login", json={"password": "pw"})
    assert r.status_code == 422


def test_missing_or_garbage_token_is_401(client):
    for headers in ({}, auth("garbage"), {"Authorization": "Basic abc"}):
        r = client.get("/functions", headers=headers)
        assert r.status_code == 401
        assert r.json()["code"] == "AuthFailure"


def test_key_must_be_32_bytes(client):
    _, token, _ = register(client, "alpha")
    r = client.post("/keys", json={"key_b64": base64.b64encode(b"short").decode()},
                    headers=auth(token))
    assert r.status_code == 422


# --- data ------------------------------------------------------------------------

def test_data_upload_and_discoverability(client):
    a, ta, _ = register(client, "alpha")
    b, tb, _ = register(client, "beta")
    d1 = upload(client, ta, "hello", discoverable=True)
    d2 = upload(client, ta, "hidden")
    r = client.get("/data/discoverable", headers=auth(tb))
    assert r.json() == {"elements": [{"id": d1, "type": "kv"}]}


def test_upload_conflicts_and_ownership(client):
    a, ta, _ = register(client, "alpha")
    b, tb, _ = register(client, "beta")
    d1 = upload(client, ta, "mine")
    r = client.put(f"/data/{d1}/content", content=b"again", headers=auth(ta))
    assert r.status_code == 409 and r.json()["code"] == "DuplicateKey"
    r = client.put(f"/data/{d1}/content", content=b"theirs", headers=auth(tb))
    assert r.status_code == 403 and r.json()["code"] == "OwnerMismatch"
    r = client.put("/data/999/content", content=b"x", headers=auth(ta))
    assert r.status_code == 404
    r = client.post("/data", json={"type": "nope"}, headers=auth(ta))
    assert r.status_code == 422 and r.json()["code"] == "UnsupportedType"


# --- contracts ---------------------------------------------------------------------

def lifecycle_setup(client):
    a, ta, ka = register(client, "alpha")
    b, tb, kb = register(client, "beta")
    d1 = upload(client, ta, "left")
    d2 = upload(client, tb, "right")
    r = client.post("/contracts", json={
        "dest_agents": [b], "de_ids": [d1, d2], "function": "concat",
        "args": {"de_ids": [d1, d2], "sep": "+"},
    }, headers=auth(tb))
    assert r.status_code == 201
    body = r.json()
    assert body["status"] == "proposed"
    return a, ta, b, tb, d1, d2, body["contract_id"]


def test_contract_lifecycle_over_http(client):
    a, ta, b, tb, d1, d2, cid = lifecycle_setup(client)

    r = client.get("/contracts/pending", headers=auth(ta))
    pend = r.json()["contracts"]
    assert [c["id"] for c in pend] == [cid]
    contract = pend[0]
    # the full agreement is visible to the approver
    assert contract["dest_agents"] == [b]
    assert contract["data_elements"] == [d1, d2]
    assert contract["function"] == "concat"
    assert contract["args"] == {"de_ids": [d1, d2], "sep": "+"}
    assert sorted(map(int, contract["approvals"])) == [a, b]

    assert client.post(f"/contracts/{cid}/approve",
                       headers=auth(ta)).json()["status"] == "proposed"
    assert client.post(f"/contracts/{cid}/approve",
                       headers=auth(tb)).json()["status"] == "approved"
    assert client.get("/contracts/pending", headers=auth(ta)).json()["contracts"] == []

    r = client.post("/functions/concat/call",
                    json={"args": {"de_ids": [d1, d2], "sep": "+"}},
                    headers=auth(tb))
    assert r.status_code == 200
    body = r.json()
    assert body["kind"] == "execution"
    assert body["result"]["condition_outcome"] == {"kind": "released", "message": ""}
    sealed = base64.b64decode(body["result"]["output_b64"])
    assert client.escrow.unseal_for_caller(b, sealed) == b"left+right"


def test_denial_reason_and_conflict(client):
    a, ta, b, tb, d1, d2, cid = lifecycle_setup(client)
    r = client.post(f"/contracts/{cid}/deny", json={"reason": "no thanks"},
                    headers=auth(ta))
    assert r.json()["status"] == "denied"
    r = client.post(f"/contracts/{cid}/approve", headers=auth(tb))
    assert r.status_code == 409 and r.json()["code"] == "AlreadyDecided"


def test_contract_access_errors(client):
    a, ta, b, tb, d1, d2, cid = lifecycle_setup(client)
    c, tc, _ = register(client, "gamma")
    r = client.post(f"/contracts/{cid}/approve", headers=auth(tc))
    assert r.status_code == 403 and r.json()["code"] == "NotASourceAgent"
    r = client.post(f"/contracts/{cid + 99}/approve", headers=auth(ta))
    assert r.status_code == 404 and r.json()["code"] == "UnknownContract"
    r = client.post("/contracts", json={"dest_agents": [b], "de_ids": [999],
                                        "function": "concat", "args": {}},
                    headers=auth(tb))
    assert r.status_code == 404 and r.json()["code"] == "UnknownDataElement"
    r = client.post("/contracts", json={"dest_agents": [b], "de_ids": [d1],
                                        "function": "ping", "args": {}},
                    headers=auth(tb))
    assert r.status_code == 404 and r.json()["code"] == "UnknownFunction"


def test_unmatched_call_is_422(client):
    a, ta, b, tb, d1, d2, cid = lifecycle_setup(client)
    r = client.post("/functions/concat/call",
                    json={"args": {"de_ids": [d1, d2], "sep": "+"}},
                    headers=auth(tb))
    assert r.status_code == 422
    assert r.json()["code"] == "NoMatchingContract"
    r = client.post("/functions/gated_only/call", json={}, headers=auth(tb))
    assert r.status_code == 404


def test_short_circuit_message_is_opaque(client):
    a, ta, b, tb, d1, d2, cid = lifecycle_setup(client)
    c, tc, _ = register(client, "gamma")
    d3 = upload(client, tc, "untouchable")
    # approved contract over d1 only, but the call names d3
    r = client.post("/contracts", json={
        "dest_agents": [b], "de_ids": [d1], "function": "peek",
        "args": {"de_id": d3},
    }, headers=auth(tb))
    cid2 = r.json()["contract_id"]
    client.post(f"/contracts/{cid2}/approve", headers=auth(ta))
    r = client.post("/functions/peek/call", json={"args": {"de_id": d3}},
                    headers=auth(tb))
    assert r.status_code == 403
    assert r.json() == {"code": "ShortCircuited", "message": "execution denied"}
    assert "untouchable" not in r.text


def test_endpoint_call_and_rules(client):
    a, ta, _ = register(client, "alpha")
    r = client.post("/functions/ping/call", json={"args": {"value": 3}},
                    headers=auth(ta))
    assert r.json() == {"kind": "endpoint", "result": {"pong": 3}}

    r = client.post("/rules", json={"decision": "approve", "functions": ["peek"],
                                    "description": "fine by me"},
                    headers=auth(ta))
    assert r.status_code == 201
    rule_id = r.json()["rule_id"]
    r = client.get("/rules", headers=auth(ta))
    assert [x["id"] for x in r.json()["rules"]] == [rule_id]
    b, tb, _ = register(client, "beta")
    assert client.get("/rules", headers=auth(tb)).json() == {"rules": []}


def test_healthz_is_public(client):
    r = client.get("/healthz")
    assert r.status_code == 200
    assert r.json()["status"] == "ready"


def test_audit_requires_auditor(factory):
    es = factory.open(auditor_external_ids=("aud",))
    with TestClient(create_app(es)) as client:
        a, ta, _ = register(client, "alpha")
        aud, taud, _ = register(client, "aud")
        r = client.get("/audit", headers=auth(ta))
        assert r.status_code == 403 and r.json()["code"] == "NotOwner"
        d1 = upload(client, ta, "x")
        r = client.post("/contracts", json={
            "dest_agents": [a], "de_ids": [d1], "function": "peek",
            "args": {"de_id": d1}}, headers=auth(ta))
        cid = r.json()["contract_id"]
        client.post(f"/contracts/{cid}/deny", json={"reason": "privacy"},
                    headers=auth(taud))
        events = client.get("/audit", headers=auth(taud)).json()["events"]
        assert [e["kind"] for e in events] == ["proposal", "denial"]
        assert events[1]["detail"]["reason"] == "privacy"


# --- differential: HTTP vs direct engine --------------------------------------------

STRIPPED = {"timestamp", "created_at", "password_hash", "digest", "ts"}


def strip(value):
    if isinstance(value, dict):
        return {k: strip(v) for k, v in value.items() if k not in STRIPPED}
    if isinstance(value, list):
        return [strip(v) for v in value]
    return value


def test_http_and_engine_produce_equal_state(factory):
    es_http = factory.open()
    es_direct = factory.open()

    with TestClient(create_app(es_http)) as client:
        # --- over HTTP
        a, ta, _ = register(client, "alpha")
        b, tb, _ = register(client, "beta")
        d1 = upload(client, ta, "left", discoverable=True)
        d2 = upload(client, tb, "right")
        r = client.post("/contracts", json={
            "dest_agents": [b], "de_ids": [d1, d2], "function": "concat",
            "args": {"de_ids": [d1, d2], "sep": "+"}, "max_uses": 2,
        }, headers=auth(tb))
        cid = r.json()["contract_id"]
        client.post("/rules", json={"decision": "approve",
                                    "functions": ["peek"]}, headers=auth(ta))
        client.post(f"/contracts/{cid}/approve", headers=auth(ta))
        client.post(f"/contracts/{cid}/approve", headers=auth(tb))
        client.post("/functions/concat/call",
                    json={"args": {"de_ids": [d1, d2], "sep": "+"}},
                    headers=auth(tb))

    # --- the same history, engine API only
    a2, _ = add_agent(es_direct, "alpha", external_id="alpha", password="pw")
    b2, _ = add_agent(es_direct, "beta", external_id="beta", password="pw")
    assert (a2, b2) == (a, b)
    upload_text(es_direct, a2, "left", discoverable=True)
    upload_text(es_direct, b2, "right")
    cid2 = es_direct.propose_contract(b2, dest=[b2], de_ids=[d1, d2],
                                      function="concat",
                                      args={"de_ids": [d1, d2], "sep": "+"},
                                      max_uses=2)
    es_direct.register_cmr(a2, decision="approve", functions=["peek"])
    es_direct.approve_contract(a2, cid2)
    es_direct.approve_contract(b2, cid2)
    es_direct.call_function(b2, "concat", {"de_ids": [d1, d2], "sep": "+"})

    assert strip(es_http.state_snapshot()) == strip(es_direct.state_snapshot())


# --- process exclusivity ---------------------------------------------------------------

def test_serve_refuses_an_already_served_data_dir(tmp_path):
    holder = FileLock(os.path.join(str(tmp_path), ".serve.lock"))
    holder.acquire(timeout=0)
    try:
        with pytest.raises(IoFailure, match="another server"):
            serve(ServeConfig(data_dir=str(tmp_path), master_key=new_key(),
                              program=toy_program()))
    finally:
        holder.release()


def test_program_loader_accepts_builtins_and_paths():
    assert _load_program("fraud").name
    assert _load_program("health").name
    assert _load_program("ads").name
    prog = _load_program("conftest:toy_program")
    assert prog.name == "toy"
    with pytest.raises(ValueError):
        _load_program("mystery")
