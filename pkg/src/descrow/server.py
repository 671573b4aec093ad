"""REST surface for one escrow instance.

Agents register with a password, log in for a bearer token, submit their
symmetric key, and then drive the full contract lifecycle over HTTP. Errors
come back as ``{"code": ..., "message": ...}`` with the code taken from the
engine's exception hierarchy. A lock file under the data directory keeps a
second server process off the same escrow state.
"""
from __future__ import annotations

import base64
import logging
import os
import secrets
import time
from dataclasses import dataclass, field
from typing import Optional

from fastapi import Depends, FastAPI, Header, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from filelock import FileLock, Timeout

from . import errors as E
from .engine import Escrow, EscrowConfig
from .runtime import ExecutionResult, SharingProgram
from .vault import KEY_SIZE

logger = logging.getLogger(__name__)

SESSION_TTL_SECONDS = 12 * 3600
UPLOAD_CHUNK = 1 << 20

_STATUS_BY_CODE = {
    "UnknownAgent": 404,
    "UnknownDataElement": 404,
    "UnknownContract": 404,
    "UnknownFunction": 404,
    "StaleId": 404,
    "NotASourceAgent": 403,
    "NotOwner": 403,
    "NotDestinationAgent": 403,
    "OwnerMismatch": 403,
    "ShortCircuited": 403,
    "AlreadyDecided": 409,
    "DuplicateKey": 409,
    "DuplicateExternalId": 409,
    "MissingKey": 409,
    "KeyMismatch": 409,
    "NoMatchingContract": 422,
    "UnsupportedType": 422,
    "EmptyJoin": 422,
    "BoundExceeded": 422,
    "InvalidArgument": 422,
    "AuthFailure": 401,
    "FunctionFailed": 500,
    "IoFailure": 500,
    "CorruptLog": 500,
}


@dataclass
class Session:
    token: str
    agent_id: int
    expires_at: float


@dataclass
class ServerState:
    escrow: Escrow
    sessions: dict = field(default_factory=dict)

    def issue_token(self, agent_id: int) -> str:
        token = secrets.token_urlsafe(32)
        self.sessions[token] = Session(
            token=token, agent_id=agent_id,
            expires_at=time.time() + SESSION_TTL_SECONDS,
        )
        return token

    def agent_for(self, token: str) -> Optional[int]:
        session = self.sessions.get(token)
        if session is None or session.expires_at < time.time():
            self.sessions.pop(token, None)
            return None
        return session.agent_id


def _error_response(code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=_STATUS_BY_CODE.get(code, 500),
        content={"code": code, "message": message},
    )


def create_app(escrow: Escrow, console_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="data escrow", version="0.1.0")
    state = ServerState(escrow=escrow)
    app.state.escrow_state = state

    @app.exception_handler(E.EscrowError)
    async def _escrow_error(_req, exc: E.EscrowError):
        message = exc.message
        if isinstance(exc, E.ShortCircuited):
            message = "execution denied"  # no detail leaves the engine
        return _error_response(exc.code, message)

    @app.exception_handler(ValueError)
    async def _value_error(_req, exc: ValueError):
        return _error_response("InvalidArgument", str(exc))

    def current_agent(authorization: Optional[str] = Header(default=None)) -> int:
        if not authorization or not authorization.startswith("Bearer "):
            raise E.AuthFailure("missing bearer token")
        agent_id = state.agent_for(authorization.removeprefix("Bearer "))
        if agent_id is None:
            raise E.AuthFailure("invalid or expired token")
        return agent_id

    # --- registration and auth ------------------------------------------

    @app.post("/agents", status_code=201)
    async def register_agent(body: dict):
        name = body.get("name", "")
        password = body.get("password")
        if not password:
            raise ValueError("a password is required to register over HTTP")
        agent_id = escrow.register_agent(
            name, external_id=body.get("external_id"), password=password,
        )
        return {"agent_id": agent_id}

    @app.post("/login")
    async def login(body: dict):
        ref = body.get("external_id") or body.get("agent_id")
        if ref is None:
            raise ValueError("external_id or agent_id required")
        agent_id = escrow.authenticate(ref, body.get("password", ""))
        return {"token": state.issue_token(agent_id), "agent_id": agent_id}

    @app.post("/keys", status_code=204)
    async def submit_key(body: dict, agent_id: int = Depends(current_agent)):
        key = base64.b64decode(body.get("key_b64", ""))
        if len(key) != KEY_SIZE:
            raise ValueError(f"key must be {KEY_SIZE} bytes, base64-encoded")
        escrow.submit_key(agent_id, key)

    # --- data elements ----------------------------------------------------

    @app.post("/data", status_code=201)
    async def register_data(body: dict, agent_id: int = Depends(current_agent)):
        de_id = escrow.register_data_element(
            agent_id,
            body.get("type", ""),
            body.get("access_parameters") or {},
            bool(body.get("discoverable", False)),
        )
        return {"de_id": de_id}

    @app.put("/data/{de_id}/content", status_code=204)
    async def upload_content(de_id: int, request: Request,
                             agent_id: int = Depends(current_agent)):
        chunks = []
        async for chunk in request.stream():
            chunks.append(chunk)
        escrow.upload_data_element(agent_id, de_id, b"".join(chunks))

    @app.get("/data/discoverable")
    async def discoverable(agent_id: int = Depends(current_agent)):
        return {"elements": escrow.list_discoverable_des(agent_id)}

    # --- contracts --------------------------------------------------------

    @app.post("/contracts", status_code=201)
    async def propose(body: dict, agent_id: int = Depends(current_agent)):
        contract_id = escrow.propose_contract(
            agent_id,
            body.get("dest_agents", []),
            body.get("de_ids", []),
            body.get("function", ""),
            body.get("args") or {},
            conditions=body.get("conditions"),
            max_uses=body.get("max_uses", 1),
            expires_at=body.get("expires_at"),
        )
        return {"contract_id": contract_id,
                "status": escrow.contract_status(contract_id)}

    @app.get("/contracts/pending")
    async def pending(agent_id: int = Depends(current_agent)):
        return {"contracts": escrow.get_pending_contracts(agent_id)}

    @app.post("/contracts/{contract_id}/approve")
    async def approve(contract_id: int, agent_id: int = Depends(current_agent)):
        return {"status": escrow.approve_contract(agent_id, contract_id)}

    @app.post("/contracts/{contract_id}/deny")
    async def deny(contract_id: int, body: Optional[dict] = None,
                   agent_id: int = Depends(current_agent)):
        reason = (body or {}).get("reason", "")
        return {"status": escrow.deny_contract(agent_id, contract_id, reason)}

    # --- contract management rules (console CMR editor posts here) --------

    @app.post("/rules", status_code=201)
    async def register_rule(body: dict, agent_id: int = Depends(current_agent)):
        rule_id = escrow.register_cmr(
            agent_id,
            decision=body.get("decision", "approve"),
            functions=body.get("functions"),
            de_ids=body.get("de_ids"),
            dest_agents=body.get("dest_agents"),
            description=body.get("description", ""),
        )
        return {"rule_id": rule_id}

    @app.get("/rules")
    async def list_rules(agent_id: int = Depends(current_agent)):
        return {"rules": escrow.list_cmrs(agent_id)}

    # --- functions ----------------------------------------------------------

    @app.get("/functions")
    async def functions(agent_id: int = Depends(current_agent)):
        return {"functions": escrow.show_functions(agent_id)}

    @app.post("/functions/{name}/call")
    async def call(name: str, body: Optional[dict] = None,
                   agent_id: int = Depends(current_agent)):
        args = (body or {}).get("args") or {}
        result = escrow.call_function(agent_id, name, args)
        if isinstance(result, ExecutionResult):
            return {"kind": "execution", "result": result.to_dict()}
        return {"kind": "endpoint", "result": result}

    # --- audit / health -----------------------------------------------------

    @app.get("/audit")
    async def audit(agent_id: int = Depends(current_agent)):
        return {"events": escrow.audit_events(agent_id)}

    @app.get("/healthz")
    async def healthz():
        return {"status": "ready", "agents": len(escrow.db.agents)}

    if console_dir and os.path.isdir(console_dir):
        app.mount("/console", StaticFiles(directory=console_dir, html=True),
                  name="console")

    return app


@dataclass
class ServeConfig:
    data_dir: str
    master_key: bytes
    host: str = "127.0.0.1"
    port: int = 8000
    program: Optional[SharingProgram] = None
    auditor_external_ids: tuple = ()
    fsync: bool = True
    console_dir: Optional[str] = None
    tls_certfile: Optional[str] = None
    tls_keyfile: Optional[str] = None


def serve(config: ServeConfig) -> None:
    """Run one escrow server; refuses to start on a data dir already served."""
    import uvicorn

    os.makedirs(config.data_dir, exist_ok=True)
    lock = FileLock(os.path.join(config.data_dir, ".serve.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise E.IoFailure(
            f"another server already holds {config.data_dir}"
        ) from None
    try:
        escrow = Escrow(
            EscrowConfig(
                data_dir=config.data_dir,
                master_key=config.master_key,
                auditor_external_ids=config.auditor_external_ids,
                fsync=config.fsync,
            ),
            config.program,
        )
        app = create_app(escrow, console_dir=config.console_dir)
        uvicorn.run(
            app, host=config.host, port=config.port,
            ssl_certfile=config.tls_certfile, ssl_keyfile=config.tls_keyfile,
            log_level="warning",
        )
    finally:
        lock.release()


def _load_program(name: str) -> SharingProgram:
    if name in ("fraud", "health", "ads"):
        from . import scenarios

        return scenarios.build_program(name)
    if ":" in name:
        import importlib

        module_name, factory = name.split(":", 1)
        module = importlib.import_module(module_name)
        return getattr(module, factory)()
    raise ValueError(f"unknown program {name!r} (builtin names: fraud, health, ads)")


def main(argv=None) -> None:
    import click

    @click.command()
    @click.option("--data-dir", required=True, help="escrow state directory")
    @click.option("--master-key-file", required=True, type=click.Path(exists=True),
                  help="file holding the 32-byte escrow master key")
    @click.option("--program", default="fraud", show_default=True,
                  help="builtin scenario name or module:factory path")
    @click.option("--host", default="127.0.0.1", show_default=True)
    @click.option("--port", default=8000, show_default=True, type=int)
    @click.option("--auditor", "auditors", multiple=True,
                  help="external id granted audit access (repeatable)")
    @click.option("--console-dir", default=None,
                  help="static console bundle to mount at /console")
    @click.option("--no-fsync", is_flag=True, default=False,
                  help="skip fsync per WAL append (testing only)")
    @click.option("--tls-certfile", default=None)
    @click.option("--tls-keyfile", default=None)
    def cli(data_dir, master_key_file, program, host, port, auditors,
            console_dir, no_fsync, tls_certfile, tls_keyfile):
        """Serve one data escrow instance over HTTP."""
        with open(master_key_file, "rb") as fh:
            master_key = fh.read().strip()
        if len(master_key) == 2 * KEY_SIZE:  # hex-encoded
            master_key = bytes.fromhex(master_key.decode())
        serve(ServeConfig(
            data_dir=data_dir,
            master_key=master_key,
            host=host,
            port=port,
            program=_load_program(program),
            auditor_external_ids=tuple(auditors),
            fsync=not no_fsync,
            console_dir=console_dir,
            tls_certfile=tls_certfile,
            tls_keyfile=tls_keyfile,
        ))

    cli(args=argv)


if __name__ == "__main__":
    main()
