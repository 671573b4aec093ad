"""Command-line client for a running escrow server.

Subcommands mirror the REST routes one to one. The bearer token is kept in a
file (``--token-file``) so separate invocations share a session; the agent's
symmetric key never leaves the client except through POST /keys, and released
outputs are decrypted locally with ``--key-file``.
"""
from __future__ import annotations

import base64
import json
import os

import click
import requests

from .vault import KEY_SIZE


def _load_key(path: str) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read().strip()
    if len(raw) == KEY_SIZE:
        return raw
    if len(raw) == 2 * KEY_SIZE:  # hex
        return bytes.fromhex(raw.decode())
    raise click.ClickException(f"key file must hold {KEY_SIZE} raw or hex bytes")


class Api:
    def __init__(self, server: str, token_file: str):
        self.server = server.rstrip("/")
        self.token_file = token_file

    def _headers(self) -> dict:
        headers = {}
        if self.token_file and os.path.exists(self.token_file):
            with open(self.token_file) as fh:
                headers["Authorization"] = f"Bearer {fh.read().strip()}"
        return headers

    def request(self, method: str, path: str, **kwargs):
        resp = requests.request(method, self.server + path,
                                headers=self._headers(), **kwargs)
        if resp.status_code >= 400:
            try:
                body = resp.json()
                raise click.ClickException(
                    f"{resp.status_code} {body.get('code')}: {body.get('message')}"
                )
            except ValueError:
                raise click.ClickException(f"{resp.status_code}: {resp.text}")
        if resp.status_code == 204 or not resp.content:
            return None
        return resp.json()


pass_api = click.make_pass_decorator(Api)


@click.group()
@click.option("--server", default="http://127.0.0.1:8000", show_default=True,
              envvar="ESCROW_SERVER")
@click.option("--token-file", default=".escrow-token", show_default=True,
              envvar="ESCROW_TOKEN_FILE")
@click.pass_context
def main(ctx, server, token_file):
    """Talk to a data escrow server."""
    ctx.obj = Api(server, token_file)


def _emit(data) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@main.command()
@click.option("--name", required=True)
@click.option("--external-id", default=None)
@click.option("--password", required=True)
@pass_api
def register(api: Api, name, external_id, password):
    """POST /agents — register this agent."""
    _emit(api.request("POST", "/agents", json={
        "name": name, "external_id": external_id, "password": password,
    }))


@main.command()
@click.option("--external-id", default=None)
@click.option("--agent-id", default=None, type=int)
@click.option("--password", required=True)
@pass_api
def login(api: Api, external_id, agent_id, password):
    """POST /login — obtain a bearer token (stored in the token file)."""
    body = {"password": password}
    if external_id:
        body["external_id"] = external_id
    if agent_id is not None:
        body["agent_id"] = agent_id
    data = api.request("POST", "/login", json=body)
    with open(api.token_file, "w") as fh:
        fh.write(data["token"])
    click.echo(f"logged in as agent {data['agent_id']}")


@main.command("send-key")
@click.option("--key-file", required=True, type=click.Path(exists=True))
@pass_api
def send_key(api: Api, key_file):
    """POST /keys — submit this agent's symmetric key."""
    key = _load_key(key_file)
    api.request("POST", "/keys", json={"key_b64": base64.b64encode(key).decode()})
    click.echo("key submitted")


@main.command("register-data")
@click.option("--type", "type_", required=True)
@click.option("--params", default="{}", help="access parameters as JSON")
@click.option("--discoverable", is_flag=True, default=False)
@pass_api
def register_data(api: Api, type_, params, discoverable):
    """POST /data — register a data element."""
    _emit(api.request("POST", "/data", json={
        "type": type_, "access_parameters": json.loads(params),
        "discoverable": discoverable,
    }))


@main.command("upload-data")
@click.option("--de-id", required=True, type=int)
@click.option("--file", "file_", required=True, type=click.Path(exists=True))
@pass_api
def upload_data(api: Api, de_id, file_):
    """PUT /data/{id}/content — upload element content."""
    with open(file_, "rb") as fh:
        resp = requests.put(
            api.server + f"/data/{de_id}/content", data=fh,
            headers={**api._headers(), "Content-Type": "application/octet-stream"},
        )
    if resp.status_code >= 400:
        raise click.ClickException(resp.text)
    click.echo("uploaded")


@main.command()
@pass_api
def discoverable(api: Api):
    """GET /data/discoverable — list discoverable elements."""
    _emit(api.request("GET", "/data/discoverable"))


@main.command()
@click.option("--dest", multiple=True, required=True,
              help="destination agent id or external id (repeatable)")
@click.option("--de-ids", required=True, help="comma-separated element ids")
@click.option("--function", "function_", required=True)
@click.option("--args", default="{}", help="arguments as JSON")
@click.option("--conditions", default=None, help="condition descriptors as JSON list")
@click.option("--max-uses", default=1, type=int)
@pass_api
def propose(api: Api, dest, de_ids, function_, args, conditions, max_uses):
    """POST /contracts — propose a contract."""
    dest_list = [int(d) if d.isdigit() else d for d in dest]
    _emit(api.request("POST", "/contracts", json={
        "dest_agents": dest_list,
        "de_ids": [int(x) for x in de_ids.split(",")],
        "function": function_,
        "args": json.loads(args),
        "conditions": json.loads(conditions) if conditions else None,
        "max_uses": max_uses,
    }))


@main.command()
@pass_api
def pending(api: Api):
    """GET /contracts/pending — contracts awaiting this agent's decision."""
    _emit(api.request("GET", "/contracts/pending"))


@main.command()
@click.argument("contract_id", type=int)
@pass_api
def approve(api: Api, contract_id):
    """POST /contracts/{id}/approve."""
    _emit(api.request("POST", f"/contracts/{contract_id}/approve"))


@main.command()
@click.argument("contract_id", type=int)
@click.option("--reason", default="")
@pass_api
def deny(api: Api, contract_id, reason):
    """POST /contracts/{id}/deny."""
    _emit(api.request("POST", f"/contracts/{contract_id}/deny",
                      json={"reason": reason}))


@main.command("add-rule")
@click.option("--decision", type=click.Choice(["approve", "reject"]),
              default="approve", show_default=True)
@click.option("--functions", default=None, help="comma-separated function names")
@click.option("--de-ids", default=None, help="comma-separated owned element ids")
@click.option("--dest-agents", default=None, help="comma-separated agent ids")
@click.option("--description", default="")
@pass_api
def add_rule(api: Api, decision, functions, de_ids, dest_agents, description):
    """POST /rules — register a standing approval rule."""
    _emit(api.request("POST", "/rules", json={
        "decision": decision,
        "functions": functions.split(",") if functions else None,
        "de_ids": [int(x) for x in de_ids.split(",")] if de_ids else None,
        "dest_agents": [int(x) for x in dest_agents.split(",")] if dest_agents else None,
        "description": description,
    }))


@main.command()
@pass_api
def rules(api: Api):
    """GET /rules — this agent's standing rules."""
    _emit(api.request("GET", "/rules"))


@main.command()
@pass_api
def functions(api: Api):
    """GET /functions — agent-callable functions."""
    _emit(api.request("GET", "/functions"))


@main.command()
@click.argument("name")
@click.option("--args", default="{}", help="arguments as JSON")
@click.option("--out", default=None, type=click.Path(),
              help="write released output to this file")
@click.option("--key-file", default=None, type=click.Path(exists=True),
              help="decrypt the released output with this key")
@pass_api
def call(api: Api, name, args, out, key_file):
    """POST /functions/{name}/call — invoke a function."""
    data = api.request("POST", f"/functions/{name}/call",
                       json={"args": json.loads(args)})
    if data["kind"] == "endpoint":
        _emit(data)
        return
    result = data["result"]
    output_b64 = result.pop("output_b64", None)
    _emit(data)
    if output_b64 and out:
        sealed = base64.b64decode(output_b64)
        if key_file:
            from cryptography.hazmat.primitives.ciphers.aead import AESGCM

            key = _load_key(key_file)
            sealed = AESGCM(key).decrypt(sealed[:12], sealed[12:], b"")
        with open(out, "wb") as fh:
            fh.write(sealed)
        click.echo(f"output written to {out}")


@main.command()
@pass_api
def audit(api: Api):
    """GET /audit — audit trail (auditors only)."""
    _emit(api.request("GET", "/audit"))


@main.command()
@pass_api
def health(api: Api):
    """GET /healthz."""
    _emit(api.request("GET", "/healthz"))


if __name__ == "__main__":
    main()
