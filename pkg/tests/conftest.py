"""Shared fixtures: throwaway escrow instances and a small test program."""
from __future__ import annotations

import pytest

from descrow import (
    Escrow,
    EscrowConfig,
    SharingProgram,
    api_endpoint,
    contract_function,
)
from descrow.vault import new_key


def toy_program() -> SharingProgram:
    """A minimal program exercising every function kind."""
    prog = SharingProgram("toy")

    @api_endpoint
    def ping(api, value=1):
        """Liveness check."""
        return {"pong": value}

    @api_endpoint
    @contract_function
    def concat(api, de_ids, sep="|"):
        """Join the plaintexts of the given elements."""
        return sep.join(api.read(int(d)).decode() for d in de_ids).encode()

    @api_endpoint
    @contract_function
    def cached_concat(api, de_ids, sep="|"):
        """Like concat, but caches the result as a shared intermediate."""
        cached = api.read_intermediate("cat")
        if cached is not None:
            return api.read(cached)
        data = sep.join(api.read(int(d)).decode() for d in de_ids).encode()
        api.write_intermediate("cat", data)
        return data

    @api_endpoint
    @contract_function
    def peek(api, de_id):
        """Return one element's plaintext verbatim."""
        return api.read(int(de_id))

    @api_endpoint
    @contract_function
    def sized_echo(api, de_id, min_len, max_len):
        """Echo an element, vetoed outside the [min_len, max_len] window."""
        data = api.read(int(de_id))
        if len(data) < int(min_len):
            return api.precondition_failed("input too small")
        if len(data) > int(max_len):
            return api.postcondition_failed("output too large")
        return data

    @contract_function
    def gated_only(api):
        """Proposable but never directly callable."""
        return b"gated"

    def hidden_helper(api):
        return "internal"

    for fn in (ping, concat, cached_concat, peek, sized_echo, gated_only):
        prog.add(fn)
    prog.add_helper(hidden_helper)
    return prog


class EscrowFactory:
    """Builds escrow instances in per-test directories and closes them all."""

    def __init__(self, base):
        self.base = base
        self._count = 0
        self._open: list[Escrow] = []

    def new_dir(self, name=None):
        self._count += 1
        d = self.base / (name or f"escrow-{self._count}")
        d.mkdir(parents=True, exist_ok=True)
        return d

    def open(self, data_dir=None, program=None, master_key=None, **cfg) -> Escrow:
        cfg.setdefault("fsync", False)
        es = Escrow(
            EscrowConfig(data_dir=data_dir or self.new_dir(),
                         master_key=master_key or new_key(), **cfg),
            program=program or toy_program(),
        )
        self._open.append(es)
        return es

    def close_all(self):
        for es in self._open:
            es.close()
        self._open.clear()


@pytest.fixture
def factory(tmp_path):
    f = EscrowFactory(tmp_path)
    yield f
    f.close_all()


@pytest.fixture
def escrow(factory):
    return factory.open()


def add_agent(es: Escrow, name: str, **kwargs):
    """Register an agent, install a fresh key, return (id, key)."""
    agent = es.register_agent(name, **kwargs)
    key = new_key()
    es.submit_key(agent, key)
    return agent, key


def upload_text(es: Escrow, owner: int, text: str, *, discoverable=False,
                type: str = "kv") -> int:
    de = es.register_data_element(owner, type, discoverable=discoverable)
    es.upload_data_element(owner, de, text.encode())
    return de
