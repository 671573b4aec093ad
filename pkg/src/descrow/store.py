"""Data element registry types, provenance closure, and sealed blob files.

Every element's content sits in its own file, ``{id:08d}.enc``, holding a
12-byte nonce followed by one AEAD ciphertext under the owner's key (the
escrow-internal key for intermediates). Reading content is only possible
through the engine's mediation layer; this module never hands out plaintext
without the right key.

Provenance is a DAG over element ids: uploaded elements have empty
provenance, derived ones point at the distinct elements actually read while
producing them. The closure of an element is everything it transitively
derives from, and the owners of the closure's roots are the agents whose
approval any contract over that element needs.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .errors import IoFailure, UnknownDataElement, UnsupportedType
from .vault import SYSTEM_AGENT

SUPPORTED_TYPES = ("csv", "parquet", "kv", "open_data")


@dataclass
class DataElementRecord:
    """Registry row for one element; content lives in the blob store."""

    id: int
    owner: int
    type: str
    access_parameters: dict
    discoverable: bool
    provenance: tuple = ()
    uploaded: bool = False
    digest: str = ""  # sha256 of the sealed blob, set at upload

    def to_registry_json(self) -> dict:
        return {
            "id": self.id,
            "owner": self.owner,
            "type": self.type,
            "access_parameters": self.access_parameters,
            "discoverable": self.discoverable,
            "provenance": list(self.provenance),
        }

    @property
    def is_intermediate(self) -> bool:
        return self.owner == SYSTEM_AGENT


@dataclass(frozen=True)
class ProvenanceClosure:
    """Transitive inputs of an element plus the owners of its roots."""

    member_ids: frozenset
    root_owners: frozenset


def provenance_closure(elements: Mapping[int, DataElementRecord],
                       de_id: int) -> ProvenanceClosure:
    """Walk the provenance DAG from de_id; includes de_id itself.

    Root owners are the owners of closure members with empty provenance —
    the agents who actually uploaded bytes somewhere upstream. The system
    agent never appears in root_owners (intermediates always have parents).
    """
    if de_id not in elements:
        raise UnknownDataElement(f"element {de_id} not registered")
    members: set[int] = set()
    stack = [de_id]
    while stack:
        cur = stack.pop()
        if cur in members:
            continue
        members.add(cur)
        rec = elements.get(cur)
        if rec is None:
            raise UnknownDataElement(f"provenance of {de_id} references unknown element {cur}")
        stack.extend(rec.provenance)
    root_owners = frozenset(
        elements[m].owner for m in members
        if not elements[m].provenance and elements[m].owner != SYSTEM_AGENT
    )
    return ProvenanceClosure(member_ids=frozenset(members), root_owners=root_owners)


def approval_owners(elements: Mapping[int, DataElementRecord],
                    de_ids: Iterable[int]) -> frozenset:
    """Agents whose approval a contract over de_ids requires.

    Union over the elements of: closure root owners, plus the element's own
    owner when it is a real agent (derived outputs are owned by whoever ran
    the producing contract and that agent has a stake too).
    """
    owners: set[int] = set()
    for de_id in de_ids:
        closure = provenance_closure(elements, de_id)
        owners |= closure.root_owners
        direct = elements[de_id].owner
        if direct != SYSTEM_AGENT:
            owners.add(direct)
    return frozenset(owners)


class StoreBackend:
    """How content for a given element type is sourced."""

    type_name = ""

    def validate_access_parameters(self, params: dict) -> None:
        if not isinstance(params, dict):
            raise UnsupportedType("access_parameters must be an object")

    def fetch(self, params: dict) -> bytes:
        raise UnsupportedType(f"type {self.type_name!r} has no remote fetch")


class UploadedFileBackend(StoreBackend):
    """csv / parquet / kv: content arrives as uploaded bytes."""

    def __init__(self, type_name: str):
        self.type_name = type_name


class OpenDataBackend(StoreBackend):
    """Remote open-data fetch. Interface only; fetch is not implemented."""

    type_name = "open_data"

    def fetch(self, params: dict) -> bytes:
        raise UnsupportedType("open_data fetch is a stub in this build")


def default_backends() -> dict:
    backends: dict[str, StoreBackend] = {
        t: UploadedFileBackend(t) for t in ("csv", "parquet", "kv")
    }
    backends["open_data"] = OpenDataBackend()
    return backends


class BlobStore:
    """Directory of sealed per-element files."""

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def path(self, de_id: int) -> str:
        return os.path.join(self.directory, f"{de_id:08d}.enc")

    def write(self, de_id: int, sealed: bytes) -> str:
        """Durably store the sealed blob; returns its sha256 hex digest."""
        target = self.path(de_id)
        tmp = target + ".tmp"
        try:
            with open(tmp, "wb") as fh:
                fh.write(sealed)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, target)
        except OSError as exc:
            raise IoFailure(f"blob write for element {de_id} failed: {exc}") from exc
        return hashlib.sha256(sealed).hexdigest()

    def read(self, de_id: int) -> bytes:
        try:
            with open(self.path(de_id), "rb") as fh:
                return fh.read()
        except FileNotFoundError:
            raise UnknownDataElement(f"no stored content for element {de_id}") from None
        except OSError as exc:
            raise IoFailure(f"blob read for element {de_id} failed: {exc}") from exc

    def exists(self, de_id: int) -> bool:
        return os.path.exists(self.path(de_id))


def registry_jsonl(elements: Mapping[int, DataElementRecord]) -> str:
    """The registry as JSON lines, one element per line, ascending id."""
    import json

    lines = [
        json.dumps(elements[i].to_registry_json(), sort_keys=True)
        for i in sorted(elements)
    ]
    return "\n".join(lines)
