"""Encryption-at-rest plumbing: volatile keys, sealed blobs, encrypted WAL.

Keys live only in process memory. Every durable byte the escrow writes goes
through one of the seal helpers here, so nothing below this module ever sees
plaintext on disk.

WAL record wire format (little-endian, length-prefixed):

    u64 seq | u64 agent id | u32 ciphertext length | 12-byte nonce | ciphertext+tag

The 20-byte integer prefix plus nonce is authenticated as AEAD associated
data, so a record cannot be re-sequenced or re-attributed without failing
the tag. Checkpoint files open with magic ``ESCK``, a u16 version, the u64
seq they cover, then one sealed snapshot blob.
"""
from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AuthFailure, CorruptLog, DuplicateKey, IoFailure, MissingKey

logger = logging.getLogger(__name__)

KEY_SIZE = 32
NONCE_SIZE = 12
SYSTEM_AGENT = 0  # reserved id: escrow-internal mutations and intermediates

_RECORD_PREFIX = struct.Struct("<QQI")  # seq, agent, ciphertext length
CHECKPOINT_MAGIC = b"ESCK"
CHECKPOINT_VERSION = 1
_CHECKPOINT_HEADER = struct.Struct("<4sHQ")


def new_key() -> bytes:
    return os.urandom(KEY_SIZE)


class VolatileKeyManager:
    """Holds agent keys in memory only; nothing here is ever persisted."""

    def __init__(self):
        self._keys: dict[int, AESGCM] = {}

    def submit(self, agent_id: int, key: bytes, *, replace: bool = False) -> None:
        if len(key) != KEY_SIZE:
            raise ValueError(f"keys must be {KEY_SIZE} bytes, got {len(key)}")
        if agent_id in self._keys and not replace:
            raise DuplicateKey(f"key already submitted for agent {agent_id}")
        self._keys[agent_id] = AESGCM(key)

    def remove(self, agent_id: int) -> None:
        self._keys.pop(agent_id, None)

    def has(self, agent_id: int) -> bool:
        return agent_id in self._keys

    def aead(self, agent_id: int) -> AESGCM:
        try:
            return self._keys[agent_id]
        except KeyError:
            raise MissingKey(f"no key submitted for agent {agent_id}") from None


def seal(aead: AESGCM, plaintext: bytes, aad: bytes = b"") -> bytes:
    """nonce || ciphertext+tag, with a fresh random nonce."""
    nonce = os.urandom(NONCE_SIZE)
    return nonce + aead.encrypt(nonce, plaintext, aad)


def unseal(aead: AESGCM, blob: bytes, aad: bytes = b"") -> bytes:
    if len(blob) < NONCE_SIZE + 16:
        raise AuthFailure("sealed blob too short")
    nonce, ct = blob[:NONCE_SIZE], blob[NONCE_SIZE:]
    try:
        return aead.decrypt(nonce, ct, aad)
    except InvalidTag:
        raise AuthFailure("AEAD authentication failed") from None


@dataclass
class WalRecord:
    """One encrypted mutation as it sits in the log."""

    seq: int
    agent_id: int
    nonce: bytes
    ciphertext: bytes

    def encode(self) -> bytes:
        prefix = _RECORD_PREFIX.pack(self.seq, self.agent_id, len(self.ciphertext))
        return prefix + self.nonce + self.ciphertext

    @property
    def aad(self) -> bytes:
        return _RECORD_PREFIX.pack(self.seq, self.agent_id, len(self.ciphertext)) + self.nonce


class EncryptedWal:
    """Append-only encrypted write-ahead log.

    append() returns only after the bytes are flushed (and fsynced when the
    log was opened with fsync=True), so callers may apply the mutation to
    memory immediately afterwards: anything applied is already durable.
    """

    def __init__(self, path: str, keys: VolatileKeyManager, *, fsync: bool = True,
                 min_next_seq: int = 1):
        self.path = os.fspath(path)
        self.keys = keys
        self.fsync = fsync
        # continue after whatever the file holds AND after any checkpointed
        # seq (a truncated log may be empty while the counter is far along)
        self._next_seq = max(1, min_next_seq)
        existing = read_wal_records(path) if os.path.exists(path) else []
        if existing:
            self._next_seq = max(self._next_seq, existing[-1].seq + 1)
        try:
            self._fh = open(path, "ab")
        except OSError as exc:
            raise IoFailure(f"cannot open WAL at {path}: {exc}") from exc

    @property
    def next_seq(self) -> int:
        return self._next_seq

    def append(self, agent_id: int, payload: bytes) -> int:
        """Seal payload under the agent's key and durably append it."""
        aead = self.keys.aead(agent_id)
        seq = self._next_seq
        nonce = os.urandom(NONCE_SIZE)
        ct_len = len(payload) + 16  # GCM tag is 16 bytes, length is part of the AAD
        aad = _RECORD_PREFIX.pack(seq, agent_id, ct_len) + nonce
        ciphertext = aead.encrypt(nonce, payload, aad)
        record = WalRecord(seq=seq, agent_id=agent_id, nonce=nonce, ciphertext=ciphertext)
        try:
            self._fh.write(record.encode())
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            raise IoFailure(f"WAL append failed: {exc}") from exc
        self._next_seq = seq + 1
        return seq

    def decrypt(self, record: WalRecord) -> bytes:
        aead = self.keys.aead(record.agent_id)
        try:
            return aead.decrypt(record.nonce, record.ciphertext, record.aad)
        except InvalidTag:
            raise AuthFailure(
                f"WAL record {record.seq} (agent {record.agent_id}) failed authentication"
            ) from None

    def rewrite(self, records: list) -> None:
        """Atomically replace the log body (checkpoint truncation)."""
        tmp = self.path + ".tmp"
        with open(tmp, "wb") as fh:
            for rec in records:
                fh.write(rec.encode())
            fh.flush()
            os.fsync(fh.fileno())
        self._fh.close()
        os.replace(tmp, self.path)
        self._fh = open(self.path, "ab")

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def read_wal_records(path: str, expected_first_seq: Optional[int] = None) -> list:
    """Decode every complete record; a torn final record is dropped.

    `expected_first_seq` anchors the stream (1 for a virgin log, upto+1 after
    a checkpoint truncation); None accepts whatever the first record claims.
    A wrong sequence number or an impossible length raises CorruptLog with the
    first offending seq.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        return []
    except OSError as exc:
        raise IoFailure(f"cannot read WAL at {path}: {exc}") from exc

    records: list[WalRecord] = []
    offset = 0
    prev_seq = None
    while offset < len(data):
        remaining = len(data) - offset
        if prev_seq is not None:
            expected = prev_seq + 1
        elif expected_first_seq is not None:
            expected = expected_first_seq
        else:
            expected = None
        if remaining < _RECORD_PREFIX.size:
            logger.warning("WAL %s: %d trailing bytes discarded (torn record)",
                           path, remaining)
            break
        seq, agent_id, ct_len = _RECORD_PREFIX.unpack_from(data, offset)
        if expected is not None and seq != expected:
            # wrong continuation seq is corruption wherever it sits; a torn
            # tail would still carry the expected seq in its prefix
            raise CorruptLog(
                f"expected seq {expected}, found {seq}", first_bad_seq=expected
            )
        if ct_len < 16:
            # GCM tag alone is 16 bytes; shorter is structurally impossible
            raise CorruptLog(
                f"record {seq} has impossible length {ct_len}", first_bad_seq=seq
            )
        body_end = offset + _RECORD_PREFIX.size + NONCE_SIZE + ct_len
        if body_end > len(data):
            logger.warning("WAL %s: torn record at seq %d discarded", path, seq)
            break
        nonce = data[offset + _RECORD_PREFIX.size: offset + _RECORD_PREFIX.size + NONCE_SIZE]
        ciphertext = data[offset + _RECORD_PREFIX.size + NONCE_SIZE: body_end]
        records.append(WalRecord(seq=seq, agent_id=agent_id, nonce=nonce, ciphertext=ciphertext))
        prev_seq = seq
        offset = body_end
    return records


def write_checkpoint(path: str, upto_seq: int, snapshot: bytes, system_aead: AESGCM) -> None:
    """Seal a state snapshot covering every mutation with seq <= upto_seq."""
    header = _CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, upto_seq)
    blob = seal(system_aead, snapshot, aad=header)
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(header + blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"checkpoint write failed: {exc}") from exc


def read_checkpoint(path: str, system_aead: AESGCM) -> Optional[tuple]:
    """(upto_seq, snapshot bytes), or None when no checkpoint exists."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        return None
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint at {path}: {exc}") from exc
    if len(data) < _CHECKPOINT_HEADER.size:
        raise CorruptLog("checkpoint file shorter than its header")
    magic, version, upto_seq = _CHECKPOINT_HEADER.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CorruptLog(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CorruptLog(f"unsupported checkpoint version {version}")
    header = data[:_CHECKPOINT_HEADER.size]
    snapshot = unseal(system_aead, data[_CHECKPOINT_HEADER.size:], aad=header)
    return upto_seq, snapshot
