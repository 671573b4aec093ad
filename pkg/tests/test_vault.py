"""Sealed-storage tests: AEAD framing, the encrypted log, and checkpoints."""
from __future__ import annotations

import os
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from descrow.errors import (
    AuthFailure,
    CorruptLog,
    DuplicateKey,
    MissingKey,
)
from descrow.vault import (
    CHECKPOINT_MAGIC,
    KEY_SIZE,
    NONCE_SIZE,
    SYSTEM_AGENT,
    EncryptedWal,
    VolatileKeyManager,
    WalRecord,
    new_key,
    read_checkpoint,
    read_wal_records,
    seal,
    unseal,
    write_checkpoint,
)


# --- keys ---------------------------------------------------------------------

def test_new_key_shape_and_entropy():
    keys = {new_key() for _ in range(32)}
    assert all(len(k) == KEY_SIZE for k in keys)
    assert len(keys) == 32


def test_key_manager_lifecycle():
    km = VolatileKeyManager()
    km.submit(1, new_key())
    assert km.has(1)
    with pytest.raises(DuplicateKey):
        km.submit(1, new_key())
    km.submit(1, new_key(), replace=True)
    km.remove(1)
    assert not km.has(1)
    with pytest.raises(MissingKey):
        km.aead(1)


# --- seal / unseal ------------------------------------------------------------

def test_seal_roundtrip_and_shape():
    km = VolatileKeyManager()
    km.submit(1, new_key())
    sealed = seal(km.aead(1), b"payload")
    assert unseal(km.aead(1), sealed) == b"payload"
    # nonce + ciphertext + 16-byte tag
    assert len(sealed) == NONCE_SIZE + len(b"payload") + 16


def test_seal_empty_plaintext():
    aead = VolatileKeyManager()
    aead.submit(1, new_key())
    sealed = seal(aead.aead(1), b"")
    assert len(sealed) == NONCE_SIZE + 16
    assert unseal(aead.aead(1), sealed) == b""


def test_unseal_wrong_key_fails():
    a, b = VolatileKeyManager(), VolatileKeyManager()
    a.submit(1, new_key())
    b.submit(1, new_key())
    sealed = seal(a.aead(1), b"secret")
    with pytest.raises(AuthFailure):
        unseal(b.aead(1), sealed)


@given(st.binary(max_size=256), st.data())
@settings(max_examples=80, deadline=None)
def test_single_bitflip_always_detected(payload, data):
    km = VolatileKeyManager()
    km.submit(1, b"\x07" * KEY_SIZE)
    sealed = bytearray(seal(km.aead(1), payload))
    pos = data.draw(st.integers(0, len(sealed) - 1))
    bit = data.draw(st.integers(0, 7))
    sealed[pos] ^= 1 << bit
    with pytest.raises(AuthFailure):
        unseal(km.aead(1), bytes(sealed))


# --- WAL format and replay ----------------------------------------------------

def wal_with(tmp_path, entries, keys=None):
    """Write (agent, payload) entries; returns (path, key manager)."""
    km = keys or VolatileKeyManager()
    if keys is None:
        km.submit(SYSTEM_AGENT, new_key())
        for agent, _ in entries:
            if not km.has(agent):
                km.submit(agent, new_key())
    path = tmp_path / "escrow.wal"
    wal = EncryptedWal(path, km, fsync=False)
    for agent, payload in entries:
        wal.append(agent, payload)
    wal.close()
    return path, km


def test_wal_roundtrip_sequences_and_payloads(tmp_path):
    entries = [(SYSTEM_AGENT, b'{"op":1}'), (1, b'{"op":2}'), (2, b'{"op":3}')]
    path, km = wal_with(tmp_path, entries)
    records = read_wal_records(path)
    assert [r.seq for r in records] == [1, 2, 3]
    assert [r.agent_id for r in records] == [SYSTEM_AGENT, 1, 2]
    wal = EncryptedWal(path, km, fsync=False)
    assert [wal.decrypt(r) for r in records] == [e[1] for e in entries]
    wal.close()


def test_wal_thousand_records_no_gaps(tmp_path):
    entries = [(SYSTEM_AGENT, f'{{"n":{i}}}'.encode()) for i in range(1000)]
    path, _ = wal_with(tmp_path, entries)
    records = read_wal_records(path)
    assert [r.seq for r in records] == list(range(1, 1001))


def test_wal_append_returns_monotonic_seq(tmp_path):
    km = VolatileKeyManager()
    km.submit(SYSTEM_AGENT, new_key())
    wal = EncryptedWal(tmp_path / "w.wal", km, fsync=False)
    assert [wal.append(SYSTEM_AGENT, b"a"), wal.append(SYSTEM_AGENT, b"b")] == [1, 2]
    wal.close()


def test_wal_torn_tail_is_discarded_with_warning(tmp_path, caplog):
    path, _ = wal_with(tmp_path, [(SYSTEM_AGENT, b"one"), (SYSTEM_AGENT, b"two")])
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])  # cut into the last record
    with caplog.at_level("WARNING"):
        records = read_wal_records(path)
    assert [r.seq for r in records] == [1]
    assert any("torn" in m or "truncat" in m for m in caplog.messages)


def test_wal_interior_gap_is_corruption(tmp_path):
    path, _ = wal_with(tmp_path, [(SYSTEM_AGENT, b"one"),
                                  (SYSTEM_AGENT, b"two"),
                                  (SYSTEM_AGENT, b"three")])
    records = read_wal_records(path)
    # drop the middle record wholesale: seqs 1,3 -> the missing seq is 2
    blob = path.read_bytes()
    sizes = []
    off = 0
    for _ in records:
        prefix = struct.unpack_from("<QQI", blob, off)
        sizes.append(20 + NONCE_SIZE + prefix[2])
        off += sizes[-1]
    mutated = blob[:sizes[0]] + blob[sizes[0] + sizes[1]:]
    path.write_bytes(mutated)
    with pytest.raises(CorruptLog) as err:
        read_wal_records(path)
    assert err.value.first_bad_seq == 2


def test_wal_garbage_prefix_is_corruption(tmp_path):
    path = tmp_path / "junk.wal"
    path.write_bytes(b"\xab" * 80)
    with pytest.raises(CorruptLog) as err:
        read_wal_records(path, expected_first_seq=1)
    assert err.value.first_bad_seq == 1


def test_wal_accepts_checkpointed_start_seq(tmp_path):
    # a log truncated after a checkpoint starts past 1 and must still load
    path, km = wal_with(tmp_path, [(SYSTEM_AGENT, b"a"), (SYSTEM_AGENT, b"b"),
                                   (SYSTEM_AGENT, b"c")])
    wal = EncryptedWal(path, km, fsync=False)
    keep = [r for r in read_wal_records(path) if r.seq > 1]
    wal.rewrite(keep)
    wal.close()
    records = read_wal_records(path, expected_first_seq=2)
    assert [r.seq for r in records] == [2, 3]
    with pytest.raises(CorruptLog):
        read_wal_records(path, expected_first_seq=1)


def test_wal_record_aad_binds_prefix(tmp_path):
    # flipping the agent id in the stored prefix must break authentication
    km = VolatileKeyManager()
    km.submit(SYSTEM_AGENT, new_key())
    km.submit(7, new_key())
    path = tmp_path / "w.wal"
    wal = EncryptedWal(path, km, fsync=False)
    wal.append(7, b"hello")
    wal.close()
    blob = bytearray(path.read_bytes())
    # agent id lives in bytes 8..16 of the prefix
    blob[8] ^= 0xFF
    path.write_bytes(bytes(blob))
    [record] = read_wal_records(path)
    wal = EncryptedWal(path, km, fsync=False)
    with pytest.raises((AuthFailure, MissingKey)):
        wal.decrypt(record)
    wal.close()


def test_missing_file_reads_as_empty(tmp_path):
    assert read_wal_records(tmp_path / "absent.wal") == []


# --- checkpoints ----------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    km = VolatileKeyManager()
    km.submit(SYSTEM_AGENT, new_key())
    snapshot = b'{"state": [1, 2, 3]}'
    path = str(tmp_path / "escrow.ckpt")
    write_checkpoint(path, 42, snapshot, km.aead(SYSTEM_AGENT))
    upto, payload = read_checkpoint(path, km.aead(SYSTEM_AGENT))
    assert (upto, payload) == (42, snapshot)
    assert (tmp_path / "escrow.ckpt").read_bytes()[:4] == CHECKPOINT_MAGIC


def test_checkpoint_missing_file_reads_none(tmp_path):
    km = VolatileKeyManager()
    km.submit(SYSTEM_AGENT, new_key())
    assert read_checkpoint(str(tmp_path / "none.ckpt"),
                           km.aead(SYSTEM_AGENT)) is None


def test_checkpoint_header_is_authenticated(tmp_path):
    km = VolatileKeyManager()
    km.submit(SYSTEM_AGENT, new_key())
    path = tmp_path / "escrow.ckpt"
    write_checkpoint(str(path), 7, b"snap", km.aead(SYSTEM_AGENT))
    blob = bytearray(path.read_bytes())
    blob[6] ^= 0x01  # tamper with upto_seq in the header
    path.write_bytes(bytes(blob))
    with pytest.raises(AuthFailure):
        read_checkpoint(str(path), km.aead(SYSTEM_AGENT))


def test_checkpoint_wrong_key_rejected(tmp_path):
    km = VolatileKeyManager()
    km.submit(SYSTEM_AGENT, new_key())
    other = VolatileKeyManager()
    other.submit(SYSTEM_AGENT, new_key())
    path = str(tmp_path / "escrow.ckpt")
    write_checkpoint(path, 1, b"snap", km.aead(SYSTEM_AGENT))
    with pytest.raises(AuthFailure):
        read_checkpoint(path, other.aead(SYSTEM_AGENT))
