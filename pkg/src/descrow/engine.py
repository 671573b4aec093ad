"""The escrow engine: every agent-facing operation, durably logged.

One ``Escrow`` owns the volatile key manager, the encrypted write-ahead log,
the sealed blob directory, and the in-memory database. Every mutation is
appended (and flushed) to the log *before* it is applied to memory, so a
recovered instance replays to exactly the acknowledged state. Agent keys are
never stored; after a restart, records from agents whose keys have not been
re-submitted wait in a deferred queue and apply in sequence order once the
key arrives.

Execution of contract functions is mediated: the function body only ever
touches data through its host handle, every read is checked against the
contract's element set, and an illegal read aborts the run before a single
byte of the target is decrypted.
"""
from __future__ import annotations

import copy
import hashlib
import hmac
import json
import logging
import os
import threading
import time
import warnings
from dataclasses import dataclass
from time import perf_counter
from typing import Iterable, Optional, Sequence, Union

from .contracts import (Contract, ConditionDescriptor, ContractStatus, SlotState,
                        args_match, evaluate_rules, is_wildcard, normalize_args)
from .db import EscrowDb
from .errors import (AlreadyDecided, AuthFailure, CorruptLog, DuplicateExternalId,
                     DuplicateKey, EscrowError, FunctionFailed, IllegalAccess,
                     KeyMismatch, MissingKey, NoMatchingContract, NotASourceAgent,
                     NotDestinationAgent, NotOwner, OwnerMismatch, ShortCircuited,
                     StaleId, SuspiciousEmptyProvenance, UnknownAgent,
                     UnknownContract, UnknownDataElement, UnsupportedType)
from .runtime import (ConditionFailure, ConditionOutcome, ExecutionContext,
                      ExecutionResult, ExecutionStatus, ExecutionTiming,
                      FunctionRef, SharingProgram)
from .sharing import DataflowRecord, SharingState
from .store import (BlobStore, DataElementRecord, default_backends,
                    approval_owners, provenance_closure, registry_jsonl)
from .vault import (SYSTEM_AGENT, EncryptedWal, VolatileKeyManager, read_checkpoint,
                    read_wal_records, seal, unseal, write_checkpoint)

logger = logging.getLogger(__name__)

WAL_FILE = "escrow.wal"
CHECKPOINT_FILE = "escrow.ckpt"
BLOB_DIR = "blobs"


@dataclass
class EscrowConfig:
    """Operator-side deployment knobs. The master key never touches disk
    inside data_dir; it is handed to the process at startup."""

    data_dir: str
    master_key: bytes
    auditor_external_ids: tuple = ()
    fsync: bool = True
    short_circuit_enabled: bool = True  # off only for benchmark control runs


@dataclass
class StagedIntermediate:
    de_id: int
    key: str
    data: bytes
    provenance: tuple
    rewrite_of: Optional[int] = None


def hash_password(password: str) -> str:
    salt = os.urandom(16)
    digest = hashlib.scrypt(password.encode(), salt=salt, n=8192, r=8, p=1, dklen=32)
    return f"scrypt$8192$8$1${salt.hex()}${digest.hex()}"


def check_password(stored: str, password: str) -> bool:
    try:
        scheme, n, r, p, salt_hex, digest_hex = stored.split("$")
        if scheme != "scrypt":
            return False
        digest = hashlib.scrypt(password.encode(), salt=bytes.fromhex(salt_hex),
                                n=int(n), r=int(r), p=int(p), dklen=32)
        return hmac.compare_digest(digest.hex(), digest_hex)
    except (ValueError, TypeError):
        return False


class Escrow:
    """A running escrow instance bound to one data directory and one program."""

    def __init__(self, config: EscrowConfig, program: Optional[SharingProgram] = None):
        self.config = config
        self.program = program or SharingProgram("empty")
        os.makedirs(config.data_dir, exist_ok=True)
        self.keys = VolatileKeyManager()
        self.keys.submit(SYSTEM_AGENT, config.master_key)
        self.blobs = BlobStore(os.path.join(config.data_dir, BLOB_DIR))
        self.backends = default_backends()
        self.db = EscrowDb()
        self._deferred: list = []  # WalRecords awaiting keys or dependencies
        self._lock = threading.RLock()
        self._contract_locks: dict[int, threading.Lock] = {}
        self._wal_path = os.path.join(config.data_dir, WAL_FILE)
        self._ckpt_path = os.path.join(config.data_dir, CHECKPOINT_FILE)
        self._recover_from_disk()
        self.wal = EncryptedWal(self._wal_path, self.keys, fsync=config.fsync,
                                min_next_seq=self.db.last_seq + 1)

    # ------------------------------------------------------------------
    # recovery
    # ------------------------------------------------------------------

    def _recover_from_disk(self) -> None:
        had_artifacts = os.path.exists(self._wal_path) or os.path.exists(self._ckpt_path)
        upto = 0
        ckpt = read_checkpoint(self._ckpt_path, self.keys.aead(SYSTEM_AGENT))
        if ckpt is not None:
            upto, snapshot = ckpt
            self.db = EscrowDb.from_snapshot(json.loads(snapshot.decode()))
        records = [
            r for r in read_wal_records(self._wal_path,
                                        expected_first_seq=upto + 1)
            if r.seq > upto
        ]
        applied = 0
        for record in records:
            if self._try_apply_record(record):
                applied += 1
            else:
                self._deferred.append(record)
        self._sweep_deferred()
        if had_artifacts:
            self.db.add_volatile_audit(
                "recovery", actor=SYSTEM_AGENT,
                detail={"replayed": applied, "deferred": len(self._deferred)},
                ts=time.time(),
            )

    def _try_apply_record(self, record) -> bool:
        """Apply one WAL record if its key is present and its deps exist."""
        if not self.keys.has(record.agent_id):
            return False
        aead = self.keys.aead(record.agent_id)
        try:
            payload = aead.decrypt(record.nonce, record.ciphertext, record.aad)
        except Exception:
            if record.agent_id == SYSTEM_AGENT:
                raise CorruptLog(
                    f"system record {record.seq} failed authentication",
                    first_bad_seq=record.seq,
                )
            raise KeyMismatch(
                f"record {record.seq} for agent {record.agent_id} failed authentication"
            )
        mutation = json.loads(payload.decode())
        if not self.db.can_apply(mutation):
            return False
        self.db.apply(mutation, record.seq)
        return True

    def _sweep_deferred(self) -> None:
        """Re-run deferred records in seq order until no more progress."""
        progress = True
        while progress:
            progress = False
            still: list = []
            for record in self._deferred:
                if self._try_apply_record(record):
                    progress = True
                else:
                    still.append(record)
            self._deferred = still

    @property
    def deferred_count(self) -> int:
        return len(self._deferred)

    # ------------------------------------------------------------------
    # mutation path: append to the log, then apply
    # ------------------------------------------------------------------

    def _mutate(self, agent_id: int, payload: dict) -> int:
        data = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        seq = self.wal.append(agent_id, data)
        self.db.apply(payload, seq)
        return seq

    # ------------------------------------------------------------------
    # agents and keys
    # ------------------------------------------------------------------

    def register_agent(self, name: str, *, external_id: Optional[str] = None,
                       password: Optional[str] = None,
                       is_auditor: Optional[bool] = None) -> int:
        if not name:
            raise ValueError("agent name must be non-empty")
        with self._lock:
            if external_id and external_id in self.db.external_index:
                raise DuplicateExternalId(f"external id {external_id!r} already bound")
            auditor = is_auditor if is_auditor is not None else (
                external_id in self.config.auditor_external_ids if external_id else False
            )
            agent_id = self.db.next_agent
            self._mutate(SYSTEM_AGENT, {
                "op": "register_agent",
                "id": agent_id,
                "external_id": external_id,
                "name": name,
                "password_hash": hash_password(password) if password else "",
                "is_auditor": auditor,
                "ts": time.time(),
            })
            return agent_id

    def deregister_agent(self, agent_id: int) -> None:
        with self._lock:
            self._require_active(agent_id)
            self._mutate(SYSTEM_AGENT, {
                "op": "deregister_agent", "id": agent_id, "ts": time.time(),
            })
            self.keys.remove(agent_id)

    def resolve_agent(self, ref: Union[int, str]) -> int:
        """Accepts a numeric id or an external id string."""
        with self._lock:
            if isinstance(ref, int):
                if ref not in self.db.agents:
                    raise UnknownAgent(f"no agent {ref}")
                return ref
            agent_id = self.db.external_index.get(ref)
            if agent_id is None:
                raise UnknownAgent(f"no agent with external id {ref!r}")
            return agent_id

    def _require_active(self, agent_id: int):
        rec = self.db.agents.get(agent_id)
        if rec is None:
            raise UnknownAgent(f"no agent {agent_id}")
        if not rec.active:
            raise StaleId(f"agent {agent_id} is deregistered")
        return rec

    def authenticate(self, ref: Union[int, str], password: str) -> int:
        """Password check for the REST login flow."""
        agent_id = self.resolve_agent(ref)
        rec = self._require_active(agent_id)
        if not rec.password_hash or not check_password(rec.password_hash, password):
            raise AuthFailure("bad credentials")
        return agent_id

    def submit_key(self, agent_id: int, key: bytes) -> None:
        """Install an agent's symmetric key (memory only) and replay any
        deferred records now decryptable. A key that fails to authenticate
        that agent's logged records is rejected."""
        with self._lock:
            self._require_active(agent_id)
            self.keys.submit(agent_id, key)
            try:
                self._sweep_deferred()
            except (KeyMismatch, AuthFailure):
                self.keys.remove(agent_id)
                raise KeyMismatch(
                    f"submitted key fails to authenticate agent {agent_id}'s records"
                )

    def has_key(self, agent_id: int) -> bool:
        return self.keys.has(agent_id)

    def is_auditor(self, agent_id: int) -> bool:
        rec = self.db.agents.get(agent_id)
        return bool(rec and rec.is_auditor)

    # ------------------------------------------------------------------
    # data elements
    # ------------------------------------------------------------------

    def register_data_element(self, owner: int, type: str,
                              access_parameters: Optional[dict] = None,
                              discoverable: bool = False) -> int:
        with self._lock:
            self._require_active(owner)
            if type not in self.backends:
                raise UnsupportedType(f"no backend for element type {type!r}")
            params = access_parameters or {}
            self.backends[type].validate_access_parameters(params)
            de_id = self.db.next_element
            self._mutate(owner, {
                "op": "register_de",
                "id": de_id,
                "owner": owner,
                "type": type,
                "access_parameters": params,
                "discoverable": bool(discoverable),
                "ts": time.time(),
            })
            return de_id

    def upload_data_element(self, owner: int, de_id: int, data: bytes) -> None:
        with self._lock:
            self._require_active(owner)
            rec = self.db.elements.get(de_id)
            if rec is None:
                raise UnknownDataElement(f"no element {de_id}")
            if rec.owner != owner:
                raise OwnerMismatch(f"element {de_id} is not owned by agent {owner}")
            if rec.type == "open_data":
                raise UnsupportedType("open_data elements fetch remotely; no upload")
            if rec.uploaded:
                raise DuplicateKey(f"element {de_id} already has content")
            sealed = seal(self.keys.aead(owner), data)
            digest = self.blobs.write(de_id, sealed)  # blob durable before the record
            self._mutate(owner, {
                "op": "upload_de",
                "id": de_id,
                "owner": owner,
                "digest": digest,
                "size": len(sealed),
                "ts": time.time(),
            })

    def list_discoverable_des(self, caller: int) -> list:
        with self._lock:
            self._require_active(caller)
            return [
                {"id": rec.id, "type": rec.type}
                for rec in (self.db.elements[i] for i in sorted(self.db.elements))
                if rec.discoverable and not rec.is_intermediate
            ]

    def element_record(self, de_id: int) -> DataElementRecord:
        rec = self.db.elements.get(de_id)
        if rec is None:
            raise UnknownDataElement(f"no element {de_id}")
        return rec

    def registry_export(self) -> str:
        """Registry as JSON lines (the serialization checkpoints embed)."""
        with self._lock:
            return registry_jsonl(self.db.elements)

    # ------------------------------------------------------------------
    # contracts
    # ------------------------------------------------------------------

    def propose_contract(self, proposer: Union[int, str], dest: Sequence,
                         de_ids: Sequence[int], function: str, args: Optional[dict] = None,
                         conditions: Optional[Sequence] = None,
                         max_uses: Optional[int] = 1,
                         expires_at: Optional[float] = None) -> int:
        with self._lock:
            proposer_id = self.resolve_agent(proposer)
            self._require_active(proposer_id)
            dest_ids = tuple(dict.fromkeys(self.resolve_agent(d) for d in dest))
            if not dest_ids:
                raise UnknownAgent("contracts need at least one destination agent")
            for d in dest_ids:
                self._require_active(d)
            de_tuple = tuple(dict.fromkeys(int(d) for d in de_ids))
            if not de_tuple:
                raise UnknownDataElement("contracts need at least one data element")
            for d in de_tuple:
                if d not in self.db.elements:
                    raise UnknownDataElement(f"no element {d}")
            ref = self.program.registry.proposable_ref(function)
            norm_args = self._validated_contract_args(args or {})
            src = set(approval_owners(self.db.elements, de_tuple))
            src |= {a.id for a in self.db.agents.values() if a.is_auditor and a.active}
            src_ids = tuple(sorted(src))
            cond_list = [self._condition_dict(c) for c in (conditions or [])]
            contract_id = self.db.next_contract
            now = time.time()
            candidate = Contract(
                id=contract_id, proposer=proposer_id, dest_agents=dest_ids,
                data_elements=de_tuple, function=ref.name, args=norm_args,
                src_agents=src_ids,
                conditions=[ConditionDescriptor(**c) for c in cond_list],
                approvals={},
                max_uses=max_uses, expires_at=expires_at, created_at=now,
            )
            auto = []
            ordered_rules = [self.db.rules[r] for r in self.db.rule_order]
            for agent in src_ids:
                owned = [e for e, rec in self.db.elements.items() if rec.owner == agent]
                rule = evaluate_rules(candidate, ordered_rules, agent, owned)
                if rule is not None:
                    auto.append({
                        "agent": agent,
                        "decision": "approve" if rule.decision == "approve" else "reject",
                        "rule_id": rule.id,
                        "reason": rule.description or f"standing rule {rule.id}",
                    })
            self._mutate(proposer_id, {
                "op": "propose",
                "id": contract_id,
                "proposer": proposer_id,
                "dest": list(dest_ids),
                "de_ids": list(de_tuple),
                "function": ref.name,
                "args": norm_args,
                "src": list(src_ids),
                "conditions": cond_list,
                "max_uses": max_uses,
                "expires_at": expires_at,
                "auto": auto,
                "ts": now,
            })
            return contract_id

    @staticmethod
    def _condition_dict(c) -> dict:
        if isinstance(c, ConditionDescriptor):
            return c.to_dict()
        d = dict(c)
        return {"kind": d.get("kind", "precondition"),
                "description": d["description"],
                "machine_tag": d.get("machine_tag")}

    def _validated_contract_args(self, args: dict) -> dict:
        out = {}
        for key, value in args.items():
            if is_wildcard(value):
                rules = value["__wildcard__"]
                if not isinstance(rules, dict) or not set(rules) <= {"min", "max", "choices"}:
                    raise ValueError(f"bad wildcard spec for argument {key!r}")
                out[key] = {"__wildcard__": normalize_args(rules)}
            else:
                out[key] = normalize_args(value)
        return out

    def approve_contract(self, agent: Union[int, str], contract_id: int) -> str:
        return self._decide(agent, contract_id, approve=True, reason="")

    def deny_contract(self, agent: Union[int, str], contract_id: int,
                      reason: str = "") -> str:
        return self._decide(agent, contract_id, approve=False, reason=reason)

    def _decide(self, agent: Union[int, str], contract_id: int, approve: bool,
                reason: str) -> str:
        with self._lock:
            agent_id = self.resolve_agent(agent)
            self._require_active(agent_id)
            contract = self._contract(contract_id)
            status = contract.status()
            if status in (ContractStatus.DENIED, ContractStatus.EXECUTED,
                          ContractStatus.EXPIRED):
                raise AlreadyDecided(f"contract {contract_id} is {status.value}")
            slot = contract.slot(agent_id)  # NotASourceAgent when absent
            if slot.state != SlotState.PENDING:
                raise AlreadyDecided(
                    f"agent {agent_id} already {slot.state.value} contract {contract_id}"
                )
            now = time.time()
            # the resulting status travels in the record so replay reports it
            # identically regardless of key-arrival order
            preview = copy.deepcopy(contract)
            status_after = preview.decide(agent_id, approve, reason=reason,
                                          now=now).value
            self._mutate(agent_id, {
                "op": "decide",
                "contract_id": contract_id,
                "agent": agent_id,
                "approve": approve,
                "reason": reason,
                "status_after": status_after,
                "ts": now,
            })
            return contract.status().value

    def _contract(self, contract_id: int) -> Contract:
        contract = self.db.contracts.get(contract_id)
        if contract is None:
            raise UnknownContract(f"no contract {contract_id}")
        return contract

    def get_pending_contracts(self, agent: Union[int, str]) -> list:
        with self._lock:
            agent_id = self.resolve_agent(agent)
            self._require_active(agent_id)
            out = []
            for cid in sorted(self.db.contracts):
                contract = self.db.contracts[cid]
                if contract.status() != ContractStatus.PROPOSED:
                    continue
                slot = contract.approvals.get(agent_id)
                if slot is not None and slot.state == SlotState.PENDING:
                    out.append(contract.to_dict())
            return out

    def get_contract(self, agent: Union[int, str], contract_id: int) -> dict:
        with self._lock:
            agent_id = self.resolve_agent(agent)
            contract = self._contract(contract_id)
            if not contract.visible_to(agent_id):
                raise NotASourceAgent(
                    f"contract {contract_id} is not visible to agent {agent_id}"
                )
            return contract.to_dict()

    def is_executable(self, contract_id: int) -> bool:
        with self._lock:
            return self._contract(contract_id).is_executable()

    def contract_status(self, contract_id: int) -> str:
        with self._lock:
            return self._contract(contract_id).status().value

    def register_cmr(self, agent: Union[int, str], *, decision: str = "approve",
                     functions: Optional[Sequence[str]] = None,
                     de_ids: Optional[Sequence[int]] = None,
                     dest_agents: Optional[Sequence] = None,
                     description: str = "",
                     owner: Optional[Union[int, str]] = None) -> int:
        with self._lock:
            agent_id = self.resolve_agent(agent)
            self._require_active(agent_id)
            if owner is not None and self.resolve_agent(owner) != agent_id:
                raise OwnerMismatch("a rule can only speak for its registering agent")
            if decision not in ("approve", "reject"):
                raise ValueError("rule decision must be 'approve' or 'reject'")
            if functions is not None:
                for fname in functions:
                    self.program.registry.proposable_ref(fname)
            if de_ids is not None:
                for d in de_ids:
                    rec = self.db.elements.get(d)
                    if rec is None:
                        raise UnknownDataElement(f"no element {d}")
                    if rec.owner != agent_id:
                        raise NotOwner(f"element {d} is not owned by agent {agent_id}")
            dest_resolved = None
            if dest_agents is not None:
                dest_resolved = [self.resolve_agent(d) for d in dest_agents]
            rule_id = self.db.next_rule
            self._mutate(agent_id, {
                "op": "register_rule",
                "id": rule_id,
                "owner": agent_id,
                "decision": decision,
                "functions": list(functions) if functions is not None else None,
                "de_ids": list(de_ids) if de_ids is not None else None,
                "dest_agents": dest_resolved,
                "description": description,
                "ts": time.time(),
            })
            return rule_id

    def list_cmrs(self, agent: Union[int, str]) -> list:
        with self._lock:
            agent_id = self.resolve_agent(agent)
            return [self.db.rules[r].to_dict() for r in self.db.rule_order
                    if self.db.rules[r].owner == agent_id]

    # ------------------------------------------------------------------
    # functions
    # ------------------------------------------------------------------

    def show_functions(self, caller: Union[int, str]) -> list:
        with self._lock:
            self._require_active(self.resolve_agent(caller))
            return [ref.to_dict() for ref in self.program.registry.agent_visible()]

    def call_function(self, caller: Union[int, str], name: str,
                      args: Optional[dict] = None):
        """Invoke an agent-callable function.

        Endpoint-only functions run directly and return their value.
        Contract-gated functions need an approved, unexhausted contract
        matching (name, canonical args) with the caller in its destination
        set; they run jailed and return an ExecutionResult whose output is
        sealed for the caller.
        """
        t0 = perf_counter()
        call_args = dict(args or {})
        with self._lock:
            caller_id = self.resolve_agent(caller)
            self._require_active(caller_id)
            ref = self.program.registry.callable_ref(name)
        if not ref.contract_gated:
            return self._run_endpoint(caller_id, ref, call_args)
        norm = normalize_args(call_args)
        with self._lock:
            contract = self._match_contract(caller_id, ref.name, norm)
            clock = self._contract_locks.setdefault(contract.id, threading.Lock())
        with clock:
            return self._run_contract_function(caller_id, ref, contract, call_args, t0)

    def _run_endpoint(self, caller_id: int, ref: FunctionRef, call_args: dict):
        host = EndpointHost(self, caller_id)
        try:
            return ref.body(host, **call_args)
        except EscrowError:
            raise
        except Exception as exc:
            logger.exception("endpoint %s failed", ref.name)
            raise FunctionFailed(f"{ref.name} failed: {type(exc).__name__}") from None

    def _match_contract(self, caller_id: int, fn_name: str, norm_args: dict) -> Contract:
        matching = [
            c for c in (self.db.contracts[i] for i in sorted(self.db.contracts))
            if c.function == fn_name and args_match(c.args, norm_args)
        ]
        executable = [c for c in matching if c.is_executable()]
        if not executable:
            # contracts that exist but are unapproved/spent are not revealed
            raise NoMatchingContract(
                f"no approved contract matches {fn_name} with these arguments"
            )
        mine = [c for c in executable if caller_id in c.dest_agents]
        if not mine:
            raise NotDestinationAgent(
                f"caller {caller_id} is not a destination of any matching contract"
            )
        return mine[0]

    def _run_contract_function(self, caller_id: int, ref: FunctionRef,
                               contract: Contract, call_args: dict, t0: float):
        with self._lock:
            if not contract.is_executable():
                raise NoMatchingContract(
                    f"contract {contract.id} stopped being executable"
                )
            if not self.keys.has(caller_id):
                raise MissingKey(f"agent {caller_id} has no key for result release")
            ctx = ExecutionContext(
                contract_id=contract.id,
                caller=caller_id,
                permitted=set(contract.data_elements),
            )
        staging: dict[str, StagedIntermediate] = {}
        host = ContractHost(self, ctx, staging, contract)
        setup_ms = (perf_counter() - t0) * 1000
        tc = perf_counter()
        outcome: Optional[ConditionFailure] = None
        try:
            rv = ref.body(host, **call_args)
        except ConditionFailure as cf:
            outcome = cf
            rv = None
        except IllegalAccess:
            self._commit_short_circuit(ctx, contract, caller_id)
            raise ShortCircuited("execution denied")
        except EscrowError:
            self._commit_failed(ctx, contract, caller_id, "escrow error")
            raise
        except Exception as exc:
            logger.exception("contract function %s failed", ref.name)
            self._commit_failed(ctx, contract, caller_id, type(exc).__name__)
            raise FunctionFailed(f"{ref.name} failed") from None
        compute_ms = (perf_counter() - tc) * 1000
        if ctx.status == ExecutionStatus.SHORT_CIRCUITED or host.violations:
            # covers bodies that swallowed the abort, and disabled-enforcement
            # benchmark runs where the violation takes effect at completion
            self._commit_short_circuit(ctx, contract, caller_id)
            raise ShortCircuited("execution denied")
        if isinstance(rv, ConditionFailure):
            outcome = rv
            rv = None
        ctx.status = ExecutionStatus.COMPLETED
        return self._commit_completed(ctx, contract, caller_id, host, staging,
                                      rv, outcome, setup_ms, compute_ms, t0)

    def _commit_completed(self, ctx, contract, caller_id, host, staging, rv,
                          outcome, setup_ms, compute_ms, t0):
        with self._lock:
            if not contract.is_executable():
                raise NoMatchingContract(
                    f"contract {contract.id} stopped being executable"
                )
            self._commit_intermediates(staging)
            now = time.time()
            preview = copy.deepcopy(contract)
            preview.uses += 1
            consumed_status = preview.status(now).value
            unchanged_status = contract.status(now).value
            if outcome is None:
                payload = rv if isinstance(rv, bytes) else json.dumps(
                    rv, sort_keys=True, separators=(",", ":")).encode()
                sealed = seal(self.keys.aead(caller_id), payload)
                out_id = self.db.next_element
                digest = self.blobs.write(out_id, sealed)
                self._mutate(caller_id, {
                    "op": "execution",
                    "contract_id": contract.id,
                    "caller": caller_id,
                    "outcome": {"kind": "released", "message": ""},
                    "output": {"id": out_id, "digest": digest, "size": len(sealed),
                               "type": "kv"},
                    "reads": list(ctx.distinct_reads()),
                    "reused": list(host.reused),
                    "consume": True,
                    "status_after": consumed_status,
                    "ts": now,
                })
                result = ExecutionResult(
                    contract_id=contract.id,
                    condition_outcome=ConditionOutcome("released"),
                    output=sealed,
                    output_de_id=out_id,
                )
            else:
                kind = ("precondition_failed" if outcome.kind == "pre"
                        else "postcondition_failed")
                self._mutate(caller_id, {
                    "op": "execution",
                    "contract_id": contract.id,
                    "caller": caller_id,
                    "outcome": {"kind": kind, "message": outcome.message},
                    "output": None,
                    "reads": list(ctx.distinct_reads()),
                    "reused": list(host.reused),
                    "consume": False,
                    "status_after": unchanged_status,
                    "ts": now,
                })
                result = ExecutionResult(
                    contract_id=contract.id,
                    condition_outcome=ConditionOutcome(kind, outcome.message),
                )
            result.timing = ExecutionTiming(
                setup_ms=setup_ms,
                compute_ms=compute_ms,
                total_ms=(perf_counter() - t0) * 1000,
            )
            return result

    def _commit_intermediates(self, staging: dict) -> None:
        for key, st in staging.items():
            existing = self.db.kv_index.get(key)
            if existing is not None and existing != st.rewrite_of:
                # another execution committed this key meanwhile; keep the
                # existing entry unless ours covers at least its owners
                new_owners = self._closure_owners_of_provenance(st.provenance)
                old_owners = provenance_closure(self.db.elements, existing).root_owners
                if not old_owners <= new_owners:
                    logger.warning("dropping intermediate %r: key taken by %d",
                                   key, existing)
                    continue
            sealed = seal(self.keys.aead(SYSTEM_AGENT), st.data)
            digest = self.blobs.write(st.de_id, sealed)
            self._mutate(SYSTEM_AGENT, {
                "op": "intermediate",
                "id": st.de_id,
                "key": key,
                "provenance": list(st.provenance),
                "digest": digest,
                "size": len(sealed),
                "rewrite_of": st.rewrite_of,
                "ts": time.time(),
            })

    def _closure_owners_of_provenance(self, provenance: Iterable[int]) -> frozenset:
        owners: set[int] = set()
        for de_id in provenance:
            owners |= provenance_closure(self.db.elements, de_id).root_owners
            rec = self.db.elements[de_id]
            if rec.owner != SYSTEM_AGENT:
                owners.add(rec.owner)
        return frozenset(owners)

    def _commit_short_circuit(self, ctx, contract, caller_id) -> None:
        ctx.status = ExecutionStatus.SHORT_CIRCUITED
        with self._lock:
            self._mutate(SYSTEM_AGENT, {
                "op": "short_circuit",
                "contract_id": contract.id,
                "caller": caller_id,
                "de_id": ctx.offending_de,
                "reads": list(ctx.distinct_reads()),
                "ts": time.time(),
            })

    def _commit_failed(self, ctx, contract, caller_id, detail: str) -> None:
        ctx.status = ExecutionStatus.FAILED
        with self._lock:
            now = time.time()
            self._mutate(caller_id, {
                "op": "execution",
                "contract_id": contract.id,
                "caller": caller_id,
                "outcome": {"kind": "failed", "message": detail},
                "output": None,
                "reads": list(ctx.distinct_reads()),
                "reused": [],
                "consume": False,
                "status_after": contract.status(now).value,
                "ts": now,
            })

    # ------------------------------------------------------------------
    # mediated data access (host-side)
    # ------------------------------------------------------------------

    def _mediated_read(self, ctx: ExecutionContext, de_id: int,
                       violations: list) -> bytes:
        """Every contract-function read funnels through here."""
        if de_id not in ctx.permitted:
            if self.config.short_circuit_enabled:
                ctx.status = ExecutionStatus.SHORT_CIRCUITED
                ctx.offending_de = de_id
                raise IllegalAccess(f"element {de_id} is outside the contract",
                                    de_id=de_id)
            if de_id not in violations:
                violations.append(de_id)
            if ctx.offending_de is None:
                ctx.offending_de = de_id
            if de_id not in self.db.elements:
                raise IllegalAccess(f"element {de_id} does not exist", de_id=de_id)
        rec = self.db.elements.get(de_id)
        if rec is None or not rec.uploaded:
            raise UnknownDataElement(f"element {de_id} has no stored content")
        if rec.type == "open_data":
            return self.backends["open_data"].fetch(rec.access_parameters)
        sealed = self.blobs.read(de_id)
        ctx.log_read(de_id)
        try:
            return unseal(self.keys.aead(rec.owner), sealed)
        except AuthFailure:
            if rec.owner == SYSTEM_AGENT:
                raise
            raise KeyMismatch(
                f"agent {rec.owner}'s key fails to authenticate element {de_id}"
            ) from None

    def unseal_for_caller(self, agent_id: int, sealed: bytes) -> bytes:
        """Decrypt a released output with the caller's key (client helper)."""
        return unseal(self.keys.aead(agent_id), sealed)

    # ------------------------------------------------------------------
    # audit and state views
    # ------------------------------------------------------------------

    def audit_events(self, caller: Union[int, str]) -> list:
        with self._lock:
            caller_id = self.resolve_agent(caller)
            self._require_active(caller_id)
            if not self.is_auditor(caller_id):
                raise NotOwner("only configured auditors may read the audit trail")
            return [e.to_dict() for e in self.db.audit]

    def sharing_state(self) -> SharingState:
        with self._lock:
            return SharingState(
                agents=frozenset(self.db.agents),
                data_elements=frozenset(self.db.elements),
                access={a: frozenset(s) for a, s in self.db.access.items()},
            )

    def dataflow_records(self) -> list:
        with self._lock:
            return [
                DataflowRecord(
                    dest_agents=frozenset(d["dest_agents"]),
                    src_elements=frozenset(d["src_elements"]),
                    function_id=d["function_id"],
                    produced=d["produced"],
                    timestamp=d["timestamp"],
                )
                for d in self.db.dataflows
            ]

    def state_snapshot(self) -> dict:
        with self._lock:
            return self.db.snapshot()

    # ------------------------------------------------------------------
    # checkpointing
    # ------------------------------------------------------------------

    def checkpoint(self) -> int:
        """Seal a snapshot and truncate the log to records after it."""
        with self._lock:
            if self._deferred:
                raise MissingKey(
                    "cannot checkpoint while records await missing agent keys"
                )
            upto = self.db.last_seq
            snapshot = json.dumps(self.db.snapshot(), sort_keys=True).encode()
            write_checkpoint(self._ckpt_path, upto, snapshot,
                             self.keys.aead(SYSTEM_AGENT))
            remaining = [r for r in read_wal_records(self._wal_path) if r.seq > upto]
            self.wal.rewrite(remaining)
            return upto

    def close(self) -> None:
        self.wal.close()


# ----------------------------------------------------------------------
# host interfaces handed to sharing-program functions
# ----------------------------------------------------------------------

class EndpointHost:
    """What an api_endpoint function may do: registry and contract
    operations on behalf of the caller. No mediated data reads."""

    def __init__(self, escrow: Escrow, caller: int):
        self._escrow = escrow
        self.caller = caller

    def register_data_element(self, type: str, access_parameters: Optional[dict] = None,
                              discoverable: bool = False) -> int:
        return self._escrow.register_data_element(
            self.caller, type, access_parameters, discoverable)

    def upload_data_element(self, de_id: int, data: bytes) -> None:
        self._escrow.upload_data_element(self.caller, de_id, data)

    def propose_contract(self, dest, de_ids, function, args=None, conditions=None,
                         max_uses: Optional[int] = 1,
                         expires_at: Optional[float] = None) -> int:
        return self._escrow.propose_contract(
            self.caller, dest, de_ids, function, args,
            conditions=conditions, max_uses=max_uses, expires_at=expires_at)

    def approve_contract(self, contract_id: int) -> str:
        return self._escrow.approve_contract(self.caller, contract_id)

    def deny_contract(self, contract_id: int, reason: str = "") -> str:
        return self._escrow.deny_contract(self.caller, contract_id, reason)

    def get_pending_contracts(self) -> list:
        return self._escrow.get_pending_contracts(self.caller)

    def register_cmr(self, **kwargs) -> int:
        return self._escrow.register_cmr(self.caller, **kwargs)

    def list_discoverable_des(self) -> list:
        return self._escrow.list_discoverable_des(self.caller)

    def show_functions(self) -> list:
        return self._escrow.show_functions(self.caller)


class ContractHost(EndpointHost):
    """Adds mediated data access for jailed contract-function executions."""

    def __init__(self, escrow: Escrow, ctx: ExecutionContext,
                 staging: dict, contract: Contract):
        super().__init__(escrow, ctx.caller)
        self._ctx = ctx
        self._staging = staging
        self._contract = contract
        self.violations: list[int] = []
        self.reused: list[int] = []

    @property
    def contract_id(self) -> int:
        return self._ctx.contract_id

    def read(self, de_id: int) -> bytes:
        """Plaintext of one permitted element. Anything else aborts the run."""
        for st in self._staging.values():
            if st.de_id == de_id:
                self._ctx.log_read(de_id)
                return st.data
        return self._escrow._mediated_read(self._ctx, de_id, self.violations)

    def get_all_accessible_des(self) -> list:
        return sorted(self._ctx.permitted)

    def write_intermediate(self, key: str, data: bytes) -> int:
        """Cache bytes under a global key; provenance = distinct reads so far."""
        if not isinstance(data, bytes):
            raise TypeError("intermediates hold raw bytes")
        provenance = self._ctx.distinct_reads()
        # ids read from staging belong to this same run; map them onto their
        # provenance instead (they are not committed yet)
        staged_ids = {st.de_id for st in self._staging.values()}
        flat: list[int] = []
        for de_id in provenance:
            if de_id in staged_ids:
                for st in self._staging.values():
                    if st.de_id == de_id:
                        flat.extend(p for p in st.provenance if p not in flat)
            elif de_id not in flat:
                flat.append(de_id)
        provenance = tuple(flat)
        if not provenance:
            warnings.warn(
                f"intermediate {key!r} written before any read; provenance is empty",
                SuspiciousEmptyProvenance,
            )
        escrow = self._escrow
        with escrow._lock:
            rewrite_of = None
            existing = escrow.db.kv_index.get(key)
            if key in self._staging:
                existing_staged = self._staging[key]
                rewrite_of = existing_staged.rewrite_of
            elif existing is not None:
                old_owners = provenance_closure(escrow.db.elements, existing).root_owners
                new_owners = escrow._closure_owners_of_provenance(provenance)
                if not old_owners <= new_owners:
                    raise DuplicateKey(
                        f"intermediate key {key!r} exists with wider ownership"
                    )
                rewrite_of = existing
            de_id = escrow.db.next_element
            escrow.db.next_element += 1  # reserve; durable only at commit
        self._staging[key] = StagedIntermediate(
            de_id=de_id, key=key, data=data, provenance=provenance,
            rewrite_of=rewrite_of,
        )
        return de_id

    def read_intermediate(self, key: str) -> Optional[int]:
        """Id of the cached intermediate when this contract's sources cover
        its provenance owners; None when absent or not covered."""
        st = self._staging.get(key)
        if st is not None:
            return st.de_id
        escrow = self._escrow
        with escrow._lock:
            de_id = escrow.db.kv_index.get(key)
            if de_id is None:
                return None
            owners = provenance_closure(escrow.db.elements, de_id).root_owners
            if not owners <= set(self._contract.src_agents):
                return None
            self._ctx.permitted.add(de_id)
        if de_id not in self.reused:
            self.reused.append(de_id)
        return de_id

    def precondition_failed(self, message: str) -> ConditionFailure:
        return ConditionFailure("pre", message)

    def postcondition_failed(self, message: str) -> ConditionFailure:
        return ConditionFailure("post", message)
