"""Contracts: the unit of agreement gating every dataflow.

A contract fixes destination agents, the data elements a function may read,
the function and its (possibly wildcarded) arguments, and one approval slot
per source agent. Source agents are derived, never client-supplied: owners
over the provenance closure of the element set, plus any escrow-configured
mandatory approvers. The contract is approved exactly when every slot is
approved, denied as soon as any slot is denied, and both outcomes are
terminal — a revision is a new contract.

Argument matching is canonical-form equality: sorted keys, normalized
numbers. A contract argument may instead be a wildcard with a validation
range or choice list; a call binds the wildcard and must satisfy it.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .errors import AlreadyDecided, NotASourceAgent

WILDCARD_KEY = "__wildcard__"


class ContractStatus(str, Enum):
    """Lifecycle of a contract.

    proposed --approve (last slot)--> approved --release (uses exhausted)--> executed
    proposed --deny (any slot)-----> denied
    proposed/approved --expires_at passes--> expired

    denied, executed, and expired are terminal.
    """

    PROPOSED = "proposed"
    APPROVED = "approved"
    DENIED = "denied"
    EXECUTED = "executed"
    EXPIRED = "expired"


class SlotState(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    DENIED = "denied"


@dataclass
class ApprovalSlot:
    """One source agent's decision on a contract."""

    agent_id: int
    state: SlotState = SlotState.PENDING
    timestamp: float = 0.0
    reason: str = ""
    via_rule: Optional[int] = None  # standing-rule id when auto-decided

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "state": self.state.value,
            "timestamp": self.timestamp,
            "reason": self.reason,
            "via_rule": self.via_rule,
        }


@dataclass
class ConditionDescriptor:
    """Display-only summary of a condition enforced inside the function body."""

    kind: str  # "precondition" | "postcondition"
    description: str
    machine_tag: Optional[str] = None  # optional key standing rules can match on

    def __post_init__(self):
        if not self.description:
            raise ValueError("condition descriptions must be non-empty")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "description": self.description,
                "machine_tag": self.machine_tag}


@dataclass
class Contract:
    id: int
    proposer: int
    dest_agents: tuple
    data_elements: tuple
    function: str
    args: dict
    src_agents: tuple
    conditions: list = field(default_factory=list)
    approvals: dict = field(default_factory=dict)  # agent_id -> ApprovalSlot
    max_uses: Optional[int] = 1  # None = unlimited
    uses: int = 0
    expires_at: Optional[float] = None
    created_at: float = 0.0

    def status(self, now: Optional[float] = None) -> ContractStatus:
        states = [s.state for s in self.approvals.values()]
        if any(s == SlotState.DENIED for s in states):
            return ContractStatus.DENIED
        if all(s == SlotState.APPROVED for s in states):
            if self.max_uses is not None and self.uses >= self.max_uses:
                return ContractStatus.EXECUTED
            if self._expired(now):
                return ContractStatus.EXPIRED
            return ContractStatus.APPROVED
        if self._expired(now):
            return ContractStatus.EXPIRED
        return ContractStatus.PROPOSED

    def _expired(self, now: Optional[float]) -> bool:
        if self.expires_at is None:
            return False
        return (now if now is not None else time.time()) > self.expires_at

    def is_executable(self, now: Optional[float] = None) -> bool:
        return self.status(now) == ContractStatus.APPROVED

    def slot(self, agent_id: int) -> ApprovalSlot:
        try:
            return self.approvals[agent_id]
        except KeyError:
            raise NotASourceAgent(
                f"agent {agent_id} holds no approval slot on contract {self.id}"
            ) from None

    def decide(self, agent_id: int, approve: bool, reason: str = "",
               via_rule: Optional[int] = None, now: Optional[float] = None) -> ContractStatus:
        status = self.status(now)
        if status in (ContractStatus.DENIED, ContractStatus.EXECUTED, ContractStatus.EXPIRED):
            raise AlreadyDecided(f"contract {self.id} is {status.value}")
        slot = self.slot(agent_id)
        if slot.state != SlotState.PENDING:
            raise AlreadyDecided(
                f"agent {agent_id} already {slot.state.value} contract {self.id}"
            )
        slot.state = SlotState.APPROVED if approve else SlotState.DENIED
        slot.timestamp = now if now is not None else time.time()
        slot.reason = reason
        slot.via_rule = via_rule
        return self.status(now)

    def visible_to(self, agent_id: int) -> bool:
        return agent_id == self.proposer or agent_id in self.approvals

    def to_dict(self, now: Optional[float] = None) -> dict:
        return {
            "id": self.id,
            "proposer": self.proposer,
            "dest_agents": list(self.dest_agents),
            "data_elements": list(self.data_elements),
            "function": self.function,
            "args": self.args,
            "src_agents": list(self.src_agents),
            "conditions": [c.to_dict() for c in self.conditions],
            "approvals": {str(a): s.to_dict() for a, s in self.approvals.items()},
            "status": self.status(now).value,
            "max_uses": self.max_uses,
            "uses": self.uses,
            "expires_at": self.expires_at,
            "created_at": self.created_at,
        }


# --- canonical argument forms -------------------------------------------------

def normalize_args(value):
    """Structural normalization so semantically equal args compare equal.

    Integral floats become ints, tuples become lists, dict keys must be
    strings. NaN and infinities are rejected — they never compare equal and
    would make contract matching undecidable.
    """
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            raise ValueError("non-finite numbers are not valid contract arguments")
        if value.is_integer():
            return int(value)
        return value
    if isinstance(value, (list, tuple)):
        return [normalize_args(v) for v in value]
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise ValueError("argument object keys must be strings")
            out[k] = normalize_args(v)
        return out
    raise ValueError(f"unsupported argument type {type(value).__name__}")


def canonical_args(args: Mapping) -> str:
    """Deterministic string form: sorted keys, normalized numbers."""
    return json.dumps(normalize_args(dict(args)), sort_keys=True, separators=(",", ":"))


def is_wildcard(value) -> bool:
    return isinstance(value, dict) and set(value.keys()) == {WILDCARD_KEY}


def wildcard_accepts(spec: dict, value) -> bool:
    """spec = {"__wildcard__": {"min":?, "max":?, "choices":?}}"""
    rules = spec[WILDCARD_KEY]
    if not isinstance(rules, dict):
        return False
    if "choices" in rules:
        norm = normalize_args(value)
        if norm not in [normalize_args(c) for c in rules["choices"]]:
            return False
    if "min" in rules or "max" in rules:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        if "min" in rules and value < rules["min"]:
            return False
        if "max" in rules and value > rules["max"]:
            return False
    return True


def args_match(contract_args: Mapping, call_args: Mapping) -> bool:
    """Exact canonical match, except wildcard slots validate instead."""
    if set(contract_args.keys()) != set(call_args.keys()):
        return False
    for key, spec in contract_args.items():
        supplied = call_args[key]
        if is_wildcard(spec):
            if not wildcard_accepts(spec, supplied):
                return False
        else:
            if canonical_args({"v": spec}) != canonical_args({"v": supplied}):
                return False
    return True


# --- standing approval rules ---------------------------------------------------

@dataclass
class ContractRule:
    """A standing predicate one agent registers to pre-decide its own slot.

    Matching is data-driven so rules survive encrypted replay: each given
    field must hold, omitted fields match anything. ``de_ids``, when given,
    must cover every contract element owned by the rule's owner. The rule
    fills only the owner's slot, and only for contracts proposed after the
    rule existed.
    """

    id: int
    owner: int
    decision: str  # "approve" | "reject"
    functions: Optional[tuple] = None
    de_ids: Optional[tuple] = None
    dest_agents: Optional[tuple] = None
    description: str = ""

    def matches(self, contract: Contract, owned_elements: Iterable[int]) -> bool:
        if self.functions is not None and contract.function not in self.functions:
            return False
        if self.dest_agents is not None and not set(contract.dest_agents) <= set(self.dest_agents):
            return False
        if self.de_ids is not None:
            owned_in_contract = set(contract.data_elements) & set(owned_elements)
            if not owned_in_contract <= set(self.de_ids):
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "owner": self.owner,
            "decision": self.decision,
            "functions": list(self.functions) if self.functions is not None else None,
            "de_ids": list(self.de_ids) if self.de_ids is not None else None,
            "dest_agents": list(self.dest_agents) if self.dest_agents is not None else None,
            "description": self.description,
        }


def evaluate_rules(contract: Contract,
                   rules: Sequence[ContractRule],
                   owner: int,
                   owned_elements: Iterable[int]) -> Optional[ContractRule]:
    """First rule of `owner` (registration order) matching the contract."""
    owned = list(owned_elements)
    for rule in rules:
        if rule.owner != owner:
            continue
        if rule.matches(contract, owned):
            return rule
    return None
