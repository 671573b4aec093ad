"""Deterministic in-memory state, mutated only by applying WAL payloads.

The engine builds a mutation dict (all ids pre-assigned), appends it to the
encrypted log, then hands it to ``EscrowDb.apply``. Recovery replays the
same payloads through the same code path, so a recovered database is
byte-identical to the pre-crash one. Everything here must therefore be a
pure function of the mutation stream: no clocks, no randomness, no config
lookups at apply time.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Optional

from .contracts import (ApprovalSlot, ConditionDescriptor, Contract, ContractRule,
                        SlotState)
from .errors import CorruptLog
from .store import DataElementRecord
from .vault import SYSTEM_AGENT


@dataclass
class AgentRecord:
    id: int
    external_id: Optional[str]
    name: str
    password_hash: str = ""
    active: bool = True
    is_auditor: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "external_id": self.external_id,
            "name": self.name,
            "password_hash": self.password_hash,
            "active": self.active,
            "is_auditor": self.is_auditor,
        }


@dataclass
class AuditEvent:
    seq: int
    kind: str  # proposal | approval | denial | execution | short_circuit | recovery
    actor: int
    contract_id: Optional[int] = None
    detail: dict = field(default_factory=dict)
    timestamp: float = 0.0
    volatile: bool = False  # recovery events live in memory only

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "actor": self.actor,
            "contract_id": self.contract_id,
            "detail": self.detail,
            "timestamp": self.timestamp,
        }


class EscrowDb:
    """All registry, contract, access, and audit state."""

    def __init__(self):
        self.agents: dict[int, AgentRecord] = {}
        self.external_index: dict[str, int] = {}
        self.elements: dict[int, DataElementRecord] = {}
        self.contracts: dict[int, Contract] = {}
        self.rules: dict[int, ContractRule] = {}
        self.rule_order: list[int] = []
        self.kv_index: dict[str, int] = {}
        self.access: dict[int, set] = {}
        self.dataflows: list[dict] = []
        self.audit: list[AuditEvent] = []
        self.next_agent = 1
        self.next_element = 1
        self.next_contract = 1
        self.next_rule = 1
        self.last_seq = 0

    # --- replay gating ---------------------------------------------------

    def can_apply(self, mutation: dict) -> bool:
        """True when every entity the mutation references already exists.

        Used during deferred replay: a record whose dependencies are still
        queued (their originator's key has not arrived) must wait its turn.
        """
        op = mutation["op"]
        if op == "register_de":
            return mutation["owner"] in self.agents
        if op == "upload_de":
            return mutation["id"] in self.elements
        if op == "propose":
            return (
                mutation["proposer"] in self.agents
                and all(a in self.agents for a in mutation["dest"])
                and all(a in self.agents for a in mutation["src"])
                and all(d in self.elements for d in mutation["de_ids"])
            )
        if op == "decide":
            return mutation["contract_id"] in self.contracts
        if op == "register_rule":
            return mutation["owner"] in self.agents
        if op == "intermediate":
            return all(d in self.elements for d in mutation["provenance"])
        if op == "execution":
            return mutation["contract_id"] in self.contracts
        if op == "short_circuit":
            return mutation["contract_id"] in self.contracts
        if op == "deregister_agent":
            return mutation["id"] in self.agents
        return True

    # --- application -----------------------------------------------------

    def apply(self, mutation: dict, seq: int) -> None:
        op = mutation["op"]
        handler = getattr(self, f"_apply_{op}", None)
        if handler is None:
            raise CorruptLog(f"unknown mutation op {op!r} at seq {seq}", first_bad_seq=seq)
        handler(mutation, seq)
        self.last_seq = max(self.last_seq, seq)

    def _apply_register_agent(self, m: dict, seq: int) -> None:
        rec = AgentRecord(
            id=m["id"],
            external_id=m.get("external_id"),
            name=m["name"],
            password_hash=m.get("password_hash", ""),
            is_auditor=m.get("is_auditor", False),
        )
        self.agents[rec.id] = rec
        if rec.external_id:
            self.external_index[rec.external_id] = rec.id
        self.access.setdefault(rec.id, set())
        self.next_agent = max(self.next_agent, rec.id + 1)

    def _apply_deregister_agent(self, m: dict, seq: int) -> None:
        rec = self.agents[m["id"]]
        rec.active = False
        if rec.external_id:
            self.external_index.pop(rec.external_id, None)

    def _apply_register_de(self, m: dict, seq: int) -> None:
        rec = DataElementRecord(
            id=m["id"],
            owner=m["owner"],
            type=m["type"],
            access_parameters=m.get("access_parameters", {}),
            discoverable=m.get("discoverable", False),
            provenance=tuple(m.get("provenance", ())),
        )
        self.elements[rec.id] = rec
        if rec.owner != SYSTEM_AGENT:
            self.access.setdefault(rec.owner, set()).add(rec.id)
        self.next_element = max(self.next_element, rec.id + 1)

    def _apply_upload_de(self, m: dict, seq: int) -> None:
        rec = self.elements[m["id"]]
        rec.uploaded = True
        rec.digest = m.get("digest", "")

    def _apply_propose(self, m: dict, seq: int) -> None:
        contract = Contract(
            id=m["id"],
            proposer=m["proposer"],
            dest_agents=tuple(m["dest"]),
            data_elements=tuple(m["de_ids"]),
            function=m["function"],
            args=m["args"],
            src_agents=tuple(m["src"]),
            conditions=[ConditionDescriptor(**c) for c in m.get("conditions", [])],
            approvals={a: ApprovalSlot(agent_id=a) for a in m["src"]},
            max_uses=m.get("max_uses", 1),
            expires_at=m.get("expires_at"),
            created_at=m.get("ts", 0.0),
        )
        self.contracts[contract.id] = contract
        self.next_contract = max(self.next_contract, contract.id + 1)
        self._audit(seq, "proposal", actor=contract.proposer, contract_id=contract.id,
                    detail={"function": contract.function,
                            "status": contract.status(m.get("ts")).value},
                    ts=m.get("ts", 0.0))
        for auto in m.get("auto", []):
            approve = auto["decision"] == "approve"
            contract.decide(auto["agent"], approve, reason=auto.get("reason", ""),
                            via_rule=auto.get("rule_id"), now=m.get("ts"))
            self._audit(seq, "approval" if approve else "denial", actor=auto["agent"],
                        contract_id=contract.id,
                        detail={"via_rule": auto.get("rule_id"),
                                "reason": auto.get("reason", ""),
                                "status": contract.status(m.get("ts")).value},
                        ts=m.get("ts", 0.0))

    def _apply_decide(self, m: dict, seq: int) -> None:
        # The engine validated this decision before logging it, so replay
        # sets the slot directly: validation here would wrongly reject
        # records when deferred replay applies same-contract decisions in
        # key-arrival rather than seq order.
        contract = self.contracts[m["contract_id"]]
        approve = bool(m["approve"])
        slot = contract.approvals[m["agent"]]
        slot.state = SlotState.APPROVED if approve else SlotState.DENIED
        slot.timestamp = m.get("ts", 0.0)
        slot.reason = m.get("reason", "")
        slot.via_rule = None
        self._audit(seq, "approval" if approve else "denial", actor=m["agent"],
                    contract_id=contract.id,
                    detail={"reason": m.get("reason", ""),
                            "status": m.get("status_after",
                                            contract.status(m.get("ts")).value)},
                    ts=m.get("ts", 0.0))

    def _apply_register_rule(self, m: dict, seq: int) -> None:
        rule = ContractRule(
            id=m["id"],
            owner=m["owner"],
            decision=m["decision"],
            functions=tuple(m["functions"]) if m.get("functions") is not None else None,
            de_ids=tuple(m["de_ids"]) if m.get("de_ids") is not None else None,
            dest_agents=tuple(m["dest_agents"]) if m.get("dest_agents") is not None else None,
            description=m.get("description", ""),
        )
        self.rules[rule.id] = rule
        # rule ids are assigned in registration order; keep the evaluation
        # list in that order even when deferred replay applies records late
        idx = len(self.rule_order)
        while idx > 0 and self.rule_order[idx - 1] > rule.id:
            idx -= 1
        self.rule_order.insert(idx, rule.id)
        self.next_rule = max(self.next_rule, rule.id + 1)

    def _apply_intermediate(self, m: dict, seq: int) -> None:
        rec = DataElementRecord(
            id=m["id"],
            owner=SYSTEM_AGENT,
            type="kv",
            access_parameters={"key": m["key"]},
            discoverable=False,
            provenance=tuple(m["provenance"]),
            uploaded=True,
            digest=m.get("digest", ""),
        )
        self.elements[rec.id] = rec
        # same-key rewrites carry increasing ids; the guard keeps the newest
        # binding even if replay applies them out of order
        current = self.kv_index.get(m["key"])
        if current is None or rec.id >= current:
            self.kv_index[m["key"]] = rec.id
        self.next_element = max(self.next_element, rec.id + 1)

    def _apply_execution(self, m: dict, seq: int) -> None:
        contract = self.contracts[m["contract_id"]]
        output = m.get("output")
        if output is not None:
            rec = DataElementRecord(
                id=output["id"],
                owner=m["caller"],
                type=output.get("type", "kv"),
                access_parameters={"produced_by": contract.id},
                discoverable=False,
                provenance=tuple(contract.data_elements),
                uploaded=True,
                digest=output.get("digest", ""),
            )
            self.elements[rec.id] = rec
            self.access.setdefault(m["caller"], set()).add(rec.id)
            self.next_element = max(self.next_element, rec.id + 1)
            flow = {
                "dest_agents": [m["caller"]],
                "src_elements": list(contract.data_elements),
                "function_id": contract.function,
                "produced": rec.id,
                "timestamp": m.get("ts", 0.0),
                "contract_id": contract.id,
                "seq": seq,
            }
            idx = len(self.dataflows)
            while idx > 0 and self.dataflows[idx - 1].get("seq", 0) > seq:
                idx -= 1
            self.dataflows.insert(idx, flow)
        if m.get("consume"):
            contract.uses += 1
        self._audit(seq, "execution", actor=m["caller"], contract_id=contract.id,
                    detail={"outcome": m["outcome"],
                            "output_de": output["id"] if output else None,
                            "status": m.get("status_after",
                                            contract.status(m.get("ts")).value)},
                    ts=m.get("ts", 0.0))

    def _apply_short_circuit(self, m: dict, seq: int) -> None:
        self._audit(seq, "short_circuit", actor=m["caller"],
                    contract_id=m["contract_id"],
                    detail={"offending_de": m.get("de_id"),
                            "reads": m.get("reads", [])},
                    ts=m.get("ts", 0.0))

    def _audit(self, seq: int, kind: str, actor: int, contract_id: Optional[int],
               detail: dict, ts: float) -> None:
        # insert in seq order (stable for equal seqs) so the trail reads the
        # same whether records applied live or through deferred replay
        idx = len(self.audit)
        while idx > 0 and self.audit[idx - 1].seq > seq:
            idx -= 1
        self.audit.insert(idx, AuditEvent(
            seq=seq, kind=kind, actor=actor, contract_id=contract_id,
            detail=detail, timestamp=ts,
        ))

    def add_volatile_audit(self, kind: str, actor: int, detail: dict, ts: float) -> None:
        self.audit.append(AuditEvent(
            seq=self.last_seq, kind=kind, actor=actor, contract_id=None,
            detail=detail, timestamp=ts, volatile=True,
        ))

    # --- snapshots ---------------------------------------------------------

    def snapshot(self) -> dict:
        """JSON-able durable state (volatile audit events excluded)."""
        return {
            "agents": [self.agents[a].to_dict() for a in sorted(self.agents)],
            "elements": [self._element_dict(e) for e in sorted(self.elements)],
            "contracts": [self._contract_dict(c) for c in sorted(self.contracts)],
            "rules": [self.rules[r].to_dict() for r in self.rule_order],
            "kv_index": dict(sorted(self.kv_index.items())),
            "access": {str(a): sorted(s) for a, s in sorted(self.access.items())},
            "dataflows": copy.deepcopy(self.dataflows),
            "audit": [e.to_dict() for e in self.audit if not e.volatile],
            "counters": {
                "agent": self.next_agent,
                "element": self.next_element,
                "contract": self.next_contract,
                "rule": self.next_rule,
            },
            "last_seq": self.last_seq,
        }

    def _element_dict(self, de_id: int) -> dict:
        rec = self.elements[de_id]
        d = rec.to_registry_json()
        d["uploaded"] = rec.uploaded
        d["digest"] = rec.digest
        return d

    def _contract_dict(self, cid: int) -> dict:
        c = self.contracts[cid]
        return {
            "id": c.id,
            "proposer": c.proposer,
            "dest_agents": list(c.dest_agents),
            "data_elements": list(c.data_elements),
            "function": c.function,
            "args": c.args,
            "src_agents": list(c.src_agents),
            "conditions": [cd.to_dict() for cd in c.conditions],
            "approvals": [c.approvals[a].to_dict() for a in c.src_agents],
            "max_uses": c.max_uses,
            "uses": c.uses,
            "expires_at": c.expires_at,
            "created_at": c.created_at,
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "EscrowDb":
        db = cls()
        for a in snap["agents"]:
            db.agents[a["id"]] = AgentRecord(**a)
            if a.get("external_id"):
                db.external_index[a["external_id"]] = a["id"]
        for e in snap["elements"]:
            db.elements[e["id"]] = DataElementRecord(
                id=e["id"], owner=e["owner"], type=e["type"],
                access_parameters=e["access_parameters"],
                discoverable=e["discoverable"],
                provenance=tuple(e["provenance"]),
                uploaded=e.get("uploaded", False),
                digest=e.get("digest", ""),
            )
        for c in snap["contracts"]:
            contract = Contract(
                id=c["id"], proposer=c["proposer"],
                dest_agents=tuple(c["dest_agents"]),
                data_elements=tuple(c["data_elements"]),
                function=c["function"], args=c["args"],
                src_agents=tuple(c["src_agents"]),
                conditions=[ConditionDescriptor(**cd) for cd in c["conditions"]],
                max_uses=c["max_uses"], uses=c["uses"],
                expires_at=c["expires_at"], created_at=c["created_at"],
            )
            contract.approvals = {
                s["agent_id"]: ApprovalSlot(
                    agent_id=s["agent_id"], state=SlotState(s["state"]),
                    timestamp=s["timestamp"], reason=s["reason"],
                    via_rule=s["via_rule"],
                )
                for s in c["approvals"]
            }
            db.contracts[contract.id] = contract
        for r in snap["rules"]:
            rule = ContractRule(
                id=r["id"], owner=r["owner"], decision=r["decision"],
                functions=tuple(r["functions"]) if r["functions"] is not None else None,
                de_ids=tuple(r["de_ids"]) if r["de_ids"] is not None else None,
                dest_agents=tuple(r["dest_agents"]) if r["dest_agents"] is not None else None,
                description=r.get("description", ""),
            )
            db.rules[rule.id] = rule
            db.rule_order.append(rule.id)
        db.kv_index = dict(snap["kv_index"])
        db.access = {int(a): set(s) for a, s in snap["access"].items()}
        db.dataflows = copy.deepcopy(snap["dataflows"])
        db.audit = [AuditEvent(**e) for e in snap["audit"]]
        counters = snap["counters"]
        db.next_agent = counters["agent"]
        db.next_element = counters["element"]
        db.next_contract = counters["contract"]
        db.next_rule = counters["rule"]
        db.last_seq = snap["last_seq"]
        return db

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":")).encode()
