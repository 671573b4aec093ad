"""Function registry and the execution context contract functions run in.

Program authors decorate plain functions:

    @api_endpoint            # agents may call it directly (no data reads)
    @contract_function       # runs only under an approved contract
    (both decorators)        # agent-callable, contract-gated
    (no decorator)           # helper: registered but never agent-callable

Every function body receives the narrow host interface as its first
parameter; that interface is the only path to data, intermediates, and
contract operations. Conditions live inside the body: code returns (or
raises) ``api.precondition_failed(msg)`` / ``api.postcondition_failed(msg)``
and the runtime withholds the output while reporting the message.
"""
from __future__ import annotations

import inspect
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from .errors import DuplicateName, HelperExposed, UnknownFunction


class FunctionKind(str, Enum):
    API_ENDPOINT = "api_endpoint"          # callable, no mediated reads
    CONTRACT_FUNCTION = "contract_function"  # proposable, not directly callable
    BOTH = "both"                          # callable, contract-gated
    HELPER = "helper"                      # internal only


def api_endpoint(fn: Callable) -> Callable:
    kinds = getattr(fn, "__escrow_kinds__", set())
    kinds.add("api_endpoint")
    fn.__escrow_kinds__ = kinds
    return fn


def contract_function(fn: Callable) -> Callable:
    kinds = getattr(fn, "__escrow_kinds__", set())
    kinds.add("contract_function")
    fn.__escrow_kinds__ = kinds
    return fn


def kind_of(fn: Callable) -> FunctionKind:
    kinds = getattr(fn, "__escrow_kinds__", set())
    if kinds == {"api_endpoint"}:
        return FunctionKind.API_ENDPOINT
    if kinds == {"contract_function"}:
        return FunctionKind.CONTRACT_FUNCTION
    if kinds == {"api_endpoint", "contract_function"}:
        return FunctionKind.BOTH
    return FunctionKind.HELPER


@dataclass(frozen=True)
class ParamSpec:
    name: str
    annotation: str = ""
    default: Optional[str] = None  # repr of the default, None when required

    def to_dict(self) -> dict:
        return {"name": self.name, "annotation": self.annotation, "default": self.default}


@dataclass
class FunctionRef:
    """Registered function: name, kind, agent-facing signature, body."""

    name: str
    kind: FunctionKind
    params: tuple
    doc: str
    body: Callable

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "params": [p.to_dict() for p in self.params],
            "doc": self.doc,
        }

    @property
    def agent_callable(self) -> bool:
        return self.kind in (FunctionKind.API_ENDPOINT, FunctionKind.BOTH)

    @property
    def contract_gated(self) -> bool:
        return self.kind in (FunctionKind.CONTRACT_FUNCTION, FunctionKind.BOTH)


def _signature_params(fn: Callable) -> tuple:
    """Agent-facing parameters: everything after the injected host handle."""
    params = list(inspect.signature(fn).parameters.values())[1:]
    out = []
    for p in params:
        if p.kind in (inspect.Parameter.VAR_POSITIONAL, inspect.Parameter.VAR_KEYWORD):
            continue
        annotation = "" if p.annotation is inspect.Parameter.empty else _ann_name(p.annotation)
        default = None if p.default is inspect.Parameter.empty else repr(p.default)
        out.append(ParamSpec(name=p.name, annotation=annotation, default=default))
    return tuple(out)


def _ann_name(ann) -> str:
    return getattr(ann, "__name__", None) or str(ann)


class FunctionRegistry:
    """All functions of the loaded sharing program, in registration order."""

    def __init__(self):
        self._by_name: dict[str, FunctionRef] = {}
        self._order: list[str] = []

    def register(self, fn: Callable, *, name: Optional[str] = None,
                 kind: Optional[FunctionKind] = None) -> FunctionRef:
        resolved = name or fn.__name__
        if resolved in self._by_name:
            raise DuplicateName(f"function {resolved!r} already registered")
        resolved_kind = kind if kind is not None else kind_of(fn)
        if kind is FunctionKind.HELPER and getattr(fn, "__escrow_kinds__", None):
            raise HelperExposed(f"{resolved!r} is decorated agent-facing but registered helper")
        ref = FunctionRef(
            name=resolved,
            kind=resolved_kind,
            params=_signature_params(fn),
            doc=inspect.getdoc(fn) or "",
            body=fn,
        )
        self._by_name[resolved] = ref
        self._order.append(resolved)
        return ref

    def get(self, name: str) -> FunctionRef:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownFunction(f"no function named {name!r}") from None

    def callable_ref(self, name: str) -> FunctionRef:
        """Resolve an agent call; helpers and contract-only names stay hidden."""
        ref = self._by_name.get(name)
        if ref is None or not ref.agent_callable:
            raise UnknownFunction(f"no function named {name!r}")
        return ref

    def proposable_ref(self, name: str) -> FunctionRef:
        ref = self._by_name.get(name)
        if ref is None or not ref.contract_gated:
            raise UnknownFunction(f"no contract-gated function named {name!r}")
        return ref

    def agent_visible(self) -> list:
        return [self._by_name[n] for n in self._order if self._by_name[n].agent_callable]

    def all_refs(self) -> list:
        return [self._by_name[n] for n in self._order]


class SharingProgram:
    """A named bundle of functions an escrow instance is deployed with."""

    def __init__(self, name: str):
        self.name = name
        self.registry = FunctionRegistry()

    def add(self, fn: Callable, *, name: Optional[str] = None) -> FunctionRef:
        return self.registry.register(fn, name=name)

    def add_helper(self, fn: Callable, *, name: Optional[str] = None) -> FunctionRef:
        return self.registry.register(fn, name=name, kind=FunctionKind.HELPER)


class ConditionFailure(Exception):
    """Signals a pre/postcondition veto. May be returned or raised by bodies."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind  # "pre" | "post"
        self.message = message


class ExecutionStatus(str, Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    SHORT_CIRCUITED = "short_circuited"
    FAILED = "failed"


@dataclass
class ExecutionContext:
    """Book-keeping for one jailed run of a contract function."""

    contract_id: int
    caller: int
    permitted: set              # element ids this run may read (grows via intermediates)
    access_log: list = field(default_factory=list)  # every id read, in order
    status: ExecutionStatus = ExecutionStatus.RUNNING
    offending_de: Optional[int] = None
    started_at: float = field(default_factory=time.perf_counter)

    def log_read(self, de_id: int) -> None:
        self.access_log.append(de_id)

    def distinct_reads(self) -> tuple:
        seen: list[int] = []
        for de_id in self.access_log:
            if de_id not in seen:
                seen.append(de_id)
        return tuple(seen)


@dataclass
class ExecutionTiming:
    setup_ms: float = 0.0
    compute_ms: float = 0.0
    total_ms: float = 0.0

    def to_dict(self) -> dict:
        return {"setup_ms": self.setup_ms, "compute_ms": self.compute_ms,
                "total_ms": self.total_ms}


@dataclass
class ConditionOutcome:
    kind: str  # "released" | "precondition_failed" | "postcondition_failed"
    message: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "message": self.message}

    @property
    def released(self) -> bool:
        return self.kind == "released"


@dataclass
class ExecutionResult:
    """What a destination agent gets back from a contract-gated call.

    ``output`` is sealed for the caller (nonce + AEAD ciphertext under the
    caller's key) and present exactly when the outcome is `released`.
    """

    contract_id: int
    condition_outcome: ConditionOutcome
    output: Optional[bytes] = None
    output_de_id: Optional[int] = None
    timing: ExecutionTiming = field(default_factory=ExecutionTiming)

    def to_dict(self) -> dict:
        import base64

        return {
            "contract_id": self.contract_id,
            "condition_outcome": self.condition_outcome.to_dict(),
            "output_b64": base64.b64encode(self.output).decode() if self.output else None,
            "output_de_id": self.output_de_id,
            "timing": self.timing.to_dict(),
        }
