"""Exception hierarchy shared by every escrow module.

Each error carries a stable machine-readable ``code`` (the class name) so the
REST layer and clients can dispatch without parsing messages.
"""
from __future__ import annotations


class EscrowError(Exception):
    """Base class for all escrow failures."""

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__

    @property
    def code(self) -> str:
        return self.__class__.__name__


# --- registry / addressing ---------------------------------------------------

class UnknownAgent(EscrowError):
    """Agent id or external id does not resolve to a registered agent."""


class UnknownDataElement(EscrowError):
    """Data element id was never registered."""


class UnknownContract(EscrowError):
    """Contract id was never proposed."""


class UnknownFunction(EscrowError):
    """Function name is not agent-callable in the loaded program."""


class StaleId(EscrowError):
    """Id references an entity that no longer participates (e.g. deregistered)."""


class DuplicateExternalId(EscrowError):
    """External id already bound to another agent."""


class DuplicateName(EscrowError):
    """Function name already registered in the program."""


class HelperExposed(EscrowError):
    """A helper function was registered with an agent-facing kind."""


class UnsupportedType(EscrowError):
    """No store backend handles the requested data element type."""


class OwnerMismatch(EscrowError):
    """Operation names an owner that does not own the element."""


class NotOwner(EscrowError):
    """Caller does not own the element it tries to manipulate."""


# --- contracts ---------------------------------------------------------------

class NotASourceAgent(EscrowError):
    """Caller holds no approval slot on the contract."""


class NotDestinationAgent(EscrowError):
    """Caller is not in the contract's destination set."""


class AlreadyDecided(EscrowError):
    """Approval slot or contract is already in a terminal decision state."""


class NoMatchingContract(EscrowError):
    """No approved, unexhausted contract matches (function, canonical args)."""


# --- vault / durability ------------------------------------------------------

class MissingKey(EscrowError):
    """No key submitted for the agent whose data is being touched."""


class DuplicateKey(EscrowError):
    """Key or keyed slot already present (agent key, intermediate key)."""


class KeyMismatch(EscrowError):
    """Submitted key fails to authenticate previously stored records."""


class AuthFailure(EscrowError):
    """AEAD authentication failed (tampered or corrupted ciphertext)."""


class IoFailure(EscrowError):
    """Durable storage failed underneath the vault."""


class CorruptLog(EscrowError):
    """Write-ahead log has a sequence gap or an unverifiable system record."""

    def __init__(self, message: str = "", first_bad_seq: int | None = None):
        super().__init__(message)
        self.first_bad_seq = first_bad_seq


# --- execution ---------------------------------------------------------------

class IllegalAccess(EscrowError):
    """Mediated read outside the permitted set. Aborts the execution."""

    def __init__(self, message: str = "", de_id: int | None = None):
        super().__init__(message)
        self.de_id = de_id


class ShortCircuited(EscrowError):
    """Execution was aborted; the caller sees no detail beyond this."""


class FunctionFailed(EscrowError):
    """Function body raised; details go to the audit trail, not the caller."""


class EmptyJoin(EscrowError):
    """A join inside a scenario function produced zero rows."""


class BoundExceeded(EscrowError):
    """Search hit its depth bound while unexplored states remained."""


class SuspiciousEmptyProvenance(UserWarning):
    """Intermediate written before any read: provenance is empty."""
