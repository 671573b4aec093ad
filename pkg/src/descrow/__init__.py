"""descrow: a programmable data escrow.

Mutually distrusting agents place data in escrow and share it only through
explicit, approvable contracts. Every release is a dataflow executed by a
mediating runtime; state is encrypted at rest behind a write-ahead log with
crash recovery.
"""

from .engine import Escrow, EscrowConfig, EndpointHost, ContractHost
from .runtime import (SharingProgram, api_endpoint, contract_function,
                      ConditionFailure, ExecutionResult)
from .contracts import Contract, ContractStatus, ConditionDescriptor
from .sharing import (SharingState, DataflowRecord, CandidateDataflow, GoalSpec,
                      ConstraintSpec, apply_dataflow, find_dataflow_sequence,
                      is_common_goal, violates_common_constraint, make_state)
from . import errors

__version__ = "0.1.0"

__all__ = [
    "Escrow", "EscrowConfig", "EndpointHost", "ContractHost",
    "SharingProgram", "api_endpoint", "contract_function",
    "ConditionFailure", "ExecutionResult",
    "Contract", "ContractStatus", "ConditionDescriptor",
    "SharingState", "DataflowRecord", "CandidateDataflow", "GoalSpec",
    "ConstraintSpec", "apply_dataflow", "find_dataflow_sequence",
    "is_common_goal", "violates_common_constraint", "make_state",
    "errors",
]
