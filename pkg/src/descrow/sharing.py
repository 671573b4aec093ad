"""Pure model of who may see what.

A sharing state is the triple (agents, data elements, access map). A dataflow
takes source elements, runs a function, and grants every destination agent
access to one fresh element holding the output. Nothing here touches storage
or crypto; the engine drives this model and the tests use it as an oracle.

Access is monotone: applying a dataflow never removes anything, it only adds
the fresh element to the destination agents' access sets.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .errors import BoundExceeded, StaleId, UnknownAgent, UnknownDataElement

AgentId = int
DataElementId = int
FunctionId = str


@dataclass(frozen=True)
class SharingState:
    """Immutable snapshot of agents, elements, and per-agent access sets."""

    agents: frozenset
    data_elements: frozenset
    access: Mapping[AgentId, frozenset]

    def access_of(self, agent: AgentId) -> frozenset:
        return self.access.get(agent, frozenset())

    def key(self):
        """Hashable identity for visited-set bookkeeping during search."""
        return (
            self.agents,
            self.data_elements,
            tuple(sorted((a, tuple(sorted(s))) for a, s in self.access.items())),
        )

    def validate(self) -> None:
        for agent, granted in self.access.items():
            if agent not in self.agents:
                raise UnknownAgent(f"access map names unregistered agent {agent}")
            missing = granted - self.data_elements
            if missing:
                raise UnknownDataElement(
                    f"agent {agent} granted unregistered elements {sorted(missing)}"
                )


def make_state(agents: Iterable[AgentId],
               access: Mapping[AgentId, Iterable[DataElementId]]) -> SharingState:
    agents_f = frozenset(agents)
    access_f = {a: frozenset(access.get(a, ())) for a in agents_f}
    elements = frozenset().union(*access_f.values()) if access_f else frozenset()
    state = SharingState(agents=agents_f, data_elements=elements, access=access_f)
    state.validate()
    return state


@dataclass(frozen=True)
class DataflowRecord:
    """One applied dataflow: f(src_elements) released to dest_agents as `produced`."""

    dest_agents: frozenset
    src_elements: frozenset
    function_id: FunctionId
    produced: DataElementId
    timestamp: int


@dataclass(frozen=True)
class CandidateDataflow:
    """A dataflow an agent would agree to, before any fresh id is minted."""

    dest_agents: frozenset
    src_elements: frozenset
    function_id: FunctionId


@dataclass(frozen=True)
class GoalSpec:
    """One agent's goal: a predicate over the whole sharing state."""

    agent: AgentId
    predicate: Callable[[SharingState], bool]
    description: str = ""


@dataclass(frozen=True)
class ConstraintSpec:
    """One agent's forbidden region: states where the predicate holds."""

    agent: AgentId
    predicate: Callable[[SharingState], bool]
    description: str = ""


def apply_dataflow(state: SharingState,
                   dest_agents: Iterable[AgentId],
                   src_elements: Iterable[DataElementId],
                   function_id: FunctionId,
                   fresh_id: DataElementId) -> SharingState:
    """Return the successor state after releasing f(src) to dest as fresh_id.

    The produced element is always fresh, even for the identity function: the
    destination agents gain access to the output copy, never to the sources.
    """
    dest = frozenset(dest_agents)
    src = frozenset(src_elements)
    if not dest:
        raise UnknownAgent("dataflow needs at least one destination agent")
    unknown_agents = dest - state.agents
    if unknown_agents:
        raise UnknownAgent(f"unregistered destination agents {sorted(unknown_agents)}")
    unknown_elements = src - state.data_elements
    if unknown_elements:
        raise UnknownDataElement(f"unregistered source elements {sorted(unknown_elements)}")
    if fresh_id in state.data_elements:
        raise StaleId(f"fresh id {fresh_id} already present")

    access = {
        a: (granted | {fresh_id}) if a in dest else granted
        for a, granted in state.access.items()
    }
    for a in dest:
        access.setdefault(a, frozenset({fresh_id}))
    return SharingState(
        agents=state.agents,
        data_elements=state.data_elements | {fresh_id},
        access=access,
    )


def is_common_goal(state: SharingState, goals: Sequence[GoalSpec]) -> bool:
    """True iff every agent's goal predicate holds. Expects one goal per agent."""
    _require_one_per_agent(state, [g.agent for g in goals], "goal")
    return all(g.predicate(state) for g in goals)


def violates_common_constraint(state: SharingState,
                               constraints: Sequence[ConstraintSpec]) -> bool:
    """True iff any agent's forbidden predicate holds. One constraint per agent."""
    _require_one_per_agent(state, [c.agent for c in constraints], "constraint")
    return any(c.predicate(state) for c in constraints)


def _require_one_per_agent(state: SharingState, owners: Sequence[AgentId], what: str) -> None:
    if sorted(owners) != sorted(state.agents):
        raise ValueError(
            f"expected exactly one {what} per registered agent "
            f"(agents {sorted(state.agents)}, got specs for {sorted(owners)})"
        )


def fresh_element_id(state: SharingState) -> DataElementId:
    return max(state.data_elements, default=0) + 1


def find_dataflow_sequence(initial: SharingState,
                           candidates: Sequence[CandidateDataflow],
                           goals: Sequence[GoalSpec],
                           constraints: Sequence[ConstraintSpec],
                           depth_bound: int) -> Optional[list]:
    """Shortest candidate sequence from `initial` to a common goal state.

    Breadth-first, so the returned sequence is minimal in length. Every state
    entered by a dataflow must avoid all constraint predicates; the initial
    state is exempt and a goal already satisfied there yields [].

    Returns None when the reachable space was exhausted without success;
    raises BoundExceeded when the depth bound truncated an unfinished search
    (so absence was not proven).
    """
    if depth_bound < 0:
        raise ValueError("depth_bound must be >= 0")
    if is_common_goal(initial, goals):
        return []

    frontier = deque([(initial, ())])
    visited = {initial.key()}
    truncated = False
    depth = 0
    while frontier and depth < depth_bound:
        depth += 1
        for _ in range(len(frontier)):
            state, seq = frontier.popleft()
            for cand in candidates:
                if not cand.src_elements <= state.data_elements:
                    continue
                if not cand.dest_agents <= state.agents:
                    continue
                fresh = fresh_element_id(state)
                nxt = apply_dataflow(
                    state, cand.dest_agents, cand.src_elements, cand.function_id, fresh
                )
                if violates_common_constraint(nxt, constraints):
                    continue
                record = DataflowRecord(
                    dest_agents=cand.dest_agents,
                    src_elements=cand.src_elements,
                    function_id=cand.function_id,
                    produced=fresh,
                    timestamp=len(seq),
                )
                nxt_seq = seq + (record,)
                if is_common_goal(nxt, goals):
                    return list(nxt_seq)
                k = nxt.key()
                if k in visited:
                    continue
                visited.add(k)
                frontier.append((nxt, nxt_seq))
    # The bound truncated the search only if some unexpanded state still had a
    # legal, constraint-respecting successor; otherwise absence is proven.
    # Monotonicity (every dataflow adds a fresh element) means any such
    # successor is a state never seen at a shallower depth.
    for state, _ in frontier:
        for cand in candidates:
            if not cand.src_elements <= state.data_elements:
                continue
            if not cand.dest_agents <= state.agents:
                continue
            nxt = apply_dataflow(
                state, cand.dest_agents, cand.src_elements,
                cand.function_id, fresh_element_id(state)
            )
            if not violates_common_constraint(nxt, constraints):
                truncated = True
                break
        if truncated:
            break
    if truncated:
        raise BoundExceeded(f"no sequence within depth bound {depth_bound}")
    return None
