"""Causal research over a national patient registry.

A registry holder exposes its table for adjusted causal queries without ever
releasing rows. Researchers upload their own person-level data (keyed by the
national CPR identifier), join it with the registry inside the escrow, and
get back only the effect estimate. A standing approval rule lets the
registry pre-approve every well-formed query contract, so its operators see
zero pending approvals.
"""
from __future__ import annotations

import base64

import numpy as np
import pandas as pd

from ..errors import EmptyJoin
from ..runtime import SharingProgram, api_endpoint, contract_function
from . import datagen

CPR_ERROR_MSG = "Error: CPR column does not exist."


def linear_adjustment_estimate(df: pd.DataFrame, treatment: str, outcome: str,
                               confounders: list) -> float:
    """Coefficient of `treatment` in OLS of outcome on [1, treatment, confounders]."""
    cols = [treatment] + list(confounders)
    x = np.column_stack([np.ones(len(df))] + [df[c].to_numpy(dtype=float) for c in cols])
    y = df[outcome].to_numpy(dtype=float)
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    return float(beta[1])


def parse_dag(dag_spec: str) -> list:
    """Parse "a->b;c->d" into a list of (parent, child) edges."""
    edges = []
    for part in (dag_spec or "").split(";"):
        part = part.strip()
        if not part:
            continue
        if "->" not in part:
            raise ValueError(f"malformed DAG edge {part!r}")
        parent, child = (s.strip() for s in part.split("->", 1))
        edges.append((parent, child))
    return edges


def implied_confounders(edges: list, treatment: str, outcome: str) -> list:
    """Nodes with a direct edge into both the treatment and the outcome."""
    into_t = {p for p, c in edges if c == treatment}
    into_y = {p for p, c in edges if c == outcome}
    return sorted((into_t & into_y) - {treatment, outcome})


def _as_bytes(data) -> bytes:
    if isinstance(data, bytes):
        return data
    return base64.b64decode(data)


def build_health_program(estimator=linear_adjustment_estimate) -> SharingProgram:
    """`estimator` is a deployment knob: any callable
    (df, treatment, outcome, confounders) -> float can replace the default
    linear-adjustment estimator."""
    prog = SharingProgram("health")

    @api_endpoint
    def upload_data_with_CPR(api, data, discoverable=False):
        """Upload a person-level CSV; rejected unless it has a CPR column."""
        df = datagen.from_csv_bytes(_as_bytes(data))
        if "CPR" not in df.columns:
            return CPR_ERROR_MSG
        de_id = api.register_data_element("csv", {"kind": "person_level"},
                                          discoverable=bool(discoverable))
        api.upload_data_element(de_id, datagen.to_csv_bytes(df))
        return de_id

    @api_endpoint
    @contract_function
    def run_causal_query(api, user_de_id, additional_vars, dag_spec,
                         treatment, outcome):
        """Join the caller's table with the registry on CPR and return the
        confounder-adjusted effect of `treatment` on `outcome`.

        `additional_vars` is the adjustment set; `dag_spec` ("a->b;c->d")
        documents the assumed graph and is checked for consistency with it.
        """
        edges = parse_dag(dag_spec)
        user_df = datagen.from_csv_bytes(api.read(int(user_de_id)))
        registry_ids = [d for d in api.get_all_accessible_des()
                        if d != int(user_de_id)]
        registry_df = pd.concat(
            [datagen.from_csv_bytes(api.read(d)) for d in registry_ids],
            ignore_index=True)
        for df, side in ((user_df, "user data"), (registry_df, "registry")):
            if "CPR" not in df.columns:
                raise ValueError(f"{side} has no CPR column")
        joined = user_df.merge(registry_df, on="CPR", how="inner")
        if joined.empty:
            raise EmptyJoin("join on CPR produced no rows")
        missing = [c for c in [treatment, outcome, *additional_vars]
                   if c not in joined.columns]
        if missing:
            raise ValueError(f"columns absent from joined table: {missing}")

        estimate = estimator(joined, treatment, outcome, list(additional_vars))
        return {
            "estimate": estimate,
            "rows_joined": int(len(joined)),
            "treatment": treatment,
            "outcome": outcome,
            "adjusted_for": sorted(additional_vars),
            "dag_implied_confounders": implied_confounders(
                edges, treatment, outcome),
        }

    @api_endpoint
    def upload_cmr(api, functions, de_ids, dest_agents=None,
                   decision="approve", description=""):
        """Register a standing approval/denial rule for the caller's slots."""
        return api.register_cmr(functions=list(functions),
                                de_ids=[int(d) for d in de_ids],
                                dest_agents=dest_agents,
                                decision=decision,
                                description=description)

    for fn in (upload_data_with_CPR, run_causal_query, upload_cmr):
        prog.add(fn)
    return prog


DAG_SPEC = ("activity->statin_dose;diet->statin_dose;"
            "activity->chol_change;diet->chol_change;"
            "statin_dose->chol_change")


def run_script(data_dir, seed: int = 23, rows: int = 3000,
               master_key: bytes | None = None) -> dict:
    """Registry + two researchers; returns outcomes including the estimate."""
    import json

    from ..engine import Escrow, EscrowConfig
    from ..vault import new_key

    rng = datagen.rng_for(seed)
    es = Escrow(EscrowConfig(data_dir=data_dir,
                             master_key=master_key or new_key(),
                             fsync=False),
                program=build_health_program())
    out: dict = {}
    try:
        dnpr = es.register_agent("registry", external_id="registry")
        r1 = es.register_agent("researcher-one", external_id="researcher-one")
        r2 = es.register_agent("researcher-two", external_id="researcher-two")
        for agent in (dnpr, r1, r2):
            es.submit_key(agent, new_key())

        wearable, registry = datagen.health_tables(rng, rows)

        def upload(agent, df, discoverable=False):
            return es.call_function(agent, "upload_data_with_CPR", {
                "data": base64.b64encode(datagen.to_csv_bytes(df)).decode(),
                "discoverable": discoverable,
            })

        registry_de = upload(dnpr, registry, discoverable=True)

        # a table without the national identifier is turned away verbatim
        out["missing_cpr"] = upload(r1, wearable.drop(columns=["CPR"]))
        user_de = upload(r1, wearable)

        # the registry's standing rule: approve causal queries over its table
        out["cmr_id"] = es.call_function(dnpr, "upload_cmr", {
            "functions": ["run_causal_query"],
            "de_ids": [registry_de],
            "description": "standing approval for causal queries over the registry",
        })

        def query(researcher, own_de, adjust):
            args = {
                "user_de_id": own_de,
                "additional_vars": adjust,
                "dag_spec": DAG_SPEC,
                "treatment": "statin_dose",
                "outcome": "chol_change",
            }
            cid = es.propose_contract(
                researcher, dest=[researcher], de_ids=[own_de, registry_de],
                function="run_causal_query", args=args)
            # the registry's slot is already filled by its standing rule
            es.approve_contract(researcher, cid)
            result = es.call_function(researcher, "run_causal_query", args)
            return cid, json.loads(es.unseal_for_caller(researcher, result.output))

        _, adjusted = query(r1, user_de, ["activity", "diet"])
        out["adjusted"] = adjusted

        user_de_2 = upload(r2, wearable.sample(frac=0.8, random_state=1))
        _, unadjusted = query(r2, user_de_2, [])
        out["unadjusted"] = unadjusted

        out["dnpr_pending"] = es.get_pending_contracts(dnpr)
        out["true_effect"] = datagen.HEALTH_TRUE_EFFECT
        return out
    finally:
        es.close()
