"""End-to-end scenario scripts: exact rejection strings, causal estimates
cross-checked against an independent closed-form solver, join-cache reuse
within and across process restarts, the four sharing-shape walkthroughs,
and benchmark report schema/round-tripping."""
from __future__ import annotations

import base64
import json

import numpy as np
import pandas as pd
import pytest

from descrow.engine import Escrow, EscrowConfig
from descrow.errors import EmptyJoin, FunctionFailed
from descrow.scenarios import admatch, bench, datagen, fraud, healthcare, patterns
from descrow.vault import new_key

# --- independent causal oracle (normal equations via pseudo-inverse) --------
# The scenario code solves least squares with np.linalg.lstsq; this solver
# goes through the normal equations instead so agreement is a genuine
# cross-check rather than the same routine called twice.


def oracle_effect(df: pd.DataFrame, treatment: str, outcome: str,
                  confounders: list) -> float:
    x = np.column_stack(
        [np.ones(len(df)), df[treatment].to_numpy(dtype=float)]
        + [df[c].to_numpy(dtype=float) for c in confounders])
    y = df[outcome].to_numpy(dtype=float)
    beta = np.linalg.pinv(x.T @ x) @ (x.T @ y)
    return float(beta[1])


def csv_roundtrip(df: pd.DataFrame) -> pd.DataFrame:
    return datagen.from_csv_bytes(datagen.to_csv_bytes(df))


def b64_csv(df: pd.DataFrame) -> str:
    return base64.b64encode(datagen.to_csv_bytes(df)).decode()


# --- fraud -------------------------------------------------------------------


def test_fraud_script_verbatim_outcomes(tmp_path):
    out = fraud.run_script(tmp_path / "fraud", seed=11, rows=1200)

    assert out["denied_status"] == "denied"
    assert len(out["discoverable"]) == 4  # both banks' train + test tables

    # schema preview released under its own contract
    assert isinstance(out["schema"], dict)
    assert "is_fraud" in out["schema"]

    released = out["released"]
    assert released["outcome"] == "released"
    assert isinstance(released["output_de_id"], int)
    assert released["accuracy"] >= 0.7

    pre = out["precondition_failed"]
    assert pre["outcome"] == "precondition_failed"
    assert pre["message"] == "Input size constraint failed."
    assert pre["output_de_id"] is None

    post = out["postcondition_failed"]
    assert post["outcome"] == "postcondition_failed"
    assert post["message"] == "Accuracy constraint failed"
    assert post["output_de_id"] is None


# --- healthcare --------------------------------------------------------------


def test_health_script_matches_independent_solver(tmp_path):
    seed, rows = 23, 1500
    out = healthcare.run_script(tmp_path / "health", seed=seed, rows=rows)

    assert out["missing_cpr"] == "Error: CPR column does not exist."
    assert out["dnpr_pending"] == []  # standing rule fills the registry slot
    assert isinstance(out["cmr_id"], int)

    # rebuild the exact tables the script generated and join them the same way
    rng = datagen.rng_for(seed)
    wearable, registry = datagen.health_tables(rng, rows)
    reg = csv_roundtrip(registry)
    joined = csv_roundtrip(wearable).merge(reg, on="CPR", how="inner")

    adj = out["adjusted"]
    want = oracle_effect(joined, "statin_dose", "chol_change",
                         ["activity", "diet"])
    assert adj["estimate"] == pytest.approx(want, abs=1e-6)
    assert adj["rows_joined"] == len(joined)
    assert adj["adjusted_for"] == ["activity", "diet"]
    assert adj["dag_implied_confounders"] == ["activity", "diet"]

    sample = csv_roundtrip(wearable.sample(frac=0.8, random_state=1))
    joined2 = sample.merge(reg, on="CPR", how="inner")
    unadj = out["unadjusted"]
    want2 = oracle_effect(joined2, "statin_dose", "chol_change", [])
    assert unadj["estimate"] == pytest.approx(want2, abs=1e-6)
    assert unadj["adjusted_for"] == []

    # confounding is planted, so adjustment must pull the estimate toward truth
    true_effect = out["true_effect"]
    assert abs(adj["estimate"] - true_effect) < abs(unadj["estimate"] - true_effect)
    assert abs(adj["estimate"] - true_effect) < 0.1


def _health_setup(tmp_path):
    es = Escrow(EscrowConfig(data_dir=tmp_path, master_key=new_key(),
                             fsync=False),
                program=healthcare.build_health_program())
    dnpr = es.register_agent("registry")
    res = es.register_agent("researcher")
    for a in (dnpr, res):
        es.submit_key(a, new_key())
    registry_df = pd.DataFrame({
        "CPR": range(1, 51),
        "statin_dose": np.linspace(0, 5, 50),
        "chol_change": np.linspace(-2, 2, 50),
    })
    reg_de = es.call_function(dnpr, "upload_data_with_CPR",
                              {"data": b64_csv(registry_df)})
    return es, dnpr, res, reg_de


def _causal_args(user_de, additional):
    return {
        "user_de_id": user_de, "additional_vars": additional,
        "dag_spec": healthcare.DAG_SPEC,
        "treatment": "statin_dose", "outcome": "chol_change",
    }


def test_health_disjoint_identifiers_abort_with_empty_join(tmp_path):
    es, dnpr, res, reg_de = _health_setup(tmp_path)
    try:
        stranger = pd.DataFrame({"CPR": range(100, 150),
                                 "activity": np.ones(50),
                                 "diet": np.zeros(50)})
        user_de = es.call_function(res, "upload_data_with_CPR",
                                   {"data": b64_csv(stranger)})
        args = _causal_args(user_de, [])
        cid = es.propose_contract(res, dest=[res], de_ids=[user_de, reg_de],
                                  function="run_causal_query", args=args)
        es.approve_contract(dnpr, cid)
        es.approve_contract(res, cid)
        with pytest.raises(EmptyJoin, match="join on CPR produced no rows"):
            es.call_function(res, "run_causal_query", args)
    finally:
        es.close()


def test_health_missing_column_fails_without_detail_leak(tmp_path):
    es, dnpr, res, reg_de = _health_setup(tmp_path)
    try:
        overlap = pd.DataFrame({"CPR": range(1, 51),
                                "activity": np.ones(50),
                                "diet": np.zeros(50)})
        user_de = es.call_function(res, "upload_data_with_CPR",
                                   {"data": b64_csv(overlap)})
        args = _causal_args(user_de, ["bmi"])  # column that exists nowhere
        cid = es.propose_contract(res, dest=[res], de_ids=[user_de, reg_de],
                                  function="run_causal_query", args=args)
        es.approve_contract(dnpr, cid)
        es.approve_contract(res, cid)
        with pytest.raises(FunctionFailed) as err:
            es.call_function(res, "run_causal_query", args)
        assert "bmi" not in str(err.value)
    finally:
        es.close()


# --- ad matching -------------------------------------------------------------


def test_ads_script_caches_join_between_calls(tmp_path):
    out = admatch.run_script(tmp_path / "reuse", seed=37, rows=700, reuse=True)
    assert out["join_invocations"] == 1
    assert out["runs"]["reach"]["reused_join"] is False
    assert out["runs"]["conversion"]["reused_join"] is True
    assert out["runs"]["reach"]["rows"] == out["runs"]["conversion"]["rows"]

    base = admatch.run_script(tmp_path / "none", seed=37, rows=700, reuse=False)
    assert base["join_invocations"] == 2
    assert all(not r["reused_join"] for r in base["runs"].values())

    # the cached table must train the same model as a fresh join
    assert (out["runs"]["conversion"]["accuracy"]
            == base["runs"]["conversion"]["accuracy"])


def test_ads_cached_join_survives_restart(tmp_path):
    master = new_key()
    rng = datagen.rng_for(5)
    df_a, df_b = datagen.ad_profiles(rng, 400)
    args = {"model_name": admatch.model_name_wildcard(["m1", "m2"]),
            "label_name": "clicked", "query": None}
    keys = {}

    es = Escrow(EscrowConfig(data_dir=tmp_path, master_key=master, fsync=False),
                program=admatch.build_ads_program(reuse=True))
    try:
        ids = {}
        for name in ("platform-a", "platform-b", "buyer"):
            ids[name] = es.register_agent(name, external_id=name)
            keys[name] = new_key()
            es.submit_key(ids[name], keys[name])
        de_a = es.call_function(ids["platform-a"], "upload_social_media_data",
                                {"data": b64_csv(df_a)})
        de_b = es.call_function(ids["platform-b"], "upload_social_media_data",
                                {"data": b64_csv(df_b)})
        cid = es.propose_contract(ids["buyer"], dest=[ids["buyer"]],
                                  de_ids=[de_a, de_b],
                                  function="train_advertising_model",
                                  args=args, max_uses=None)
        es.approve_contract(ids["platform-a"], cid)
        es.approve_contract(ids["platform-b"], cid)
        first = es.call_function(ids["buyer"], "train_advertising_model",
                                 {"model_name": "m1", "label_name": "clicked",
                                  "query": None})
        payload = json.loads(es.unseal_for_caller(ids["buyer"], first.output))
        assert payload["reused_join"] is False
    finally:
        es.close()

    prog2 = admatch.build_ads_program(reuse=True)
    es2 = Escrow(EscrowConfig(data_dir=tmp_path, master_key=master, fsync=False),
                 program=prog2)
    try:
        for name, key in keys.items():
            es2.submit_key(es2.resolve_agent(name), key)
        buyer = es2.resolve_agent("buyer")
        second = es2.call_function(buyer, "train_advertising_model",
                                   {"model_name": "m2", "label_name": "clicked",
                                    "query": None})
        payload = json.loads(es2.unseal_for_caller(buyer, second.output))
        assert payload["reused_join"] is True
        assert prog2.join_calls["count"] == 0  # never re-joined after restart
    finally:
        es2.close()


# --- the four sharing shapes -------------------------------------------------


def test_pattern_walkthroughs_reach_goals_and_reject(tmp_path):
    results = patterns.run_all(tmp_path)
    by_name = {r["pattern"]: r for r in results}
    assert set(by_name) == {"many-to-many", "one-to-many", "one-to-one",
                            "many-to-one"}
    assert all(r["goal_reached"] for r in results)
    assert all(r.get("no_raw_leak", True) for r in results)

    # denial-based rejections: a refused contract never becomes callable
    for name in ("many-to-many", "many-to-one"):
        assert by_name[name]["denied_status"] == "denied"
        assert by_name[name]["rejection"] == "NoMatchingContract"

    # condition-based rejections carry their exact messages
    o2m = by_name["one-to-many"]
    assert o2m["rejection"] == "precondition_failed"
    assert o2m["rejection_message"] == "Training certification required."
    assert o2m["blocked_released"] is False

    o2o = by_name["one-to-one"]
    assert o2o["rejection"] == "postcondition_failed"
    assert o2o["rejection_message"] == "Performance improvement below three percent."
    assert o2o["blocked_released"] is False
    assert o2o["accuracy"] > o2o["baseline"]


# --- benchmark harness -------------------------------------------------------


def _check_phases(entry):
    phases = entry["phases"]
    assert set(phases) == {"constant", "combine", "compute"}
    assert all(v >= 0 for v in phases.values())
    total = sum(phases.values())
    if phases["constant"] > 0:
        assert total == pytest.approx(entry["seconds"], rel=1e-9)
    else:  # clamp kicked in: measured sub-phases overran the stopwatch
        assert total >= entry["seconds"] - 1e-9


def test_bench_intermediates_report_schema(tmp_path):
    rep = bench.bench_intermediates([1200], runs=2, model="lr",
                                    base_dir=tmp_path, seed=7)
    assert rep.workload == "intermediates"
    assert len(rep.entries) == 4  # 2 variants x 2 calls
    for e in rep.entries:
        assert e["variant"] in ("no_reuse", "reuse")
        assert e["seconds"] > 0
        _check_phases(e)
    reuse_later = [e for e in rep.entries
                   if e["variant"] == "reuse" and e["call"] > 0]
    assert all(e["reused_join"] for e in reuse_later)
    no_reuse = [e for e in rep.entries if e["variant"] == "no_reuse"]
    assert all(not e["reused_join"] for e in no_reuse)

    s = rep.summary["1200"]
    assert set(s) == {"no_reuse_total_s", "reuse_total_s", "speedup",
                      "first_call_ratio"}
    assert s["speedup"] > 0 and s["first_call_ratio"] > 0

    out = rep.write(tmp_path / "reports" / "intermediates.json")
    data = json.loads(out.read_text())
    assert data["workload"] == "intermediates"
    assert data["summary"] == rep.summary
    csv_lines = out.with_suffix(".csv").read_text().splitlines()
    assert len(csv_lines) == 1 + len(rep.entries)
    assert "seconds" in csv_lines[0].split("\t")


def test_bench_shortcircuit_report_schema(tmp_path):
    rep = bench.bench_shortcircuit([0.5], runs=1, epochs=3,
                                   base_dir=tmp_path, seed=7)
    assert rep.workload == "shortcircuit"
    variants = {e["variant"] for e in rep.entries}
    assert variants == {"baseline", "short_circuit"}

    s = rep.summary["0.5"]
    assert set(s) == {"baseline_median_s", "short_circuit_median_s", "ratio",
                      "train_fraction_median", "bytes"}
    assert s["bytes"] > 0
    assert 0 < s["train_fraction_median"] <= 1
    assert s["ratio"] > 0

    out = rep.write(tmp_path / "reports" / "shortcircuit.json")
    assert out.exists() and out.with_suffix(".csv").exists()
