"""Benchmarks for intermediate reuse and read short-circuiting.

Both benchmarks drive the real engine (crypto, log, jail included) over
seeded synthetic data and emit a JSON report plus a gnuplot-ready CSV.

Per-call cost is decomposed into three phases:
  constant  everything outside the function body: contract matching, key
            checks, sealing and committing results (total - combine - compute)
  combine   data marshalling inside the body: reads, joins, concatenation
  compute   model fitting and scoring
The three phases sum to the measured wall time of the call by construction;
`combine` and `compute` are measured inside the function body itself.
"""
from __future__ import annotations

import base64
import json
import shutil
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..engine import Escrow, EscrowConfig
from ..errors import ShortCircuited
from ..vault import new_key
from . import datagen
from .admatch import build_ads_program, model_name_wildcard
from .fraud import build_fraud_program


@dataclass
class BenchmarkReport:
    workload: str
    entries: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"workload": self.workload, "meta": self.meta,
                "entries": self.entries, "summary": self.summary}

    def write(self, out_path) -> Path:
        """Write report JSON and a CSV sibling with the per-entry numbers."""
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        csv_path = out.with_suffix(".csv")
        if self.entries:
            cols = sorted({k for e in self.entries for k in e
                           if not isinstance(e[k], dict)})
            lines = ["\t".join(cols)]
            for e in self.entries:
                lines.append("\t".join(str(e.get(c, "")) for c in cols))
            csv_path.write_text("\n".join(lines) + "\n")
        return out


def _phases(total_s: float, payload: dict) -> dict:
    body = payload.get("phases", {})
    combine = float(body.get("combine_s", 0.0))
    compute = float(body.get("compute_s", 0.0))
    return {
        "constant": max(total_s - combine - compute, 0.0),
        "combine": combine,
        "compute": compute,
    }


def _b64(df) -> str:
    return base64.b64encode(datagen.to_csv_bytes(df)).decode()


# --- intermediate reuse ------------------------------------------------------

def bench_intermediates(sizes, runs: int = 5, model: str = "lr",
                        base_dir=None, seed: int = 7) -> BenchmarkReport:
    """Repeat ad-model training with and without the cached join.

    `sizes` are rows per platform; each size runs `runs` training calls
    against one contract, once with intermediate reuse enabled and once
    with it disabled, over identical data.
    """
    report = BenchmarkReport("intermediates")
    report.meta = {"sizes_rows": list(sizes), "runs": runs, "model": model,
                   "seed": seed, "fsync": False}
    root = Path(base_dir) if base_dir else Path(tempfile.mkdtemp(prefix="bench-int-"))
    trainer = {"lr": "lr", "mlp": "mlp"}[model]

    for size in sizes:
        rng = datagen.rng_for(seed)
        df_a, df_b = datagen.ad_profiles(rng, int(size))
        for variant in ("no_reuse", "reuse"):
            data_dir = root / f"{size}-{variant}"
            data_dir.mkdir(parents=True, exist_ok=True)
            prog = build_ads_program(reuse=(variant == "reuse"), trainer=trainer)
            es = Escrow(EscrowConfig(data_dir=data_dir, master_key=new_key(),
                                     fsync=False), program=prog)
            try:
                pa = es.register_agent("platform-a")
                pb = es.register_agent("platform-b")
                buyer = es.register_agent("buyer")
                for a in (pa, pb, buyer):
                    es.submit_key(a, new_key())
                de_a = es.call_function(pa, "upload_social_media_data",
                                        {"data": _b64(df_a)})
                de_b = es.call_function(pb, "upload_social_media_data",
                                        {"data": _b64(df_b)})
                names = [f"model-{i}" for i in range(runs)]
                args = {"model_name": model_name_wildcard(names),
                        "label_name": "clicked", "query": None}
                cid = es.propose_contract(buyer, dest=[buyer],
                                          de_ids=[de_a, de_b],
                                          function="train_advertising_model",
                                          args=args, max_uses=None)
                es.approve_contract(pa, cid)
                es.approve_contract(pb, cid)
                for i, name in enumerate(names):
                    t0 = time.perf_counter()
                    res = es.call_function(buyer, "train_advertising_model", {
                        "model_name": name, "label_name": "clicked",
                        "query": None,
                    })
                    seconds = time.perf_counter() - t0
                    payload = json.loads(es.unseal_for_caller(buyer, res.output))
                    report.entries.append({
                        "workload": "intermediates", "size": int(size),
                        "variant": variant, "call": i, "seconds": seconds,
                        "reused_join": payload["reused_join"],
                        "join_invocations": payload["join_invocations"],
                        "accuracy": payload["accuracy"],
                        "phases": _phases(seconds, payload),
                    })
            finally:
                es.close()
                shutil.rmtree(data_dir, ignore_errors=True)

        per = {v: [e["seconds"] for e in report.entries
                   if e["size"] == int(size) and e["variant"] == v]
               for v in ("no_reuse", "reuse")}
        report.summary[str(size)] = {
            "no_reuse_total_s": sum(per["no_reuse"]),
            "reuse_total_s": sum(per["reuse"]),
            "speedup": (sum(per["no_reuse"]) / sum(per["reuse"])
                        if sum(per["reuse"]) else float("inf")),
            "first_call_ratio": (per["reuse"][0] / per["no_reuse"][0]
                                 if per["no_reuse"] else float("inf")),
        }
    return report


# --- read short-circuiting ---------------------------------------------------

def _transaction_rows_for_mb(mb: float) -> int:
    sample = datagen.to_csv_bytes(
        datagen.fraud_transactions(datagen.rng_for(0), 1000))
    return max(1000, int(mb * 1_000_000 / (len(sample) / 1000)))


def bench_shortcircuit(sizes_mb, runs: int = 2, epochs: int = 40,
                       base_dir=None, seed: int = 7) -> BenchmarkReport:
    """Compare full approved training runs against short-circuited ones.

    `sizes_mb` is the total CSV volume per size point, split across two
    banks' training tables (35% each), a test table (20%), and a third
    party's table (10%) that the contract does not cover. The baseline call
    trains over the covered tables; the short-circuit call lists the
    uncovered table as a training input after the legal ones, so the run
    aborts at that read with nothing decrypted from it.
    """
    report = BenchmarkReport("shortcircuit")
    report.meta = {"sizes_mb": list(sizes_mb), "runs": runs, "epochs": epochs,
                   "seed": seed, "fsync": False,
                   "split": {"bank1": 0.35, "bank2": 0.35,
                             "test": 0.20, "uncovered": 0.10}}
    root = Path(base_dir) if base_dir else Path(tempfile.mkdtemp(prefix="bench-sc-"))

    for mb in sizes_mb:
        rows = _transaction_rows_for_mb(float(mb))
        rng = datagen.rng_for(seed)
        data_dir = root / f"{mb}mb"
        data_dir.mkdir(parents=True, exist_ok=True)
        prog = build_fraud_program(trainer="sgd", epochs=epochs)
        es = Escrow(EscrowConfig(data_dir=data_dir, master_key=new_key(),
                                 fsync=False), program=prog)
        try:
            b1 = es.register_agent("bank-one")
            b2 = es.register_agent("bank-two")
            other = es.register_agent("outsider")
            for a in (b1, b2, other):
                es.submit_key(a, new_key())

            tables = {
                "bank1": (b1, datagen.fraud_transactions(rng, int(rows * 0.35))),
                "bank2": (b2, datagen.fraud_transactions(rng, int(rows * 0.35))),
                "test": (b1, datagen.fraud_transactions(rng, int(rows * 0.20))),
                "uncovered": (other, datagen.fraud_transactions(rng, int(rows * 0.10))),
            }
            ids = {}
            actual_bytes = 0
            for label, (agent, df) in tables.items():
                payload = datagen.to_csv_bytes(df)
                actual_bytes += len(payload)
                ids[label] = es.call_function(
                    agent, "upload_credit_transaction_data",
                    {"data": base64.b64encode(payload).decode()})

            def contract_for(train_ids):
                args = {"train_de_ids": train_ids, "size_constraint": 10,
                        "test_de_ids": [ids["test"]], "target_accuracy": 0.5,
                        "label_name": "is_fraud"}
                cid = es.propose_contract(
                    b1, dest=[b1], de_ids=[ids["bank1"], ids["bank2"], ids["test"]],
                    function="train_fraud_model", args=args, max_uses=None)
                es.approve_contract(b1, cid)
                es.approve_contract(b2, cid)
                return args

            legal_args = contract_for([ids["bank1"], ids["bank2"]])
            blocked_args = contract_for(
                [ids["bank1"], ids["bank2"], ids["uncovered"]])

            for run in range(runs):
                t0 = time.perf_counter()
                res = es.call_function(b1, "train_fraud_model", legal_args)
                base_s = time.perf_counter() - t0
                payload = json.loads(es.unseal_for_caller(b1, res.output))
                phases = _phases(base_s, payload)
                report.entries.append({
                    "workload": "shortcircuit", "size_mb": float(mb),
                    "bytes": actual_bytes, "variant": "baseline", "run": run,
                    "seconds": base_s, "accuracy": payload["accuracy"],
                    "train_fraction": phases["compute"] / base_s,
                    "phases": phases,
                })

                t0 = time.perf_counter()
                try:
                    es.call_function(b1, "train_fraud_model", blocked_args)
                    raise AssertionError("expected the blocked call to abort")
                except ShortCircuited:
                    pass
                sc_s = time.perf_counter() - t0
                report.entries.append({
                    "workload": "shortcircuit", "size_mb": float(mb),
                    "bytes": actual_bytes, "variant": "short_circuit",
                    "run": run, "seconds": sc_s,
                })
        finally:
            es.close()
            shutil.rmtree(data_dir, ignore_errors=True)

        base = [e["seconds"] for e in report.entries
                if e["size_mb"] == float(mb) and e["variant"] == "baseline"]
        blocked = [e["seconds"] for e in report.entries
                   if e["size_mb"] == float(mb) and e["variant"] == "short_circuit"]
        fractions = [e["train_fraction"] for e in report.entries
                     if e["size_mb"] == float(mb) and e["variant"] == "baseline"]
        report.summary[str(mb)] = {
            "baseline_median_s": statistics.median(base),
            "short_circuit_median_s": statistics.median(blocked),
            "ratio": statistics.median(blocked) / statistics.median(base),
            "train_fraction_median": statistics.median(fractions),
            "bytes": actual_bytes,
        }
    return report
