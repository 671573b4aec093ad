"""Joint fraud-model training between mutually distrusting banks.

Two banks each hold card-transaction tables. Neither will hand raw rows to
the other, but both want a model trained on the union. The program lets them
inspect schemas and tiny samples under contract, then train a classifier
whose release is gated by a per-input size precondition and an accuracy
postcondition.
"""
from __future__ import annotations

import base64
import json
import pickle
import time

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression, SGDClassifier
from sklearn.neural_network import MLPClassifier

from ..runtime import SharingProgram, api_endpoint, contract_function
from . import datagen

PRECONDITION_MSG = "Input size constraint failed."
POSTCONDITION_MSG = "Accuracy constraint failed"


def _as_bytes(data) -> bytes:
    if isinstance(data, bytes):
        return data
    return base64.b64decode(data)


def _fit(df_train: pd.DataFrame, label_name: str, trainer: str, epochs: int):
    features = [c for c in df_train.columns if c != label_name]
    x = df_train[features].to_numpy(dtype=float)
    y = df_train[label_name].to_numpy(dtype=int)
    mean, std = x.mean(axis=0), x.std(axis=0) + 1e-9
    x = (x - mean) / std
    if trainer == "sgd":
        clf = SGDClassifier(loss="log_loss", max_iter=epochs, tol=None,
                            random_state=0)
    elif trainer == "mlp":
        clf = MLPClassifier(hidden_layer_sizes=(16,), max_iter=epochs,
                            random_state=0)
    else:
        clf = LogisticRegression(max_iter=max(epochs, 100))
    clf.fit(x, y)
    return clf, features, mean, std


def _score(clf, mean, std, features, df: pd.DataFrame, label_name: str) -> float:
    x = (df[features].to_numpy(dtype=float) - mean) / std
    y = df[label_name].to_numpy(dtype=int)
    return float(np.mean(clf.predict(x) == y))


def build_fraud_program(trainer: str = "lr", epochs: int = 100) -> SharingProgram:
    """`trainer`/`epochs` are deployment knobs: the agent-facing signature of
    train_fraud_model is fixed, but the operator chooses the estimator class
    (logistic regression, fixed-epoch SGD, or a small MLP) when deploying."""
    prog = SharingProgram("fraud")

    @api_endpoint
    def upload_credit_transaction_data(api, data, discoverable=True):
        """Register and upload a CSV transaction table; returns its element id."""
        de_id = api.register_data_element("csv", {"kind": "transactions"},
                                          discoverable=bool(discoverable))
        api.upload_data_element(de_id, _as_bytes(data))
        return de_id

    @api_endpoint
    @contract_function
    def show_schema(api, de_id):
        """Column names and dtypes of a table, shared under contract."""
        df = datagen.from_csv_bytes(api.read(int(de_id)))
        return {c: str(t) for c, t in df.dtypes.items()}

    @api_endpoint
    @contract_function
    def share_sample(api, de_id, n=5):
        """First `n` rows of a table as CSV text."""
        df = datagen.from_csv_bytes(api.read(int(de_id)))
        return df.head(int(n)).to_csv(index=False)

    @api_endpoint
    @contract_function
    def check_column_compatibility(api, de_a, de_b):
        """Columns present in both tables with identical dtypes."""
        da = datagen.from_csv_bytes(api.read(int(de_a)))
        db = datagen.from_csv_bytes(api.read(int(de_b)))
        shared = [c for c in da.columns
                  if c in db.columns and da[c].dtype == db[c].dtype]
        return sorted(shared)

    @api_endpoint
    @contract_function
    def train_fraud_model(api, train_de_ids, size_constraint, test_de_ids,
                          target_accuracy, label_name):
        """Train a fraud classifier over the union of the training tables.

        Every training input must individually contain at least
        `size_constraint` rows, and held-out accuracy must reach
        `target_accuracy`, or nothing is released.
        """
        t0 = time.perf_counter()
        frames = []
        for de_id in train_de_ids:
            df = datagen.from_csv_bytes(api.read(int(de_id)))
            if len(df) < int(size_constraint):
                return api.precondition_failed(PRECONDITION_MSG)
            frames.append(df)
        train_df = pd.concat(frames, ignore_index=True)
        t1 = time.perf_counter()

        clf, features, mean, std = _fit(train_df, label_name, trainer, epochs)
        t2 = time.perf_counter()

        test_frames = [datagen.from_csv_bytes(api.read(int(d)))
                       for d in test_de_ids]
        test_df = pd.concat(test_frames, ignore_index=True)
        accuracy = _score(clf, mean, std, features, test_df, label_name)
        t3 = time.perf_counter()
        if accuracy < float(target_accuracy):
            return api.postcondition_failed(POSTCONDITION_MSG)

        return {
            "accuracy": accuracy,
            "rows_trained": int(len(train_df)),
            "model_b64": base64.b64encode(pickle.dumps(clf)).decode(),
            "phases": {
                "combine_s": (t1 - t0) + (t3 - t2),
                "compute_s": t2 - t1,
            },
        }

    for fn in (upload_credit_transaction_data, show_schema, share_sample,
               check_column_compatibility, train_fraud_model):
        prog.add(fn)
    return prog


def run_script(data_dir, seed: int = 11, rows: int = 4000,
               master_key: bytes | None = None) -> dict:
    """End-to-end two-bank flow; returns the observable outcomes.

    Bank one first floats an unconditioned training contract, which bank two
    denies. Bank two counter-proposes with a size precondition and an
    accuracy postcondition; both approve, and three calls then exercise the
    released / precondition-failed / postcondition-failed outcomes.
    """
    from ..engine import Escrow, EscrowConfig
    from ..vault import new_key

    rng = datagen.rng_for(seed)
    es = Escrow(EscrowConfig(data_dir=data_dir,
                             master_key=master_key or new_key(),
                             fsync=False),
                program=build_fraud_program())
    out: dict = {}
    try:
        b1 = es.register_agent("bank-one", external_id="bank-one")
        b2 = es.register_agent("bank-two", external_id="bank-two")
        k1, k2 = new_key(), new_key()
        es.submit_key(b1, k1)
        es.submit_key(b2, k2)

        def upload(agent, df):
            return es.call_function(
                agent, "upload_credit_transaction_data",
                {"data": base64.b64encode(datagen.to_csv_bytes(df)).decode()})

        d1 = upload(b1, datagen.fraud_transactions(rng, rows))
        d2 = upload(b2, datagen.fraud_transactions(rng, rows))
        t1 = upload(b1, datagen.fraud_transactions(rng, rows // 4))
        t2 = upload(b2, datagen.fraud_transactions(rng, rows // 4))
        out["discoverable"] = es.list_discoverable_des(b2)

        # schema/sample compatibility check before committing to training
        c_schema = es.propose_contract(
            b1, dest=[b1], de_ids=[d2], function="show_schema",
            args={"de_id": d2})
        es.approve_contract(b2, c_schema)
        schema_result = es.call_function(b1, "show_schema", {"de_id": d2})
        out["schema"] = json.loads(
            es.unseal_for_caller(b1, schema_result.output))

        def training_args(size_constraint, target_accuracy):
            return {
                "train_de_ids": [d1, d2], "size_constraint": size_constraint,
                "test_de_ids": [t1, t2], "target_accuracy": target_accuracy,
                "label_name": "is_fraud",
            }

        # bank two denies the unconditioned proposal outright
        c_bare = es.propose_contract(
            b1, dest=[b1, b2], de_ids=[d1, d2, t1, t2],
            function="train_fraud_model", args=training_args(0, 0.0))
        es.deny_contract(b2, c_bare, reason="no release conditions attached")
        out["denied_status"] = es.contract_status(c_bare)

        # revised proposals carry explicit conditions
        conditions = [
            {"kind": "pre", "description":
                "every training input holds at least size_constraint rows"},
            {"kind": "post", "description":
                "held-out accuracy reaches target_accuracy"},
        ]
        scenarios = {
            "released": training_args(100, 0.7),
            "precondition_failed": training_args(rows * 10, 0.7),
            "postcondition_failed": training_args(100, 1.01),
        }
        for label, args in scenarios.items():
            cid = es.propose_contract(
                b2, dest=[b1, b2], de_ids=[d1, d2, t1, t2],
                function="train_fraud_model", args=args,
                conditions=conditions)
            es.approve_contract(b1, cid)
            es.approve_contract(b2, cid)
            result = es.call_function(b1, "train_fraud_model", args)
            out[label] = {
                "outcome": result.condition_outcome.kind,
                "message": result.condition_outcome.message,
                "output_de_id": result.output_de_id,
            }
            if result.condition_outcome.released:
                payload = json.loads(es.unseal_for_caller(b1, result.output))
                out[label]["accuracy"] = payload["accuracy"]
        return out
    finally:
        es.close()
