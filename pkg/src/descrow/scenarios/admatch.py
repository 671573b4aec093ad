"""Cross-platform ad-model training over a privately matched audience.

Two platforms hold overlapping user bases keyed by noisy emails and names.
A destination agent trains click models over the fuzzy-joined table without
either platform revealing raw rows. The expensive join runs once and is
cached as an escrow-held intermediate keyed in the shared KV namespace, so
repeat training calls (different model names / filters) skip it.
"""
from __future__ import annotations

import base64
import time

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression, SGDClassifier
from sklearn.neural_network import MLPClassifier

from ..errors import EmptyJoin
from ..runtime import SharingProgram, api_endpoint, contract_function
from . import datagen

JOIN_KEY = "joined_profiles"


# --- matching helpers --------------------------------------------------------

def normalize_email(email: str) -> str:
    email = email.strip().lower()
    if "@" not in email:
        return email
    local, domain = email.rsplit("@", 1)
    local = local.split("+", 1)[0].replace(".", "")
    return f"{local}@{domain}"


def normalize_name(name: str) -> str:
    return " ".join(name.strip().lower().split())


def within_one_edit(a: str, b: str) -> bool:
    """True iff Levenshtein distance(a, b) <= 1."""
    la, lb = len(a), len(b)
    if abs(la - lb) > 1:
        return False
    if la > lb:
        a, b, la, lb = b, a, lb, la
    i = j = edits = 0
    while i < la and j < lb:
        if a[i] == b[j]:
            i += 1
            j += 1
            continue
        edits += 1
        if edits > 1:
            return False
        if la == lb:
            i += 1
        j += 1
    return edits + (lb - j) + (la - i) <= 1


def _deletions(s: str):
    yield s
    for i in range(len(s)):
        yield s[:i] + s[i + 1:]


def fuzzy_join(left: pd.DataFrame, right: pd.DataFrame,
               suffix: str = "_b") -> pd.DataFrame:
    """Inner join on normalized email, then on names within edit distance 1.

    Name candidates come from a symmetric-deletion index (strings that can
    reach each other with one edit share a deletion variant), then every
    candidate pair is verified with an exact distance check.
    """
    l_email = [normalize_email(e) for e in left["email"]]
    r_email = [normalize_email(e) for e in right["email"]]
    r_by_email: dict = {}
    for j, e in enumerate(r_email):
        r_by_email.setdefault(e, j)

    pairs = []
    matched_r = set()
    unmatched_l = []
    for i, e in enumerate(l_email):
        j = r_by_email.get(e)
        if j is not None and j not in matched_r:
            pairs.append((i, j))
            matched_r.add(j)
        else:
            unmatched_l.append(i)

    l_names = [normalize_name(n) for n in left["name"]]
    r_names = [normalize_name(n) for n in right["name"]]
    name_index: dict = {}
    for j, n in enumerate(r_names):
        if j in matched_r:
            continue
        for v in _deletions(n):
            name_index.setdefault(v, []).append(j)

    for i in unmatched_l:
        n = l_names[i]
        seen = set()
        hit = None
        for v in _deletions(n):
            for j in name_index.get(v, ()):
                if j in seen or j in matched_r:
                    continue
                seen.add(j)
                if within_one_edit(n, r_names[j]):
                    hit = j
                    break
            if hit is not None:
                break
        if hit is not None:
            pairs.append((i, hit))
            matched_r.add(hit)

    if not pairs:
        return pd.DataFrame()
    li = [p[0] for p in pairs]
    rj = [p[1] for p in pairs]
    lpart = left.iloc[li].reset_index(drop=True)
    rpart = right.iloc[rj].reset_index(drop=True)
    rpart.columns = [c if c not in lpart.columns else f"{c}{suffix}"
                     for c in rpart.columns]
    return pd.concat([lpart, rpart], axis=1)


def _train(df: pd.DataFrame, label_name: str, trainer: str, epochs: int):
    numeric = [c for c in df.columns
               if c != label_name and pd.api.types.is_numeric_dtype(df[c])]
    x = df[numeric].to_numpy(dtype=float)
    y = df[label_name].to_numpy(dtype=int)
    mean, std = x.mean(axis=0), x.std(axis=0) + 1e-9
    x = (x - mean) / std
    cut = max(1, int(len(df) * 0.8))
    if trainer == "mlp":
        clf = MLPClassifier(hidden_layer_sizes=(16,), max_iter=epochs,
                            random_state=0)
    elif trainer == "sgd":
        clf = SGDClassifier(loss="log_loss", max_iter=epochs, tol=None,
                            random_state=0)
    else:
        clf = LogisticRegression(max_iter=max(epochs, 100))
    clf.fit(x[:cut], y[:cut])
    holdout = x[cut:] if cut < len(df) else x[:cut]
    truth = y[cut:] if cut < len(df) else y[:cut]
    return float(np.mean(clf.predict(holdout) == truth))


def build_ads_program(reuse: bool = True, trainer: str = "lr",
                      epochs: int = 40) -> SharingProgram:
    """`reuse` toggles the intermediate cache (benchmark control);
    `trainer`/`epochs` pick the estimator at deployment time."""
    prog = SharingProgram("ads")
    prog.join_calls = {"count": 0}

    @api_endpoint
    def upload_social_media_data(api, data, discoverable=True):
        """Register and upload a CSV profile table; returns its element id."""
        de_id = api.register_data_element("csv", {"kind": "profiles"},
                                          discoverable=bool(discoverable))
        api.upload_data_element(de_id, _as_bytes(data))
        return de_id

    @api_endpoint
    def propose_contract(api, dest_agents, de_ids, function, args=None,
                         conditions=None, max_uses=1):
        """Propose a contract through the program (thin pass-through)."""
        return api.propose_contract(dest_agents, de_ids, function,
                                    args=args, conditions=conditions,
                                    max_uses=max_uses)

    @api_endpoint
    def approve_contract(api, contract_id):
        return api.approve_contract(int(contract_id))

    @api_endpoint
    @contract_function
    def train_advertising_model(api, model_name, label_name, query=None):
        """Train a click model over the fuzzy-joined audience.

        The joined table is cached under an escrow-held key on first use and
        reused by later calls; `query` optionally filters rows (pandas query
        syntax) before training.
        """
        t0 = time.perf_counter()
        source_des = api.get_all_accessible_des()
        joined_id = api.read_intermediate(JOIN_KEY) if reuse else None
        if joined_id is not None:
            joined = datagen.from_parquet_bytes(api.read(joined_id))
            reused = True
        else:
            frames = [datagen.from_csv_bytes(api.read(d)) for d in source_des]
            with_label = [f for f in frames if label_name in f.columns]
            without = [f for f in frames if label_name not in f.columns]
            if not with_label or not without:
                raise ValueError(
                    f"need one table with {label_name!r} and one without")
            prog.join_calls["count"] += 1
            joined = fuzzy_join(with_label[0], without[0])
            if joined.empty:
                raise EmptyJoin("audience match produced no rows")
            if reuse:
                api.write_intermediate(JOIN_KEY, datagen.to_parquet_bytes(joined))
            reused = False
        t1 = time.perf_counter()

        working = joined.query(query) if query else joined
        if working.empty:
            raise EmptyJoin(f"filter {query!r} left no rows")
        accuracy = _train(working, label_name, trainer, epochs)
        t2 = time.perf_counter()
        return {
            "model_name": model_name,
            "accuracy": accuracy,
            "rows": int(len(working)),
            "reused_join": reused,
            "join_invocations": prog.join_calls["count"],
            "phases": {"combine_s": t1 - t0, "compute_s": t2 - t1},
        }

    for fn in (upload_social_media_data, propose_contract, approve_contract,
               train_advertising_model):
        prog.add(fn)
    return prog


def _as_bytes(data) -> bytes:
    if isinstance(data, bytes):
        return data
    return base64.b64decode(data)


def model_name_wildcard(names=None):
    if names:
        return {"__wildcard__": {"choices": list(names)}}
    return {"__wildcard__": {}}


def run_script(data_dir, seed: int = 37, rows: int = 2500,
               master_key: bytes | None = None, reuse: bool = True) -> dict:
    """Two platforms + an ad buyer; two training calls share one join."""
    import json

    from ..engine import Escrow, EscrowConfig
    from ..vault import new_key

    rng = datagen.rng_for(seed)
    prog = build_ads_program(reuse=reuse)
    es = Escrow(EscrowConfig(data_dir=data_dir,
                             master_key=master_key or new_key(),
                             fsync=False),
                program=prog)
    out: dict = {}
    try:
        pa = es.register_agent("platform-a", external_id="platform-a")
        pb = es.register_agent("platform-b", external_id="platform-b")
        buyer = es.register_agent("ad-buyer", external_id="ad-buyer")
        for agent in (pa, pb, buyer):
            es.submit_key(agent, new_key())

        df_a, df_b = datagen.ad_profiles(rng, rows)

        def upload(agent, df):
            return es.call_function(agent, "upload_social_media_data", {
                "data": base64.b64encode(datagen.to_csv_bytes(df)).decode()})

        de_a = upload(pa, df_a)
        de_b = upload(pb, df_b)

        contract_args = {
            "model_name": model_name_wildcard(["reach", "conversion"]),
            "label_name": "clicked",
            "query": None,
        }
        cid = es.call_function(buyer, "propose_contract", {
            "dest_agents": [buyer],
            "de_ids": [de_a, de_b],
            "function": "train_advertising_model",
            "args": contract_args,
            "max_uses": None,
        })
        es.call_function(pa, "approve_contract", {"contract_id": cid})
        es.call_function(pb, "approve_contract", {"contract_id": cid})

        results = {}
        for model_name in ("reach", "conversion"):
            res = es.call_function(buyer, "train_advertising_model", {
                "model_name": model_name, "label_name": "clicked",
                "query": None,
            })
            results[model_name] = json.loads(
                es.unseal_for_caller(buyer, res.output))
        out["runs"] = results
        out["join_invocations"] = prog.join_calls["count"]
        out["contract_id"] = cid
        return out
    finally:
        es.close()
