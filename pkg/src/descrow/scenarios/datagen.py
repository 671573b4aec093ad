"""Seeded synthetic data for the scenario programs and benchmarks.

Everything is generated from an explicit numpy Generator so scripts and
benchmarks replay byte-identically for a given seed. Schemas follow the
shapes the programs expect: card-transaction tables with a fraud label,
person registries joined on a CPR identifier, and social-media profiles
with noisy names/emails for fuzzy matching.
"""
from __future__ import annotations

import io
import string

import numpy as np
import pandas as pd

FRAUD_FEATURES = [
    "amount", "merchant_risk", "hour", "distance_km",
    "card_present", "velocity_24h", "account_age_days",
]


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def fraud_transactions(rng: np.random.Generator, rows: int,
                       fraud_rate: float = 0.08) -> pd.DataFrame:
    """Card transactions with a learnable fraud signal."""
    amount = rng.gamma(2.0, 60.0, rows)
    merchant_risk = rng.uniform(0, 1, rows)
    hour = rng.integers(0, 24, rows)
    distance = rng.exponential(12.0, rows)
    card_present = rng.integers(0, 2, rows)
    velocity = rng.poisson(2.0, rows).astype(float)
    account_age = rng.integers(10, 4000, rows).astype(float)

    logit = (
        -3.2
        + 0.004 * amount
        + 2.2 * merchant_risk
        + 0.035 * distance
        - 0.9 * card_present
        + 0.28 * velocity
        - 0.0004 * account_age
        + np.where((hour < 6) | (hour > 22), 0.8, 0.0)
    )
    prob = 1.0 / (1.0 + np.exp(-logit))
    # rescale to the requested base rate while keeping the signal
    prob = prob * (fraud_rate / max(prob.mean(), 1e-9))
    prob = np.clip(prob, 0, 0.97)
    label = (rng.uniform(0, 1, rows) < prob).astype(int)

    return pd.DataFrame({
        "amount": np.round(amount, 2),
        "merchant_risk": np.round(merchant_risk, 4),
        "hour": hour,
        "distance_km": np.round(distance, 2),
        "card_present": card_present,
        "velocity_24h": velocity,
        "account_age_days": account_age,
        "is_fraud": label,
    })


def to_csv_bytes(df: pd.DataFrame) -> bytes:
    buf = io.StringIO()
    df.to_csv(buf, index=False)
    return buf.getvalue().encode()


def from_csv_bytes(data: bytes) -> pd.DataFrame:
    return pd.read_csv(io.BytesIO(data))


def to_parquet_bytes(df: pd.DataFrame) -> bytes:
    buf = io.BytesIO()
    df.to_parquet(buf, index=False)
    return buf.getvalue()


def from_parquet_bytes(data: bytes) -> pd.DataFrame:
    return pd.read_parquet(io.BytesIO(data))


# --- healthcare: wearable users + national patient registry -----------------

HEALTH_TRUE_EFFECT = -1.25  # planted treatment coefficient


def health_tables(rng: np.random.Generator, n: int) -> tuple:
    """(wearable table, registry table), joinable on CPR.

    Linear-Gaussian with confounding: activity and diet drive both the
    treatment dose and the outcome, so the unadjusted estimate is biased
    while adjustment for the two confounders recovers HEALTH_TRUE_EFFECT.
    """
    cpr = np.array([f"{rng.integers(0, 10**10):010d}" for _ in range(n)])
    activity = rng.normal(0, 1, n)
    diet = rng.normal(0, 1, n)
    dose = 0.8 * activity - 0.5 * diet + rng.normal(0, 0.7, n)
    outcome = (HEALTH_TRUE_EFFECT * dose + 0.9 * activity + 0.6 * diet
               + rng.normal(0, 0.5, n))

    wearable = pd.DataFrame({
        "CPR": cpr,
        "activity": np.round(activity, 6),
        "diet": np.round(diet, 6),
    })
    registry = pd.DataFrame({
        "CPR": cpr,
        "statin_dose": np.round(dose, 6),
        "chol_change": np.round(outcome, 6),
    })
    return wearable, registry


# --- ad matching: two platforms with overlapping, noisy user bases ----------

_FIRST = ["ana", "ben", "carla", "dmitri", "elena", "farid", "gina", "hugo",
          "ines", "jonas", "karin", "luis", "mara", "nils", "olga", "pavel",
          "quinn", "rosa", "sven", "tara"]
_LAST = ["adams", "berg", "costa", "dietrich", "evans", "fischer", "gomez",
         "haas", "ivanov", "jensen", "keller", "lund", "meyer", "novak",
         "olsen", "petrov", "quist", "ruiz", "schmidt", "tanaka"]


def _perturb_name(rng: np.random.Generator, name: str) -> str:
    """One random edit (substitution/deletion/insertion) — distance 1."""
    letters = string.ascii_lowercase
    i = int(rng.integers(0, len(name)))
    op = int(rng.integers(0, 3))
    if op == 0:
        return name[:i] + rng.choice(list(letters)) + name[i + 1:]
    if op == 1 and len(name) > 3:
        return name[:i] + name[i + 1:]
    return name[:i] + rng.choice(list(letters)) + name[i:]


def _noisy_email(rng: np.random.Generator, email: str) -> str:
    local, domain = email.split("@")
    style = int(rng.integers(0, 3))
    if style == 0:
        local = local.replace(".", "")
    elif style == 1:
        local = local + f"+{int(rng.integers(0, 99))}"
    return f"{local}@{domain}".upper() if rng.uniform() < 0.3 else f"{local}@{domain}"


def ad_profiles(rng: np.random.Generator, rows: int,
                overlap: float = 0.7, email_noise: float = 0.45,
                name_typos: float = 0.5) -> tuple:
    """(platform A table, platform B table) with a shared user subset.

    Overlapping users appear on both sides; on side B a fraction of their
    emails are re-styled (dots/plus-tags/case) and a fraction of their names
    carry a single typo, so matching needs normalization + edit distance.
    """
    n_shared = int(rows * overlap)
    ids = np.arange(rows * 2 - n_shared)
    first = rng.choice(_FIRST, len(ids))
    last = rng.choice(_LAST, len(ids))
    names = np.array([f"{f} {l}" for f, l in zip(first, last)])
    emails = np.array([
        f"{f}.{l}{i % 97}@example.com" for i, (f, l) in enumerate(zip(first, last))
    ])

    a_idx = np.arange(rows)
    b_idx = np.concatenate([np.arange(n_shared), np.arange(rows, len(ids))])

    def features(idx, label_seed):
        local = np.random.default_rng(label_seed)
        age = local.integers(18, 75, len(idx))
        sessions = local.poisson(9.0, len(idx)).astype(float)
        spend = np.round(local.gamma(2.0, 14.0, len(idx)), 2)
        logit = -1.0 + 0.03 * (age - 40) + 0.08 * sessions + 0.01 * spend
        clicked = (local.uniform(0, 1, len(idx)) < 1 / (1 + np.exp(-logit))).astype(int)
        return age, sessions, spend, clicked

    age_a, sess_a, spend_a, clicked = features(a_idx, 1234)
    age_b, sess_b, spend_b, _ = features(b_idx, 5678)

    df_a = pd.DataFrame({
        "name": names[a_idx],
        "email": emails[a_idx],
        "age": age_a,
        "sessions": sess_a,
        "spend": spend_a,
        "clicked": clicked,
    })

    b_names = names[b_idx].copy()
    b_emails = emails[b_idx].copy()
    for i in range(n_shared):
        if rng.uniform() < email_noise:
            b_emails[i] = _noisy_email(rng, b_emails[i])
        if rng.uniform() < name_typos:
            b_names[i] = _perturb_name(rng, b_names[i])
    df_b = pd.DataFrame({
        "name": b_names,
        "email": b_emails,
        "age": age_b,
        "watch_hours": np.round(rng.gamma(2.0, 3.0, len(b_idx)), 2),
        "subs": rng.poisson(25.0, len(b_idx)),
    })
    return df_a, df_b
