"""Synthetic patient cohort: risk factors, condition flags and 32-class labels."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np
from scipy.special import expit

FEATURE_NAMES = (
    "age", "bmi", "cholesterol", "smoker",
    "parental_diabetes_father", "parental_diabetes_mother",
    "parental_hypertension_father", "parental_hypertension_mother",
    "sbp", "dbp", "mmse", "gender",
)
CONTINUOUS = ("age", "bmi", "cholesterol", "sbp", "dbp", "mmse")
BINARY = tuple(f for f in FEATURE_NAMES if f not in CONTINUOUS)

# bit c of the class label is condition c
CONDITIONS = ("diabetes", "obesity", "cognitive_impairment", "hyperlipidemia", "hypertension")

RANGES = {
    "age": (18.0, 95.0),
    "bmi": (15.0, 60.0),
    "sbp": (80.0, 220.0),
    "dbp": (40.0, 130.0),
    "mmse": (0.0, 30.0),
}


@dataclass(frozen=True)
class Dagum:
    a: float
    b: float
    p: float

    def __post_init__(self):
        if min(self.a, self.b, self.p) <= 0:
            raise ValueError(f"Dagum parameters must be positive: {self}")

    def ppf(self, u):
        u = np.asarray(u, dtype=np.float64)
        if np.any((u <= 0) | (u >= 1)):
            raise ValueError("Dagum draw must lie in (0, 1)")
        return self.b * (u ** (-1.0 / self.p) - 1.0) ** (-1.0 / self.a)

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (1.0 + (x / self.b) ** (-self.a)) ** (-self.p)


@dataclass(frozen=True)
class JohnsonSU:
    gamma: float
    delta: float
    xi: float
    lam: float

    def __post_init__(self):
        if self.delta <= 0 or self.lam <= 0:
            raise ValueError(f"JohnsonSU needs delta > 0 and lambda > 0: {self}")

    def from_normal(self, z):
        return self.xi + self.lam * np.sinh((np.asarray(z, dtype=np.float64) - self.gamma) / self.delta)


@dataclass(frozen=True)
class Cauchy:
    x0: float
    gamma: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"Cauchy scale must be positive: {self}")

    def ppf(self, u):
        u = np.asarray(u, dtype=np.float64)
        if np.any((u <= 0) | (u >= 1)):
            raise ValueError("Cauchy draw must lie in (0, 1)")
        return self.x0 + self.gamma * np.tan(np.pi * (u - 0.5))


Distribution = Union[Dagum, JohnsonSU, Cauchy]


def sample_risk_factor(dist: Distribution, draw, clip: tuple[float, float] | None = None):
    """Map a uniform (Dagum, Cauchy) or standard-normal (Johnson SU) draw to a value."""
    if isinstance(dist, JohnsonSU):
        x = dist.from_normal(draw)
    elif isinstance(dist, (Dagum, Cauchy)):
        x = dist.ppf(draw)
    else:
        raise TypeError(f"unsupported distribution {dist!r}")
    if clip is not None:
        x = np.clip(x, *clip)
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class CohortParams:
    age: Dagum = Dagum(4.0, 45.0, 0.8)
    sbp: JohnsonSU = JohnsonSU(-1.2, 2.2, 118.0, 18.0)
    dbp: JohnsonSU = JohnsonSU(-0.8, 2.5, 76.0, 12.0)
    bmi: JohnsonSU = JohnsonSU(-1.0, 2.0, 29.0, 5.0)
    cholesterol: JohnsonSU = JohnsonSU(-0.5, 2.3, 190.0, 35.0)
    mmse_deficit: Dagum = Dagum(3.0, 3.0, 1.0)
    gender_latent: Cauchy = Cauchy(0.0, 1.0)
    p_smoker: float = 0.22
    p_parental: float = 0.30


# condition -> (intercept, {driver: weight}); drivers are z-scored over the cohort
DEFAULT_LABEL_WEIGHTS: dict[str, tuple[float, dict[str, float]]] = {
    "diabetes": (-1.4, {"age": 0.8, "bmi": 0.9,
                        "parental_diabetes_father": 0.6, "parental_diabetes_mother": 0.6}),
    "obesity": (0.04, {"bmi": 2.5}),
    "cognitive_impairment": (-1.8, {"age": 1.1, "mmse": -1.5}),
    "hyperlipidemia": (-0.9, {"cholesterol": 1.6, "bmi": 0.4}),
    "hypertension": (-1.0, {"sbp": 1.4, "dbp": 0.8, "age": 0.5,
                            "parental_hypertension_father": 0.4,
                            "parental_hypertension_mother": 0.4}),
}


@dataclass
class Cohort:
    """Raw risk factors (n x 12, ``FEATURE_NAMES`` order) and condition flags (n x 5)."""

    factors: np.ndarray
    flags: np.ndarray
    labels: np.ndarray = field(init=False)

    def __post_init__(self):
        self.labels = encode_labels(self.flags)

    def __len__(self):
        return self.factors.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.factors[:, FEATURE_NAMES.index(name)]


def encode_label(flags) -> int:
    flags = np.asarray(flags, dtype=np.int64).reshape(-1)
    if flags.shape[0] != len(CONDITIONS) or np.any((flags != 0) & (flags != 1)):
        raise ValueError(f"expected {len(CONDITIONS)} binary flags, got {flags}")
    return int(flags @ (1 << np.arange(len(CONDITIONS))))


def encode_labels(flags: np.ndarray) -> np.ndarray:
    flags = np.asarray(flags, dtype=np.int64)
    return flags @ (1 << np.arange(len(CONDITIONS)))


def decode_label(label: int) -> np.ndarray:
    return (int(label) >> np.arange(len(CONDITIONS))) & 1


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std(ddof=1)
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def condition_probabilities(factors: np.ndarray,
                            weights: Mapping[str, tuple[float, Mapping[str, float]]]) -> np.ndarray:
    z = {name: _zscore(factors[:, k]) for k, name in enumerate(FEATURE_NAMES)}
    probs = np.zeros((factors.shape[0], len(CONDITIONS)))
    for c, cond in enumerate(CONDITIONS):
        intercept, drivers = weights[cond]
        logit = np.full(factors.shape[0], float(intercept))
        for driver, w in drivers.items():
            logit += w * z[driver]
        probs[:, c] = expit(logit)
    return probs


def generate_cohort(n: int, seed: int, params: CohortParams = CohortParams(),
                    label_weights=None) -> Cohort:
    """Draw ``n`` synthetic patients. Fully determined by ``(n, seed, params, label_weights)``."""
    if n < 2:
        raise ValueError("cohort needs at least 2 patients")
    rng = np.random.default_rng(seed)
    weights = DEFAULT_LABEL_WEIGHTS if label_weights is None else label_weights

    def uniform(size):
        # open interval (0, 1) for the inverse CDFs
        return rng.uniform(np.nextafter(0.0, 1.0), 1.0, size)

    cols = {
        "age": sample_risk_factor(params.age, uniform(n), RANGES["age"]),
        "bmi": sample_risk_factor(params.bmi, rng.standard_normal(n), RANGES["bmi"]),
        "cholesterol": sample_risk_factor(params.cholesterol, rng.standard_normal(n)),
        "smoker": (rng.random(n) < params.p_smoker).astype(np.float64),
    }
    for name in BINARY[1:5]:
        cols[name] = (rng.random(n) < params.p_parental).astype(np.float64)
    cols["sbp"] = sample_risk_factor(params.sbp, rng.standard_normal(n), RANGES["sbp"])
    cols["dbp"] = sample_risk_factor(params.dbp, rng.standard_normal(n), RANGES["dbp"])
    cols["mmse"] = np.clip(30.0 - sample_risk_factor(params.mmse_deficit, uniform(n)), *RANGES["mmse"])
    cols["gender"] = (sample_risk_factor(params.gender_latent, uniform(n)) > params.gender_latent.x0
                      ).astype(np.float64)
    factors = np.column_stack([cols[name] for name in FEATURE_NAMES])

    probs = condition_probabilities(factors, weights)
    flags = (rng.random(probs.shape) < probs).astype(np.int64)
    return Cohort(factors, flags)


def standardize_features(factors: np.ndarray) -> np.ndarray:
    """z-score the continuous columns (ddof=1); binary columns pass through."""
    factors = np.asarray(factors, dtype=np.float64)
    if factors.shape[0] < 2:
        raise ValueError("need at least 2 records to standardize")
    out = factors.copy()
    for name in CONTINUOUS:
        k = FEATURE_NAMES.index(name)
        col = factors[:, k]
        sd = col.std(ddof=1)
        if sd == 0:
            raise ValueError(f"column {name!r} has zero variance")
        out[:, k] = (col - col.mean()) / sd
    return out


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def mask(self, n: int, which: str) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[getattr(self, which)] = True
        return m


def stratified_split(labels, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> Split:
    """Class-stratified train/val/test partition.

    Classes with at least three members get one member in every set before
    the rest is dealt out; smaller classes go to train. Remaining members are
    interleaved across classes and each is handed to the set furthest below
    its target size, which keeps totals at the requested fractions.
    """
    labels = np.asarray(labels).reshape(-1)
    n = labels.shape[0]
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr <= 0) or not np.isclose(fr.sum(), 1.0):
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    if n < 10:
        raise ValueError("need at least 10 samples to split")
    rng = np.random.default_rng(seed)
    n_val = int(round(fr[1] * n))
    n_test = int(round(fr[2] * n))
    targets = np.array([n - n_val - n_test, n_val, n_test])

    sets: list[list[int]] = [[], [], []]
    pool = []  # (fractional position within class, tiebreak, index)
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        if members.size < 3:
            sets[0].extend(members.tolist())
            continue
        for s in range(3):
            sets[s].append(int(members[s]))
        rest = members[3:]
        for k, idx in enumerate(rest):
            pool.append(((k + 0.5) / rest.size, rng.random(), int(idx)))
    pool.sort()
    for _, _, idx in pool:
        sizes = np.array([len(s) for s in sets])
        deficit = (targets - sizes) / targets
        sets[int(np.argmax(deficit))].append(idx)
    train, val, test = (np.sort(np.asarray(s, dtype=np.int64)) for s in sets)
    return Split(train, val, test)
