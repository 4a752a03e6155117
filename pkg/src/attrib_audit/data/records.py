"""Record types, vocabularies and the in-memory cohort container."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

PROTECTED_ATTRIBUTES = ("ethnicity", "gender", "marital_status", "age", "insurance")

VOCABULARIES: dict[str, tuple[str, ...]] = {
    "ethnicity": ("ASIAN", "BLACK/AFRICAN AMERICAN", "HISPANIC/LATINO", "OTHER", "WHITE"),
    "gender": ("FEMALE", "MALE"),
    "marital_status": ("MARRIED", "SINGLE", "DIVORCED/WIDOWED"),
    "age": ("<55 YRS", "55-67 YRS", "67-78 YRS", ">=78 YRS"),
    "insurance": ("MEDICAID/MEDICARE", "PRIVATE"),
}

# Interior edges of the age quartile bins; intervals are [low, high), last bin open above.
AGE_BIN_EDGES = (55.0, 67.0, 78.0)

# Values treated as "unclear" and dropped before any group analysis.
UNCLEAR_VALUES = frozenset({"", "NONE", "UNKNOWN", "UNABLE TO OBTAIN", "UNKNOWN/NOT SPECIFIED", "NAN"})

TREATMENT_TYPES = ("HighFlow", "InvasiveVent", "NonInvasiveVent", "Oxygen", "Trach")

_SLUG_ALIASES = {"<55 YRS": "lt55", "55-67 YRS": "55_67", "67-78 YRS": "67_78", ">=78 YRS": "ge78"}


def group_slug(label: str) -> str:
    """Config-safe identifier for a group label, e.g. ``'>=78 YRS' -> 'ge78'``."""
    if label in _SLUG_ALIASES:
        return _SLUG_ALIASES[label]
    return re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_")


def group_from_slug(attribute: str, slug: str) -> str:
    for label in VOCABULARIES[attribute]:
        if group_slug(label) == slug or label == slug:
            return label
    raise KeyError(f"unknown group {slug!r} for attribute {attribute!r}")


def age_group(age: float) -> str:
    labels = VOCABULARIES["age"]
    for edge, label in zip(AGE_BIN_EDGES, labels):
        if age < edge:
            return label
    return labels[-1]


@dataclass(frozen=True)
class EventRecord:
    stay_id: str
    time: float
    feature: str
    value: float


@dataclass(frozen=True)
class StaticRecord:
    stay_id: str
    age: float
    gender: str
    ethnicity: str
    marital_status: str
    insurance: str
    label: int
    # (treatment_type, span durations in hours)
    treatments: tuple[tuple[str, tuple[float, ...]], ...] = ()
    hem_mets: bool = False
    first_stay: bool = True

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"stay {self.stay_id}: label must be 0 or 1, got {self.label!r}")
        for ttype, spans in self.treatments:
            if ttype not in TREATMENT_TYPES:
                raise ValueError(f"stay {self.stay_id}: unknown treatment type {ttype!r}")
            if any(not (s > 0) for s in spans):
                raise ValueError(f"stay {self.stay_id}: treatment spans must be positive")

    def treatment_hours(self, treatment_type: str) -> float:
        """Total duration over all spans of one treatment type (0 if never given)."""
        return float(sum(sum(spans) for t, spans in self.treatments if t == treatment_type))


@dataclass(frozen=True, eq=False)
class Cohort:
    """N x T x F tensor plus labels, static records and observation mask.

    The last ``n_static`` feature columns, when present, hold time-constant
    encodings of the static attributes.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    static: tuple[StaticRecord, ...]
    mask: np.ndarray
    n_static: int = 0
    ground_truth_informative: frozenset[int] | None = None
    oracle_logit: np.ndarray | None = None
    categorical_codes: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        mask = np.asarray(self.mask, dtype=bool)
        if X.ndim != 3:
            raise ValueError(f"X must be N x T x F, got shape {X.shape}")
        if y.shape != (X.shape[0],) or len(self.static) != X.shape[0]:
            raise ValueError("X, y and static must agree on N")
        if mask.shape != X.shape:
            raise ValueError("mask shape must match X")
        if len(self.feature_names) != X.shape[2]:
            raise ValueError("feature_names length must equal F")
        if not np.all(np.isfinite(X)):
            raise ValueError("cohort tensor contains missing or non-finite values")
        for arr in (X, y, mask):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "mask", mask)
        if self.oracle_logit is not None:
            ol = np.asarray(self.oracle_logit, dtype=float)
            ol.setflags(write=False)
            object.__setattr__(self, "oracle_logit", ol)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_timesteps(self) -> int:
        return self.X.shape[1]

    @property
    def n_features(self) -> int:
        return self.X.shape[2]

    @property
    def n_temporal(self) -> int:
        return self.n_features - self.n_static

    @property
    def stay_ids(self) -> list[str]:
        return [r.stay_id for r in self.static]

    def subset(self, idx) -> "Cohort":
        idx = np.asarray(idx, dtype=np.int64)
        return Cohort(
            X=self.X[idx],
            y=self.y[idx],
            feature_names=self.feature_names,
            static=tuple(self.static[i] for i in idx),
            mask=self.mask[idx],
            n_static=self.n_static,
            ground_truth_informative=self.ground_truth_informative,
            oracle_logit=None if self.oracle_logit is None else self.oracle_logit[idx],
            categorical_codes=self.categorical_codes,
        )

    def with_X(self, X: np.ndarray) -> "Cohort":
        return Cohort(
            X=X,
            y=self.y,
            feature_names=self.feature_names,
            static=self.static,
            mask=self.mask,
            n_static=self.n_static,
            ground_truth_informative=self.ground_truth_informative,
            oracle_logit=self.oracle_logit,
            categorical_codes=self.categorical_codes,
        )


@dataclass(frozen=True)
class TabularSummary:
    Xs: np.ndarray
    column_names: tuple[str, ...]
    # column name -> (source feature name, statistic)
    provenance: dict[str, tuple[str, str]]

    def columns_for(self, feature: str) -> list[int]:
        return [i for i, c in enumerate(self.column_names) if self.provenance[c][0] == feature]


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
