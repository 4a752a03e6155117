"""Protected-group stratification, treatment disparity and group AUC audits."""

from __future__ import annotations

import csv
import json
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .data.records import (
    AGE_BIN_EDGES,
    PROTECTED_ATTRIBUTES,
    TREATMENT_TYPES,
    VOCABULARIES,
    Cohort,
    StaticRecord,
    age_group,
)
from .metrics import auroc


class FairnessError(ValueError):
    pass


@dataclass(frozen=True)
class ProtectedGrouping:
    attribute: str
    labels: tuple[str, ...]
    vocabulary: tuple[str, ...]
    age_bin_edges: tuple[float, ...] = AGE_BIN_EDGES

    def members(self, group: str) -> np.ndarray:
        return np.array([g == group for g in self.labels], dtype=bool)

    def sizes(self) -> dict[str, int]:
        return {g: int(sum(1 for lab in self.labels if lab == g)) for g in self.vocabulary}

    def subset(self, idx) -> "ProtectedGrouping":
        return ProtectedGrouping(self.attribute, tuple(self.labels[i] for i in idx), self.vocabulary, self.age_bin_edges)


def _records(source) -> Sequence[StaticRecord]:
    return source.static if isinstance(source, Cohort) else source


def stratify(source, attribute: str, extensions: Iterable[str] = ()) -> ProtectedGrouping:
    """Assign every sample to one group of ``attribute``.

    Age uses ``[low, high)`` bins with the last bin open above. Categories must
    come from the protected vocabulary or the declared ``extensions``.
    """
    if attribute not in PROTECTED_ATTRIBUTES:
        raise FairnessError(f"unknown protected attribute {attribute!r}; expected one of {PROTECTED_ATTRIBUTES}")
    vocab = VOCABULARIES[attribute] + tuple(e for e in extensions if e not in VOCABULARIES[attribute])
    labels = []
    for rec in _records(source):
        if attribute == "age":
            labels.append(age_group(rec.age))
            continue
        value = getattr(rec, attribute)
        if value not in vocab:
            raise FairnessError(f"stay {rec.stay_id}: {attribute} value {value!r} is not in the vocabulary")
        labels.append(value)
    return ProtectedGrouping(attribute, tuple(labels), vocab)


@dataclass(frozen=True)
class TreatmentStat:
    attribute: str
    group: str
    treatment: str
    n_group: int
    n_treated: int
    adoption_rate: float
    # over treated members only; None when nobody in the group was treated
    mean_duration_hours: float | None


def treatment_disparity(source, grouping: ProtectedGrouping) -> list[TreatmentStat]:
    """Adoption rate and mean summed-span duration per (group, treatment type).

    Patients without a record of a treatment count as not adopting it.
    """
    records = _records(source)
    if len(records) != len(grouping.labels):
        raise FairnessError("grouping and records differ in length")
    hours = np.array([[r.treatment_hours(t) for t in TREATMENT_TYPES] for r in records]).reshape(len(records), -1)
    treated = np.array([[any(tt == t for tt, _ in r.treatments) for t in TREATMENT_TYPES] for r in records])
    treated = treated.reshape(len(records), -1)
    out = []
    for group in grouping.vocabulary:
        m = grouping.members(group)
        n = int(m.sum())
        for j, ttype in enumerate(TREATMENT_TYPES):
            tm = m & treated[:, j]
            k = int(tm.sum())
            out.append(
                TreatmentStat(
                    attribute=grouping.attribute,
                    group=group,
                    treatment=ttype,
                    n_group=n,
                    n_treated=k,
                    adoption_rate=k / n if n else 0.0,
                    mean_duration_hours=float(hours[tm, j].mean()) if k else None,
                )
            )
    return out


def write_treatment_csv(rows: Iterable[TreatmentStat], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "group", "treatment", "adoption_rate", "mean_duration_hours"])
        for r in rows:
            dur = "" if r.mean_duration_hours is None else repr(r.mean_duration_hours)
            w.writerow([r.attribute, r.group, r.treatment, repr(r.adoption_rate), dur])


@dataclass(frozen=True)
class GroupResult:
    name: str
    n_train: int | None
    n_test: int
    mortality_rate: float | None
    auroc: float | None


@dataclass(frozen=True)
class FairnessReport:
    attribute: str
    groups: tuple[GroupResult, ...]
    auc_overall: float
    auc_min: float
    auc_macro_avg: float
    auc_minority: float | None
    minority_group: str
    minority_basis: str
    pearson_r: float | None
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def auc_max(self) -> float:
        return max(g.auroc for g in self.groups if g.auroc is not None)

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "groups": [asdict(g) for g in self.groups],
            "auc_overall": self.auc_overall,
            "auc_min": self.auc_min,
            "auc_macro_avg": self.auc_macro_avg,
            "auc_minority": self.auc_minority,
            "minority_group": self.minority_group,
            "minority_basis": self.minority_basis,
            "pearson_r": self.pearson_r,
            "score_target": "logit",
            "warnings": list(self.warnings),
        }


def group_auc_report(
    scores,
    labels,
    grouping: ProtectedGrouping,
    train_counts: dict[str, int] | None = None,
    mortality_rates: dict[str, float] | None = None,
) -> FairnessReport:
    """Per-group AUROC with AUC(min), AUC(macro-avg) and AUC(minority).

    Groups missing either class are excluded from the summaries and listed in
    ``warnings``. The minority group is the smallest by training count (test
    count when ``train_counts`` is not given). Mortality rates default to the
    test-set rates.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.size != len(grouping.labels) or y.size != s.size:
        raise FairnessError("scores, labels and grouping must have the same length")
    warnings = []
    results = []
    for group in grouping.vocabulary:
        m = grouping.members(group)
        n = int(m.sum())
        if n == 0 and (train_counts is None or not train_counts.get(group)):
            continue
        yg = y[m]
        value = None
        if n and 0 < yg.sum() < n:
            value = auroc(s[m], yg)
        else:
            warnings.append(f"group {group!r} lacks both classes in the evaluation set (n={n}); excluded")
        rate = mortality_rates.get(group) if mortality_rates is not None else (float(yg.mean()) if n else None)
        n_train = None if train_counts is None else int(train_counts.get(group, 0))
        results.append(GroupResult(group, n_train, n, rate, value))

    valid = [g for g in results if g.auroc is not None]
    if not valid:
        raise FairnessError(f"every group of {grouping.attribute!r} is degenerate; no AUC can be computed")
    aucs = np.array([g.auroc for g in valid])

    if train_counts is not None:
        basis = "training split counts"
        minority = min(results, key=lambda g: (g.n_train, grouping.vocabulary.index(g.name)))
    else:
        basis = "evaluation set counts"
        minority = min(results, key=lambda g: (g.n_test, grouping.vocabulary.index(g.name)))
    if minority.auroc is None:
        warnings.append(f"minority group {minority.name!r} is degenerate; auc_minority undefined")

    pairs = [(g.mortality_rate, g.auroc) for g in valid if g.mortality_rate is not None]
    r = None
    if len(pairs) >= 3:
        try:
            r, _ = pearson(*zip(*pairs))
        except FairnessError:
            r = None

    return FairnessReport(
        attribute=grouping.attribute,
        groups=tuple(results),
        auc_overall=auroc(s, y),
        auc_min=float(aucs.min()),
        auc_macro_avg=float(aucs.mean()),
        auc_minority=minority.auroc,
        minority_group=minority.name,
        minority_basis=basis,
        pearson_r=r,
        warnings=tuple(warnings),
    )


def pooled_summary(reports: Sequence[FairnessReport]) -> dict:
    """Min / macro-average / minority AUC over the groups of all attributes together."""
    groups = [(rep.attribute, g) for rep in reports for g in rep.groups if g.auroc is not None]
    if not groups:
        raise FairnessError("no valid groups to pool")
    aucs = np.array([g.auroc for _, g in groups])
    use_train = all(g.n_train is not None for _, g in groups)
    attr, smallest = min(groups, key=lambda ag: ag[1].n_train if use_train else ag[1].n_test)
    return {
        "scope": "pooled over attributes",
        "auc_min": float(aucs.min()),
        "auc_macro_avg": float(aucs.mean()),
        "auc_minority": smallest.auroc,
        "minority_group": f"{attr}:{smallest.name}",
    }


def pearson(x, y) -> tuple[float, float]:
    """Sample Pearson r and its two-sided p-value from a t distribution with n - 2 dof."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FairnessError("pearson needs two equal-length 1-D sequences")
    n = x.size
    if n < 3:
        raise FairnessError(f"pearson needs at least 3 pairs, got {n}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    # relative test: the centred sum of a constant list is rounding noise, not exactly 0
    if np.ptp(x) == 0 or np.ptp(y) == 0 or sxx <= 1e-24 * float(x @ x) or syy <= 1e-24 * float(y @ y):
        raise FairnessError("zero variance in one coordinate; correlation undefined")
    r = float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * stats.t.sf(abs(t), n - 2))


def mortality_auc_correlation(reports_or_pairs) -> tuple[float, float]:
    """Pearson r between group mortality rate and group AUC across all given groups."""
    pairs = []
    for item in reports_or_pairs:
        if isinstance(item, FairnessReport):
            pairs.extend((g.mortality_rate, g.auroc) for g in item.groups if g.auroc is not None)
        else:
            pairs.append(tuple(item))
    pairs = [p for p in pairs if p[0] is not None and p[1] is not None]
    if len(pairs) < 3:
        raise FairnessError("need at least 3 (mortality rate, AUC) pairs")
    return pearson(*zip(*pairs))


def comorbidity_slice(cohort: Cohort, flag: str = "hem_mets") -> Cohort:
    """Sub-cohort of stays whose static record has ``flag`` set."""
    if not cohort.static or not hasattr(cohort.static[0], flag):
        raise FairnessError(f"static records have no {flag!r} flag")
    idx = [i for i, r in enumerate(cohort.static) if getattr(r, flag)]
    if not idx:
        raise FairnessError(f"no stays carry the {flag!r} flag; slice is empty")
    return cohort.subset(idx)


def write_report_json(report: FairnessReport, path, extra: dict | None = None) -> None:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
