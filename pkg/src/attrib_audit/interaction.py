"""Global rank aggregation, cross-method overlap and group feature importance."""

from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .attribution import AttributionResult
from .data.records import PROTECTED_ATTRIBUTES
from .fairness import ProtectedGrouping, pearson
from .roar import rank_cells


class InteractionError(ValueError):
    pass


def _score_batch(results) -> np.ndarray:
    if isinstance(results, AttributionResult):
        return results.scores
    if isinstance(results, Sequence) and results and isinstance(results[0], AttributionResult):
        methods = {r.method for r in results}
        if len(methods) > 1:
            raise InteractionError(f"results mix methods {sorted(methods)}")
        return np.concatenate([r.scores for r in results])
    return np.asarray(results, dtype=float)


def _per_feature(values: np.ndarray) -> np.ndarray:
    """Collapse a per-cell array ``(n, T, F)`` to ``(n, F)`` by averaging over time."""
    return values.mean(axis=1) if values.ndim == 3 else values


@dataclass(frozen=True)
class GlobalRanking:
    mean_rank: np.ndarray
    order: np.ndarray

    def position(self) -> np.ndarray:
        """1-based global position of every feature."""
        pos = np.empty_like(self.order)
        pos[self.order] = np.arange(1, self.order.size + 1)
        return pos


def global_rank_aggregate(results) -> GlobalRanking:
    """Average per-sample ranks (1 = most important) over samples and timesteps.

    Per-sample ranks are ordinal with ties broken by cell index; the global
    order sorts mean ranks ascending with ties broken by feature index.
    """
    scores = _score_batch(results)
    if scores.size == 0 or scores.shape[0] == 0:
        raise InteractionError("no attribution results to aggregate")
    n = scores.shape[0]
    order = rank_cells(scores.reshape(n, -1))
    ranks = np.empty_like(order)
    ranks[np.arange(n)[:, None], order] = np.arange(1, order.shape[1] + 1)
    mean = _per_feature(ranks.reshape(scores.shape).astype(float)).mean(axis=0)
    return GlobalRanking(mean_rank=mean, order=np.argsort(mean, kind="stable"))


def jaccard_topk(order1, order2, k: int) -> float:
    if k <= 0:
        raise InteractionError("k must be positive")
    o1, o2 = np.asarray(order1), np.asarray(order2)
    if k > min(o1.size, o2.size):
        raise InteractionError(f"k={k} exceeds the number of ranked features")
    a, b = set(o1[:k].tolist()), set(o2[:k].tolist())
    return len(a & b) / len(a | b)


def jaccard_matrix(orders: Mapping[str, np.ndarray], k: int) -> tuple[list[str], np.ndarray]:
    names = list(orders)
    mat = np.array([[jaccard_topk(orders[a], orders[b], k) for b in names] for a in names])
    return names, mat


@dataclass(frozen=True)
class GroupImportance:
    attribute: str
    groups: tuple[str, ...]
    group_sizes: tuple[int, ...]
    values: np.ndarray  # (groups, features): mean local importance over group members
    ranks: np.ndarray  # (groups, features): 1 = most important feature within the group

    def value(self, group: str, feature: int) -> float:
        return float(self.values[self.groups.index(group), feature])

    def rank(self, group: str, feature: int) -> int:
        return int(self.ranks[self.groups.index(group), feature])


def _descending_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(-values, axis=-1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, values.shape[-1] + 1)[None, :], axis=-1)
    return ranks


def group_feature_importance(results, grouping: ProtectedGrouping) -> GroupImportance:
    """Per-group mean of timestep-averaged local importance, with within-group ranks.

    Groups of the vocabulary that have no members are left out.
    """
    phi = _per_feature(_score_batch(results))
    if phi.shape[0] != len(grouping.labels):
        raise InteractionError(f"{phi.shape[0]} attributions but {len(grouping.labels)} grouped samples")
    groups, sizes, rows = [], [], []
    for group in grouping.vocabulary:
        m = grouping.members(group)
        if not m.any():
            continue
        groups.append(group)
        sizes.append(int(m.sum()))
        rows.append(phi[m].mean(axis=0))
    if not groups:
        raise InteractionError("grouping has no members")
    values = np.stack(rows)
    return GroupImportance(grouping.attribute, tuple(groups), tuple(sizes), values, _descending_ranks(values))


def pooled_importance(results) -> np.ndarray:
    """Mean timestep-averaged importance over all samples."""
    return _per_feature(_score_batch(results)).mean(axis=0)


def protected_feature_importance(results, feature_names: Sequence[str]) -> dict[str, float]:
    """Mean importance of each embedded protected-attribute feature across time and patients."""
    phi = _per_feature(_score_batch(results)).mean(axis=0)
    return {a: float(phi[list(feature_names).index(a)]) for a in PROTECTED_ATTRIBUTES if a in feature_names}


@dataclass(frozen=True)
class ImportanceFairnessTable:
    rows: tuple[tuple[str, float, float], ...]  # (attribute, importance, auc_min)
    pearson_r: float
    p_value: float


def importance_vs_fairness(importance: Mapping[str, float], auc_min: Mapping[str, float]) -> ImportanceFairnessTable:
    attrs = [a for a in importance if a in auc_min]
    if len(attrs) < 3:
        raise InteractionError("need at least 3 attributes with both importance and auc_min")
    rows = tuple((a, float(importance[a]), float(auc_min[a])) for a in attrs)
    r, p = pearson([r[1] for r in rows], [r[2] for r in rows])
    return ImportanceFairnessTable(rows, r, p)


def write_global_ranking_csv(ranking: GlobalRanking, path, feature_names=None) -> None:
    pos = ranking.position()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "mean_rank", "global_order"])
        for j in ranking.order:
            name = feature_names[j] if feature_names is not None else int(j)
            w.writerow([name, repr(float(ranking.mean_rank[j])), int(pos[j])])


def write_jaccard_csv(names: Sequence[str], matrix: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(names))
        for name, row in zip(names, matrix):
            w.writerow([name] + [repr(float(v)) for v in row])


def write_group_importance_csv(tables: Sequence[GroupImportance], path, feature_names=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "group", "feature", "g_value", "rank"])
        for tab in tables:
            for gi, group in enumerate(tab.groups):
                for j in range(tab.values.shape[1]):
                    name = feature_names[j] if feature_names is not None else j
                    w.writerow([tab.attribute, group, name, repr(float(tab.values[gi, j])), int(tab.ranks[gi, j])])
