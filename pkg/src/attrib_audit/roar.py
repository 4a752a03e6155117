"""Remove-and-retrain evaluation of importance rankings."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .attribution import AttributionResult, attribute
from .data.records import SplitIndices
from .metrics import auprc, auroc
from .models import PredictiveModel, TrainConfig, TrainingError, train

RATIOS = tuple(round(0.1 * i, 1) for i in range(11))


class RoarError(RuntimeError):
    pass


def curve_auc(ratios, values) -> float:
    """Trapezoidal area under a performance-vs-drop-ratio curve."""
    r = np.asarray(ratios, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.size < 2 or r.shape != v.shape:
        raise ValueError("curve_auc needs at least two (ratio, value) points")
    if np.any(np.diff(r) <= 0):
        raise ValueError("ratios must be strictly ascending")
    return float(np.sum(np.diff(r) * (v[1:] + v[:-1]) / 2.0))


@dataclass(frozen=True)
class DegradationCurve:
    ratios: tuple[float, ...]
    auprc_values: tuple[float, ...]
    auroc_values: tuple[float, ...]
    method: str
    model_kind: str

    @property
    def curve_auc_auprc(self) -> float:
        return curve_auc(self.ratios, self.auprc_values)

    @property
    def curve_auc_auroc(self) -> float:
        return curve_auc(self.ratios, self.auroc_values)


def rank_cells(result) -> np.ndarray:
    """Per-sample order of flattened cells, most important first.

    Ties keep ascending cell index. Accepts an AttributionResult, a batch of
    score arrays, or a single 1-D score vector.
    """
    scores = result.scores if isinstance(result, AttributionResult) else np.asarray(result, dtype=float)
    single = scores.ndim == 1
    flat = scores.reshape(1, -1) if single else scores.reshape(scores.shape[0], -1)
    if not np.all(np.isfinite(flat)):
        raise ValueError("cannot rank non-finite scores")
    order = np.argsort(-np.abs(flat), axis=1, kind="stable")
    return order[0] if single else order


def oracle_ranking(informative, input_shape, n_samples: int, seed: int = 0) -> np.ndarray:
    """Cells of the planted informative features first, the rest in seeded random order."""
    shape = tuple(input_shape)
    d = int(np.prod(shape))
    is_inf = np.zeros(shape, dtype=bool)
    is_inf[..., sorted(informative)] = True
    flat = is_inf.ravel()
    top = np.flatnonzero(flat)
    rest = np.flatnonzero(~flat)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, d])
    return np.stack([np.concatenate([top, rng.permutation(rest)]) for _ in range(n_samples)])


def cells_to_drop(ratio: float, d: int) -> int:
    # rounding guards against 0.1 * 1200 = 120.00000000000001
    return int(math.ceil(round(ratio * d, 9)))


def ablation_fill(X_train: np.ndarray) -> np.ndarray:
    """Uninformative value per cell: the feature's training mean (over samples and time)."""
    X_train = np.asarray(X_train, dtype=float)
    axes = tuple(range(X_train.ndim - 1))
    return np.broadcast_to(X_train.mean(axis=axes), X_train.shape[1:]).copy()


def ablate(X, rankings, ratio: float, fill) -> np.ndarray:
    """Copy of ``X`` with each sample's top ``ceil(ratio * d)`` cells set to ``fill``."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    X = np.asarray(X.X if hasattr(X, "X") else X, dtype=float)
    n = X.shape[0]
    d = int(np.prod(X.shape[1:]))
    rankings = np.asarray(rankings)
    if rankings.shape[0] != n:
        raise RoarError(f"rankings cover {rankings.shape[0]} samples but the data has {n}")
    if rankings.shape[1:] != (d,):
        raise RoarError("each ranking must order all flattened cells")
    k = cells_to_drop(ratio, d)
    out = X.reshape(n, d).copy()
    if k:
        cols = rankings[:, :k]
        out[np.arange(n)[:, None], cols] = np.asarray(fill, dtype=float).ravel()[cols]
    return out.reshape(X.shape)


def retrain_seed(base_seed: int, ratio_index: int) -> int:
    return (int(base_seed) ^ (0x9E3779B9 * (ratio_index + 1))) & 0xFFFFFFFF


def _fit_and_score(kind, X, y, splits, config, label):
    try:
        model = train(kind, X[splits.train], y[splits.train], config, X[splits.val], y[splits.val])
    except TrainingError as exc:
        raise RoarError(f"{label}: {exc}") from exc
    scores = model.logit(X[splits.test])
    return model, auprc(scores, y[splits.test]), auroc(scores, y[splits.test])


def compute_rankings(method: str, model: PredictiveModel, X, seed: int = 0, informative=None, **options):
    if method == "oracle":
        if informative is None:
            raise RoarError("oracle ranking needs the planted informative feature set")
        return oracle_ranking(informative, model.input_shape, X.shape[0], seed)
    return rank_cells(attribute(method, model, X, seed=seed, **options))


def roar_curves(
    kind: str,
    X,
    y,
    splits: SplitIndices,
    config: TrainConfig,
    methods,
    seed: int = 0,
    ratios=RATIOS,
    informative=None,
    rankings: dict | None = None,
    method_options: dict | None = None,
) -> dict[str, DegradationCurve]:
    """Run ROAR for several ranking methods sharing one unablated baseline model.

    The baseline model (trained with ``config.seed``) supplies the ratio-0
    point and the attributions. For every other ratio the train, validation
    and test sets are ablated with the same rule and a fresh model is trained
    with a seed derived from ``(config.seed, ratio index)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    ratios = tuple(float(r) for r in ratios)
    if ratios[0] != 0.0:
        raise ValueError("ratios must start at 0.0")
    base_model, base_pr, base_roc = _fit_and_score(kind, X, y, splits, config, "ratio 0.0")
    fill = ablation_fill(X[splits.train])
    method_options = method_options or {}
    rankings = dict(rankings or {})

    curves = {}
    for method in methods:
        if method not in rankings:
            rankings[method] = compute_rankings(
                method, base_model, X, seed=seed, informative=informative, **method_options.get(method, {})
            )
        pr, roc = [base_pr], [base_roc]
        for idx, ratio in enumerate(ratios[1:], start=1):
            Xa = ablate(X, rankings[method], ratio, fill)
            cfg = TrainConfig(**{**config.__dict__, "seed": retrain_seed(config.seed, idx)})
            _, a_pr, a_roc = _fit_and_score(kind, Xa, y, splits, cfg, f"method {method}, ratio {ratio}")
            pr.append(a_pr)
            roc.append(a_roc)
        curves[method] = DegradationCurve(ratios, tuple(pr), tuple(roc), method, kind)
    return curves


def roar_curve(kind, X, y, splits, config, method, seed=0, **kwargs) -> DegradationCurve:
    return roar_curves(kind, X, y, splits, config, [method], seed=seed, **kwargs)[method]


def write_curve_csv(curve: DegradationCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ratio", "auprc", "auroc"])
        for r, pr, roc in zip(curve.ratios, curve.auprc_values, curve.auroc_values):
            w.writerow([repr(r), repr(pr), repr(roc)])


def write_summary_csv(curves, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "model", "curve_auc_auprc", "curve_auc_auroc"])
        for c in curves:
            w.writerow([c.method, c.model_kind, repr(c.curve_auc_auprc), repr(c.curve_auc_auroc)])
