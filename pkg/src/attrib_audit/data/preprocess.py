"""Cohort filtering, hourly aggregation, imputation, tabular summary and splitting."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence

import numpy as np

from .records import Cohort, EventRecord, SplitIndices, StaticRecord, TabularSummary

MIN_AGE = 15.0
MIN_STAY_HOURS = 12.0
MAX_STAY_HOURS = 240.0


def filter_cohort(records: Iterable[StaticRecord], stay_durations: Mapping[str, float]) -> list[str]:
    """Return the stay ids passing the age, first-stay and length-of-stay criteria.

    Input order is preserved. Stays without a duration entry are dropped.
    """
    kept = []
    for rec in records:
        hours = stay_durations.get(rec.stay_id)
        if hours is None:
            continue
        if hours < 0:
            raise ValueError(f"stay {rec.stay_id}: negative duration {hours}")
        if rec.age >= MIN_AGE and rec.first_stay and MIN_STAY_HOURS <= hours <= MAX_STAY_HOURS:
            kept.append(rec.stay_id)
    return kept


def truncate_and_aggregate(
    events: Iterable[EventRecord],
    stay_ids: Sequence[str],
    feature_names: Sequence[str],
    n_timesteps: int = 24,
) -> tuple[np.ndarray, np.ndarray]:
    """Bin events hourly from each stay's first record and average within bins.

    Returns ``(grid, mask)`` of shape ``(len(stay_ids), n_timesteps, F)``; cells
    without any record hold NaN and are False in the mask. Bins are half-open
    ``[h, h+1)``; records at or past ``n_timesteps`` hours are dropped. Events
    for stays not listed in ``stay_ids`` are ignored.
    """
    stay_pos = {s: i for i, s in enumerate(stay_ids)}
    feat_pos = {f: j for j, f in enumerate(feature_names)}
    rows, cols, times, values = [], [], [], []
    for ev in events:
        i = stay_pos.get(ev.stay_id)
        if i is None:
            continue
        j = feat_pos.get(ev.feature)
        if j is None:
            raise ValueError(f"stay {ev.stay_id}: feature {ev.feature!r} not in the feature dictionary")
        if not (math.isfinite(ev.time) and math.isfinite(ev.value)):
            raise ValueError(f"stay {ev.stay_id}: non-finite event ({ev.feature}, t={ev.time}, v={ev.value})")
        rows.append(i)
        cols.append(j)
        times.append(ev.time)
        values.append(ev.value)

    n, F = len(stay_ids), len(feature_names)
    grid = np.full((n, n_timesteps, F), np.nan)
    mask = np.zeros((n, n_timesteps, F), dtype=bool)
    if not rows:
        return grid, mask

    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)

    first = np.full(n, np.inf)
    np.minimum.at(first, rows, times)
    bins = np.floor(times - first[rows]).astype(np.int64)
    keep = bins < n_timesteps
    rows, cols, bins, values = rows[keep], cols[keep], bins[keep], values[keep]

    # canonical order makes the floating-point sums independent of input order
    order = np.lexsort((values, bins, cols, rows))
    rows, cols, bins, values = rows[order], cols[order], bins[order], values[order]
    sums = np.zeros((n, n_timesteps, F))
    counts = np.zeros((n, n_timesteps, F))
    np.add.at(sums, (rows, bins, cols), values)
    np.add.at(counts, (rows, bins, cols), 1.0)
    mask = counts > 0
    grid[mask] = sums[mask] / counts[mask]
    return grid, mask


def compute_train_means(grid: np.ndarray, mask: np.ndarray, train_idx: np.ndarray) -> np.ndarray:
    """Per-feature mean of observed training cells; 0.0 for features never observed."""
    g = grid[train_idx]
    m = mask[train_idx]
    total = np.where(m, g, 0.0).sum(axis=(0, 1))
    count = m.sum(axis=(0, 1))
    with np.errstate(invalid="ignore", divide="ignore"):
        means = total / count
    return np.where(count > 0, means, 0.0)


def impute(grid: np.ndarray, mask: np.ndarray, train_means: np.ndarray) -> np.ndarray:
    """Forward-fill then backward-fill along time; fully missing series get the train mean.

    ``grid`` is ``(N, T, F)`` (or ``(T, F)`` for a single sample).
    """
    train_means = np.asarray(train_means, dtype=float)
    if not np.all(np.isfinite(train_means)):
        raise ValueError("train_means must be finite for every feature")
    single = grid.ndim == 2
    if single:
        grid, mask = grid[None], mask[None]
    out = np.where(mask, grid, np.nan)
    T = out.shape[1]
    t_idx = np.arange(T)[None, :, None]

    # forward fill: index of the last observed step at or before t
    last = np.where(mask, t_idx, -1)
    np.maximum.accumulate(last, axis=1, out=last)
    # backward fill: index of the next observed step at or after t
    nxt = np.where(mask, t_idx, T)
    nxt = np.flip(np.minimum.accumulate(np.flip(nxt, axis=1), axis=1), axis=1)

    src = np.where(last >= 0, last, nxt)
    has_any = src < T
    src = np.where(has_any, src, 0)
    filled = np.take_along_axis(out, src, axis=1)
    filled = np.where(has_any, filled, np.broadcast_to(train_means, filled.shape))
    return filled[0] if single else filled


def summarize_tabular(cohort: Cohort) -> TabularSummary:
    """Replace each temporal series by its min, max and mean; static columns appear once."""
    X = cohort.X
    n_temp = cohort.n_temporal
    blocks, names, prov = [], [], {}
    for j in range(n_temp):
        name = cohort.feature_names[j]
        series = X[:, :, j]
        for stat, col in (("min", series.min(axis=1)), ("max", series.max(axis=1)), ("mean", series.mean(axis=1))):
            cname = f"{name}__{stat}"
            blocks.append(col)
            names.append(cname)
            prov[cname] = (name, stat)
    for j in range(n_temp, cohort.n_features):
        name = cohort.feature_names[j]
        blocks.append(X[:, 0, j])
        names.append(name)
        prov[name] = (name, "static")
    Xs = np.stack(blocks, axis=1) if blocks else np.zeros((cohort.n_samples, 0))
    return TabularSummary(Xs=Xs, column_names=tuple(names), provenance=prov)


def split_sizes(n: int) -> tuple[int, int, int]:
    n_val = n * 20 // 100
    n_test = n * 20 // 100
    return n - n_val - n_test, n_val, n_test


def split(n_or_cohort, seed: int) -> SplitIndices:
    """Seeded 60/20/20 partition; val and test sizes are floored, train takes the rest."""
    n = n_or_cohort.n_samples if isinstance(n_or_cohort, Cohort) else int(n_or_cohort)
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    n_train, n_val, _ = split_sizes(n)
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndices(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val :]),
    )
