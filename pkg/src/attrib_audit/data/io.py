"""CSV ingestion of event/static files and on-disk cohort storage."""

from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .preprocess import compute_train_means, filter_cohort, impute, split, truncate_and_aggregate
from .records import (
    TREATMENT_TYPES,
    UNCLEAR_VALUES,
    VOCABULARIES,
    Cohort,
    EventRecord,
    StaticRecord,
)

EVENT_COLUMNS = ("stay_id", "hour", "feature", "value")
STATIC_COLUMNS = (
    "stay_id",
    "age",
    "gender",
    "ethnicity",
    "marital_status",
    "insurance",
    "label",
    "treatment_type",
    "treatment_spans",
)
OPTIONAL_STATIC_COLUMNS = ("hem_mets", "first_stay", "los_hours")
CATEGORICAL = ("gender", "ethnicity", "marital_status", "insurance")
_ALIASES = {"gender": {"M": "MALE", "F": "FEMALE"}}
FORMAT_VERSION = 1


class SchemaError(ValueError):
    def __init__(self, path, line: int, column: str | None, message: str):
        self.path, self.line, self.column = str(path), line, column
        where = f"{path}:{line}" + (f" [{column}]" if column else "")
        super().__init__(f"{where}: {message}")


def _open_reader(path: Path, required: tuple[str, ...]):
    fh = open(path, newline="")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    for col in required:
        if col not in header:
            fh.close()
            raise SchemaError(path, 1, col, f"missing required column {col!r}")
    return fh, reader


def _parse_float(path, line, column, raw: str) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise SchemaError(path, line, column, f"not a number: {raw!r}") from None
    if not math.isfinite(v):
        raise SchemaError(path, line, column, f"non-finite value: {raw!r}")
    return v


def _parse_bool(path, line, column, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no", ""):
        return False
    raise SchemaError(path, line, column, f"not a boolean: {raw!r}")


def read_static_csv(path) -> tuple[list[StaticRecord], dict[str, float], set[str]]:
    """Parse the static file.

    Returns ``(records, los_hours, unclear_ids)``: records with any unclear
    protected attribute are reported in ``unclear_ids`` and left out of
    ``records``; ``los_hours`` holds the optional length-of-stay column.
    """
    path = Path(path)
    rows: OrderedDict[str, dict] = OrderedDict()
    los: dict[str, float] = {}
    unclear: set[str] = set()
    fh, reader = _open_reader(path, STATIC_COLUMNS)
    with fh:
        for line, row in enumerate(reader, start=2):
            sid = (row["stay_id"] or "").strip()
            if not sid:
                raise SchemaError(path, line, "stay_id", "empty stay_id")
            demo = {}
            is_unclear = False
            for col in CATEGORICAL:
                raw = (row[col] or "").strip().upper()
                raw = _ALIASES.get(col, {}).get(raw, raw)
                if raw in UNCLEAR_VALUES:
                    is_unclear = True
                elif raw not in VOCABULARIES[col]:
                    raise SchemaError(path, line, col, f"unknown category {raw!r}")
                demo[col] = raw
            demo["age"] = _parse_float(path, line, "age", row["age"])
            if demo["age"] <= 0:
                raise SchemaError(path, line, "age", "age must be positive")
            label_raw = (row["label"] or "").strip()
            if label_raw not in ("0", "1"):
                raise SchemaError(path, line, "label", f"label must be 0 or 1, got {label_raw!r}")
            demo["label"] = int(label_raw)
            demo["hem_mets"] = _parse_bool(path, line, "hem_mets", row.get("hem_mets") or "")
            first = row.get("first_stay")
            demo["first_stay"] = True if first in (None, "") else _parse_bool(path, line, "first_stay", first)

            entry = rows.get(sid)
            if entry is None:
                entry = rows[sid] = {"demo": demo, "treatments": [], "line": line}
            elif entry["demo"] != demo:
                raise SchemaError(path, line, None, f"stay {sid}: static fields disagree with line {entry['line']}")
            if is_unclear:
                unclear.add(sid)

            ttype = (row["treatment_type"] or "").strip()
            spans_raw = (row["treatment_spans"] or "").strip()
            if ttype:
                if ttype not in TREATMENT_TYPES:
                    raise SchemaError(path, line, "treatment_type", f"unknown treatment {ttype!r}")
                spans = tuple(
                    _parse_float(path, line, "treatment_spans", s) for s in spans_raw.split(";") if s.strip()
                )
                if not spans or any(s <= 0 for s in spans):
                    raise SchemaError(path, line, "treatment_spans", "spans must be positive decimals")
                entry["treatments"].append((ttype, spans))
            elif spans_raw:
                raise SchemaError(path, line, "treatment_spans", "spans given without treatment_type")

            if row.get("los_hours") not in (None, ""):
                los[sid] = _parse_float(path, line, "los_hours", row["los_hours"])

    records = [
        StaticRecord(stay_id=sid, treatments=tuple(e["treatments"]), **e["demo"])
        for sid, e in rows.items()
        if sid not in unclear
    ]
    return records, los, unclear


def read_events_csv(path, known_ids: set[str]) -> list[EventRecord]:
    path = Path(path)
    events = []
    fh, reader = _open_reader(path, EVENT_COLUMNS)
    with fh:
        for line, row in enumerate(reader, start=2):
            sid = (row["stay_id"] or "").strip()
            if sid not in known_ids:
                raise SchemaError(path, line, "stay_id", f"unknown stay_id {sid!r}")
            feature = (row["feature"] or "").strip()
            if not feature:
                raise SchemaError(path, line, "feature", "empty feature name")
            hour = _parse_float(path, line, "hour", row["hour"])
            value = _parse_float(path, line, "value", row["value"])
            events.append(EventRecord(sid, hour, feature, value))
    return events


def load_cohort(events_path, static_path, seed: int = 0, n_timesteps: int = 24, include_static: bool = True) -> Cohort:
    """Read the CSV pair and run filter -> truncate/aggregate -> impute.

    Imputation means come from the training part of ``split(N, seed)``; use the
    same seed when splitting the returned cohort.
    """
    records, los, unclear = read_static_csv(static_path)
    events = read_events_csv(events_path, {r.stay_id for r in records} | unclear)
    events = [e for e in events if e.stay_id not in unclear]

    first: dict[str, float] = {}
    last: dict[str, float] = {}
    features: list[str] = []
    seen = set()
    for e in events:
        first[e.stay_id] = min(first.get(e.stay_id, e.time), e.time)
        last[e.stay_id] = max(last.get(e.stay_id, e.time), e.time)
        if e.feature not in seen:
            seen.add(e.feature)
            features.append(e.feature)
    durations = {sid: last[sid] - first[sid] for sid in first}
    durations.update({sid: h for sid, h in los.items() if sid in first})

    kept = set(filter_cohort(records, durations))
    records = [r for r in records if r.stay_id in kept]
    if len(records) < 10:
        raise ValueError(f"only {len(records)} stays survive filtering; need at least 10")
    ids = [r.stay_id for r in records]

    grid, mask = truncate_and_aggregate(events, ids, features, n_timesteps)
    means = compute_train_means(grid, mask, split(len(ids), seed).train)
    X = impute(grid, mask, means)

    # categorical codes in order of first appearance
    codes = {col: {} for col in CATEGORICAL}
    for r in records:
        for col in CATEGORICAL:
            codes[col].setdefault(getattr(r, col), len(codes[col]))
    names = list(features)
    n_static = 0
    if include_static:
        cols = [[r.age for r in records]] + [[codes[c][getattr(r, c)] for r in records] for c in CATEGORICAL]
        block = np.asarray(cols, dtype=float).T
        X = np.concatenate([X, np.broadcast_to(block[:, None, :], (len(ids), n_timesteps, block.shape[1]))], axis=2)
        mask = np.concatenate([mask, np.ones((len(ids), n_timesteps, block.shape[1]), dtype=bool)], axis=2)
        names += ["age", *CATEGORICAL]
        n_static = block.shape[1]

    return Cohort(
        X=X,
        y=np.array([r.label for r in records]),
        feature_names=tuple(names),
        static=tuple(records),
        mask=mask,
        n_static=n_static,
        categorical_codes=codes,
    )


def _static_rows(records):
    for r in records:
        base = [r.stay_id, repr(r.age), r.gender, r.ethnicity, r.marital_status, r.insurance, str(r.label)]
        tail = ["1" if r.hem_mets else "0", "1" if r.first_stay else "0"]
        if not r.treatments:
            yield base + ["", ""] + tail
        for ttype, spans in r.treatments:
            yield base + [ttype, ";".join(repr(s) for s in spans)] + tail


def write_static_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATIC_COLUMNS + ("hem_mets", "first_stay"))
        w.writerows(_static_rows(records))


def write_events_csv(cohort: Cohort, path) -> None:
    """Export observed temporal cells as ``stay_id,hour,feature,value`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for i, rec in enumerate(cohort.static):
            for t in range(cohort.n_timesteps):
                for j in range(cohort.n_temporal):
                    if cohort.mask[i, t, j]:
                        w.writerow([rec.stay_id, f"{t}.0", cohort.feature_names[j], repr(float(cohort.X[i, t, j]))])


def save_cohort(cohort: Cohort, directory) -> list[Path]:
    """Write a cohort directory; every file is a deterministic function of the cohort."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for name, arr in (("X", cohort.X), ("y", cohort.y), ("mask", cohort.mask), ("oracle_logit", cohort.oracle_logit)):
        if arr is None:
            continue
        p = d / f"{name}.npy"
        np.save(p, np.ascontiguousarray(arr))
        files.append(p)
    p = d / "static.csv"
    write_static_csv(cohort.static, p)
    files.append(p)
    meta = {
        "version": FORMAT_VERSION,
        "feature_names": list(cohort.feature_names),
        "n_static": cohort.n_static,
        "ground_truth_informative": (
            None if cohort.ground_truth_informative is None else sorted(cohort.ground_truth_informative)
        ),
        "categorical_codes": cohort.categorical_codes,
    }
    p = d / "meta.json"
    p.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    files.append(p)
    return files


def load_cohort_dir(directory) -> Cohort:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    if meta.get("version") != FORMAT_VERSION:
        raise ValueError(f"{d / 'meta.json'}: unsupported cohort format version {meta.get('version')!r}")
    records, _, unclear = read_static_csv(d / "static.csv")
    if unclear:
        raise ValueError(f"{d / 'static.csv'}: stored cohort contains unclear attributes")
    oracle = d / "oracle_logit.npy"
    gt = meta["ground_truth_informative"]
    return Cohort(
        X=np.load(d / "X.npy"),
        y=np.load(d / "y.npy"),
        feature_names=tuple(meta["feature_names"]),
        static=tuple(records),
        mask=np.load(d / "mask.npy"),
        n_static=meta["n_static"],
        ground_truth_informative=None if gt is None else frozenset(gt),
        oracle_logit=np.load(oracle) if oracle.exists() else None,
        categorical_codes=meta["categorical_codes"],
    )
