"""End-to-end runs driven by a config file, with a manifest of every output."""

from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .attribution import AttributionResult, attribute, write_attribution_csv
from .config import PipelineConfig, load_config
from .data.io import load_cohort, save_cohort
from .data.preprocess import split, summarize_tabular
from .data.records import Cohort, SplitIndices
from .data.synthetic import generate_synthetic_cohort
from .fairness import (
    FairnessError,
    comorbidity_slice,
    group_auc_report,
    mortality_auc_correlation,
    pooled_summary,
    stratify,
    treatment_disparity,
    write_report_json,
    write_treatment_csv,
)
from .interaction import (
    InteractionError,
    global_rank_aggregate,
    group_feature_importance,
    importance_vs_fairness,
    jaccard_matrix,
    protected_feature_importance,
    write_global_ranking_csv,
    write_group_importance_csv,
    write_jaccard_csv,
)
from .models import evaluate, save_model, train
from .roar import roar_curves, write_curve_csv, write_summary_csv

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    versions: dict[str, str]
    stage_seeds: dict[str, int]
    stages: list[dict] = field(default_factory=list)
    outputs: list[dict] = field(default_factory=list)
    created: float = 0.0

    @property
    def stage_names(self) -> list[str]:
        return [s["name"] for s in self.stages]

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "versions": self.versions,
            "stage_seeds": self.stage_seeds,
            "stages": self.stages,
            "outputs": self.outputs,
            "created": self.created,
        }


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_atomic_json(path, doc) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    write_json(tmp, doc)
    os.replace(tmp, path)


def versions() -> dict[str, str]:
    return {
        "attrib_audit": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def model_inputs(cohort: Cohort, kind: str) -> tuple[np.ndarray, tuple[str, ...]]:
    """Model input tensor and its last-axis names for ``sequential`` or ``tabular`` input."""
    if kind == "tabular":
        tab = summarize_tabular(cohort)
        return tab.Xs, tab.column_names
    return cohort.X, cohort.feature_names


def informative_columns(cohort: Cohort, names) -> set[int] | None:
    """Planted feature indices translated to the columns of the model input."""
    if cohort.ground_truth_informative is None:
        return None
    planted = {cohort.feature_names[j] for j in cohort.ground_truth_informative}
    return {i for i, n in enumerate(names) if n.split("__", 1)[0] in planted}


def write_splits(splits: SplitIndices, path) -> None:
    write_json(path, {k: getattr(splits, k).tolist() for k in ("train", "val", "test")})


def read_splits(path) -> SplitIndices:
    doc = json.loads(Path(path).read_text())
    return SplitIndices(*(np.asarray(doc[k], dtype=np.int64) for k in ("train", "val", "test")))


def method_options(method: str, raw: dict) -> dict:
    """Translate flat ``[attribute]`` keys to keyword arguments of one method."""
    opts = {}
    if "ig_steps" in raw and method == "integrated_gradients":
        opts["steps"] = int(raw["ig_steps"])
    if "n_samples" in raw and method in ("gradient_shap", "smoothgrad_saliency"):
        opts["n_samples"] = int(raw["n_samples"])
    if "noise_sd" in raw and method in ("gradient_shap", "smoothgrad_saliency"):
        opts["noise_sd"] = float(raw["noise_sd"])
    if "n_permutations" in raw and method == "shapley_sampling":
        opts["n_permutations"] = int(raw["n_permutations"])
    if "window" in raw and method == "occlusion":
        opts["window"] = tuple(int(v) for v in str(raw["window"]).split("x"))
    return opts


class _Run:
    def __init__(self, cfg: PipelineConfig, flat: bool = False):
        self.cfg = cfg
        # flat: a single stage writes straight into the output directory
        self.flat = flat
        self.out = cfg.output_dir
        self.cohort: Cohort | None = None
        self.splits: SplitIndices | None = None
        self.model = None
        self.X = None
        self.names = None
        self.attributions: dict[str, AttributionResult] = {}
        self.attributed_idx = None
        self.auc_min: dict[str, float] = {}

    def path(self, *parts) -> Path:
        p = self.out.joinpath(*(parts[1:] if self.flat else parts))
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def _set_cohort(self, cohort: Cohort) -> list[Path]:
        self.cohort = cohort
        self.splits = split(cohort.n_samples, self.cfg.stage_seed("data"))
        files = save_cohort(cohort, self.out / "cohort")
        p = self.path("cohort", "splits.json")
        write_splits(self.splits, p)
        return files + [p]

    def generate(self):
        cohort = generate_synthetic_cohort(self.cfg.generator, self.cfg.stage_seed("data"))
        return self._set_cohort(cohort)

    def ingest(self):
        ing = self.cfg.ingest
        cohort = load_cohort(
            ing["events"],
            ing["static"],
            seed=self.cfg.stage_seed("data"),
            n_timesteps=ing["n_timesteps"],
            include_static=ing["include_static"],
        )
        return self._set_cohort(cohort)

    def train(self):
        self.X, self.names = model_inputs(self.cohort, self.cfg.model_input)
        s, y = self.splits, self.cohort.y
        self.model = train(self.cfg.model_kind, self.X[s.train], y[s.train], self.cfg.train, self.X[s.val], y[s.val])
        p = self.path("model.json")
        save_model(self.model, p)
        return [p]

    def evaluate(self):
        s, y = self.splits, self.cohort.y
        doc = {
            "model": self.cfg.model_kind,
            "input": self.cfg.model_input,
            "score_target": "logit",
            "val": evaluate(self.model, self.X[s.val], y[s.val]),
            "test": evaluate(self.model, self.X[s.test], y[s.test]),
        }
        p = self.path("metrics.json")
        write_json(p, doc)
        return [p]

    def attribute(self):
        idx = self.splits.test if self.cfg.attribute_samples == "test" else np.arange(self.cohort.n_samples)
        idx = idx[: self.cfg.attribute_max_samples]
        self.attributed_idx = idx
        seed = self.cfg.stage_seed("attribute")
        files = []
        for method in self.cfg.attribute_methods:
            opts = method_options(method, self.cfg.method_options)
            res = attribute(method, self.model, self.X[idx], seed=seed, sample_ids=idx, **opts)
            self.attributions[method] = res
            p = self.path("attributions", f"{method}.csv")
            write_attribution_csv(res, p, self.names)
            files.append(p)
        return files

    def roar(self):
        informative = None
        if "oracle" in self.cfg.roar_methods:
            informative = informative_columns(self.cohort, self.names)
        opts = {m: method_options(m, self.cfg.method_options) for m in self.cfg.roar_methods}
        curves = roar_curves(
            self.cfg.model_kind,
            self.X,
            self.cohort.y,
            self.splits,
            self.cfg.train,
            self.cfg.roar_methods,
            seed=self.cfg.stage_seed("roar"),
            ratios=self.cfg.roar_ratios,
            informative=informative,
            method_options=opts,
        )
        files = []
        for method, curve in curves.items():
            p = self.path("roar", f"{method}.csv")
            write_curve_csv(curve, p)
            files.append(p)
        p = self.path("roar", "summary.csv")
        write_summary_csv(list(curves.values()), p)
        return files + [p]

    def _audit(self, cohort: Cohort, splits: SplitIndices, X, prefix: tuple[str, ...]):
        files, reports = [], []
        scores = self.model.logit(X[splits.test])
        y_test = cohort.y[splits.test]
        y_train = cohort.y[splits.train]
        for attr in self.cfg.fairness_attributes:
            grouping = stratify(cohort, attr)
            g_train = grouping.subset(splits.train)
            counts = g_train.sizes()
            rates = {g: float(y_train[g_train.members(g)].mean()) for g, n in counts.items() if n}
            try:
                rep = group_auc_report(scores, y_test, grouping.subset(splits.test), counts, rates)
            except FairnessError as exc:
                p = self.path(*prefix, f"{attr}.json")
                write_json(p, {"attribute": attr, "error": str(exc)})
                files.append(p)
                continue
            reports.append(rep)
            p = self.path(*prefix, f"{attr}.json")
            write_report_json(rep, p)
            files.append(p)
        summary = {"score_target": "logit", "treatment_duration_denominator": "treated group members"}
        if reports:
            summary["pooled"] = pooled_summary(reports)
            try:
                r, pval = mortality_auc_correlation(reports)
                summary["mortality_auc_pearson"] = {"r": r, "p_value": pval}
            except FairnessError as exc:
                summary["mortality_auc_pearson"] = {"error": str(exc)}
        p = self.path(*prefix, "summary.json")
        write_json(p, summary)
        return files + [p], reports

    def fairness(self):
        files, reports = self._audit(self.cohort, self.splits, self.X, ("fairness",))
        self.auc_min = {r.attribute: r.auc_min for r in reports}
        rows = []
        for attr in self.cfg.fairness_attributes:
            rows.extend(treatment_disparity(self.cohort, stratify(self.cohort, attr)))
        p = self.path("fairness", "treatment.csv")
        write_treatment_csv(rows, p)
        files.append(p)
        flag = self.cfg.comorbidity_flag
        if flag:
            try:
                idx = np.array([i for i, r in enumerate(self.cohort.static) if getattr(r, flag)], dtype=np.int64)
                sub = comorbidity_slice(self.cohort, flag)
                pos = {int(i): k for k, i in enumerate(idx)}
                sub_splits = SplitIndices(
                    *(np.array([pos[int(i)] for i in part if int(i) in pos], dtype=np.int64)
                      for part in (self.splits.train, self.splits.val, self.splits.test))
                )
                more, _ = self._audit(sub, sub_splits, self.X[idx], ("fairness", flag))
                files.extend(more)
            except FairnessError as exc:
                p = self.path("fairness", flag, "summary.json")
                write_json(p, {"error": str(exc)})
                files.append(p)
        return files

    def interaction(self):
        files = []
        orders = {}
        for method, res in self.attributions.items():
            ranking = global_rank_aggregate(res)
            orders[method] = ranking.order
            p = self.path("interaction", f"global_ranking_{method}.csv")
            write_global_ranking_csv(ranking, p, self.names)
            files.append(p)
        k = min(self.cfg.top_k, len(self.names))
        names, mat = jaccard_matrix(orders, k)
        p = self.path("interaction", "jaccard.csv")
        write_jaccard_csv(names, mat, p)
        files.append(p)

        attrs = self.cfg.fairness_attributes or ()
        summary = {"top_k": k}
        for method, res in self.attributions.items():
            tables = []
            for attr in attrs:
                grouping = stratify(self.cohort, attr).subset(self.attributed_idx)
                tables.append(group_feature_importance(res, grouping))
            if tables:
                p = self.path("interaction", f"group_importance_{method}.csv")
                write_group_importance_csv(tables, p, self.names)
                files.append(p)
            if self.auc_min:
                imp = protected_feature_importance(res, self.names)
                try:
                    table = importance_vs_fairness(imp, self.auc_min)
                    summary[method] = {
                        "rows": [{"attribute": a, "importance": i, "auc_min": m} for a, i, m in table.rows],
                        "pearson_r": table.pearson_r,
                        "p_value": table.p_value,
                    }
                except (InteractionError, FairnessError) as exc:
                    summary[method] = {"error": str(exc)}
        p = self.path("interaction", "importance_vs_fairness.json")
        write_json(p, summary)
        files.append(p)
        return files


def run_pipeline(config_path, seed: int | None = None) -> RunManifest:
    """Run every configured stage in dependency order and write ``manifest.json``.

    Each stage's files are complete on disk before the next stage starts. The
    manifest is replaced atomically once all stages have finished.
    """
    cfg = config_path if isinstance(config_path, PipelineConfig) else load_config(config_path, seed_override=seed)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    stage_seeds = {name: cfg.stage_seed(name) for name in ("data",) + cfg.stages if name not in ("generate", "ingest")}
    manifest = RunManifest(cfg.config_hash, cfg.seed, versions(), stage_seeds)
    run = _Run(cfg)
    for stage in cfg.stages:
        t0 = time.perf_counter()
        files = getattr(run, stage)()
        elapsed = time.perf_counter() - t0
        rel = [str(Path(f).relative_to(cfg.output_dir)) for f in files]
        manifest.stages.append({"name": stage, "seconds": elapsed, "outputs": rel})
        for f, r in zip(files, rel):
            manifest.outputs.append({"path": r, "sha256": file_sha256(f), "bytes": Path(f).stat().st_size})
    manifest.created = time.time()
    write_atomic_json(cfg.output_dir / MANIFEST_NAME, manifest.to_dict())
    return manifest
