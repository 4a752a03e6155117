"""Command-line entry point: ``attrib-audit <subcommand> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attribution import ALL_METHODS, read_attribution_csv, write_attribution_csv, attribute
from .config import SEED_ENV, ConfigError, PipelineConfig, load_config
from .data.io import SchemaError, load_cohort, load_cohort_dir, save_cohort, write_events_csv, write_static_csv
from .data.preprocess import split
from .data.records import PROTECTED_ATTRIBUTES
from .data.synthetic import GeneratorConfig, generate_synthetic_cohort
from .models import MODEL_KINDS, CapabilityError, TrainConfig, TrainingError, evaluate, load_model, save_model, train
from .pipeline import (
    _Run,
    informative_columns,
    method_options,
    model_inputs,
    read_splits,
    run_pipeline,
    write_json,
    write_splits,
)
from .roar import roar_curves, write_curve_csv, write_summary_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _csv_list(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def resolve_seed(args, cfg: PipelineConfig | None = None) -> int:
    """``--seed`` beats ``ATTRIB_AUDIT_SEED`` beats the config's [run] seed; default 0."""
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError("run", "seed", f"{SEED_ENV}={env!r} is not an integer") from None
    return cfg.seed if cfg is not None else 0


def _partial_config(args) -> PipelineConfig | None:
    return None if args.config is None else load_config(args.config, partial=True)


def _load_cohort(path):
    d = Path(path)
    if not (d / "meta.json").exists():
        raise FileNotFoundError(f"{d} is not a cohort directory (no meta.json)")
    cohort = load_cohort_dir(d)
    return cohort, (read_splits(d / "splits.json") if (d / "splits.json").exists() else None)


def _splits_for(cohort, stored, seed):
    return stored if stored is not None else split(cohort.n_samples, seed)


def _input_kind(model) -> str:
    return "tabular" if len(model.input_shape) == 1 else "sequential"


def _train_config(args, cfg: PipelineConfig | None, seed: int) -> TrainConfig:
    base = cfg.train if cfg is not None and "train" in cfg.stages else TrainConfig()
    updates = {"seed": seed}
    for name in ("learning_rate", "epochs", "batch_size", "hidden"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    tc = replace(base, **updates)
    try:
        tc.validate()
    except ValueError as exc:
        raise ConfigError("train", None, str(exc)) from None
    return tc


def _model_choice(args, cfg):
    kind = args.model or (cfg.model_kind if cfg is not None and "train" in cfg.stages else "recurrent")
    inp = args.input or (
        cfg.model_input if cfg is not None and "train" in cfg.stages else ("sequential" if kind == "recurrent" else "tabular")
    )
    if kind == "recurrent" and inp != "sequential":
        raise ConfigError("train", "input", "recurrent model needs sequential input")
    return kind, inp


# -- subcommands -----------------------------------------------------------------


def cmd_generate(args) -> dict:
    cfg = _partial_config(args)
    seed = resolve_seed(args, cfg)
    gen = cfg.generator if cfg is not None and cfg.generator is not None else GeneratorConfig()
    updates = {
        k: getattr(args, k)
        for k in ("n_samples", "n_timesteps", "n_features", "n_informative", "missingness")
        if getattr(args, k) is not None
    }
    if args.include_static:
        updates["include_static"] = True
    gen = replace(gen, **updates)
    try:
        gen.validate()
    except ValueError as exc:
        raise ConfigError("generate", None, str(exc)) from None
    cohort = generate_synthetic_cohort(gen, seed)
    out = Path(args.out)
    if args.format == "csv":
        out.mkdir(parents=True, exist_ok=True)
        write_events_csv(cohort, out / "events.csv")
        write_static_csv(cohort.static, out / "static.csv")
        files = [out / "events.csv", out / "static.csv"]
    else:
        files = save_cohort(cohort, out)
        write_splits(split(cohort.n_samples, seed), out / "splits.json")
        files.append(out / "splits.json")
    return {"n_samples": cohort.n_samples, "positive_rate": float(cohort.y.mean()), "files": [str(f) for f in files]}


def cmd_preprocess(args) -> dict:
    cfg = _partial_config(args)
    seed = resolve_seed(args, cfg)
    n_steps = args.n_timesteps
    if n_steps is None:
        n_steps = cfg.ingest["n_timesteps"] if cfg is not None and cfg.ingest else 24
    cohort = load_cohort(args.events, args.static, seed=seed, n_timesteps=n_steps, include_static=not args.no_static)
    out = Path(args.out)
    files = save_cohort(cohort, out)
    write_splits(split(cohort.n_samples, seed), out / "splits.json")
    files.append(out / "splits.json")
    return {"n_samples": cohort.n_samples, "features": list(cohort.feature_names), "files": [str(f) for f in files]}


def cmd_train(args) -> dict:
    cfg = _partial_config(args)
    seed = resolve_seed(args, cfg)
    kind, inp = _model_choice(args, cfg)
    cohort, stored = _load_cohort(args.cohort)
    s = _splits_for(cohort, stored, seed)
    X, _ = model_inputs(cohort, inp)
    model = train(kind, X[s.train], cohort.y[s.train], _train_config(args, cfg, seed), X[s.val], cohort.y[s.val])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    return {"model": kind, "input": inp, "test": evaluate(model, X[s.test], cohort.y[s.test]), "file": str(out)}


def cmd_attribute(args) -> dict:
    cfg = _partial_config(args)
    seed = resolve_seed(args, cfg)
    cohort, stored = _load_cohort(args.cohort)
    model = load_model(args.model)
    X, names = model_inputs(cohort, _input_kind(model))
    s = _splits_for(cohort, stored, seed)
    idx = s.test if args.samples == "test" else np.arange(cohort.n_samples)
    idx = idx[: args.max_samples]
    methods = _csv_list(args.methods) if args.methods else list(cfg.attribute_methods if cfg else ())
    if not methods:
        raise ConfigError("attribute", "methods", "no attribution method given")
    raw_opts = cfg.method_options if cfg is not None else {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for method in methods:
        if method not in ALL_METHODS:
            raise ConfigError("attribute", "methods", f"unknown method {method!r}")
        res = attribute(method, model, X[idx], seed=seed, sample_ids=idx, **method_options(method, raw_opts))
        write_attribution_csv(res, out / f"{method}.csv", names)
        files.append(str(out / f"{method}.csv"))
    return {"n_samples": int(idx.size), "files": files}


def cmd_roar(args) -> dict:
    cfg = _partial_config(args)
    seed = resolve_seed(args, cfg)
    kind, inp = _model_choice(args, cfg)
    cohort, stored = _load_cohort(args.cohort)
    s = _splits_for(cohort, stored, seed)
    X, names = model_inputs(cohort, inp)
    methods = _csv_list(args.methods) if args.methods else list(cfg.roar_methods if cfg else ())
    if not methods:
        raise ConfigError("roar", "methods", "no ranking method given")
    for m in methods:
        if m not in ALL_METHODS + ("oracle",):
            raise ConfigError("roar", "methods", f"unknown method {m!r}")
    ratios = [float(r) for r in _csv_list(args.ratios)] if args.ratios else list(cfg.roar_ratios if cfg else [])
    informative = informative_columns(cohort, names) if "oracle" in methods else None
    if "oracle" in methods and informative is None:
        raise ConfigError("roar", "methods", "oracle ranking needs a generated cohort with planted features")
    kwargs = {"ratios": ratios} if ratios else {}
    raw_opts = cfg.method_options if cfg is not None else {}
    curves = roar_curves(
        kind, X, cohort.y, s, _train_config(args, cfg, seed), methods, seed=seed, informative=informative,
        method_options={m: method_options(m, raw_opts) for m in methods}, **kwargs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m, c in curves.items():
        write_curve_csv(c, out / f"{m}.csv")
    write_summary_csv(list(curves.values()), out / "summary.csv")
    return {m: {"curve_auc_auprc": c.curve_auc_auprc, "curve_auc_auroc": c.curve_auc_auroc} for m, c in curves.items()}


def _run_for(cohort, splits, model, out, attributes, flag=None, seed=0) -> _Run:
    pc = PipelineConfig(seed=seed, output_dir=Path(out), fairness_attributes=tuple(attributes), comorbidity_flag=flag)
    run = _Run(pc, flat=True)
    run.cohort, run.splits, run.model = cohort, splits, model
    run.X, run.names = model_inputs(cohort, _input_kind(model))
    return run


def cmd_fairness(args) -> dict:
    cfg = _partial_config(args)
    seed = resolve_seed(args, cfg)
    cohort, stored = _load_cohort(args.cohort)
    model = load_model(args.model)
    attrs = _csv_list(args.attributes) if args.attributes else list(
        cfg.fairness_attributes if cfg and cfg.fairness_attributes else PROTECTED_ATTRIBUTES
    )
    for a in attrs:
        if a not in PROTECTED_ATTRIBUTES:
            raise ConfigError("fairness", "attributes", f"unknown protected attribute {a!r}")
    flag = args.comorbidity or (cfg.comorbidity_flag if cfg else None)
    run = _run_for(cohort, _splits_for(cohort, stored, seed), model, args.out, attrs, flag, seed)
    files = run.fairness()
    return {"files": [str(f) for f in files]}


def cmd_interaction(args) -> dict:
    cfg = _partial_config(args)
    seed = resolve_seed(args, cfg)
    cohort, _ = _load_cohort(args.cohort)
    attrs = _csv_list(args.attributes) if args.attributes else list(
        cfg.fairness_attributes if cfg and cfg.fairness_attributes else PROTECTED_ATTRIBUTES
    )
    tabular = args.input == "tabular"
    _, names = model_inputs(cohort, "tabular" if tabular else "sequential")
    results = {}
    for path in args.attributions:
        res = read_attribution_csv(path, names, None if tabular else cohort.n_timesteps)
        results[res.method] = res
    ids = [r.sample_ids for r in results.values()]
    if any(not np.array_equal(ids[0], i) for i in ids[1:]):
        raise ConfigError("interaction", "attributions", "attribution files cover different samples")
    pc = PipelineConfig(seed=seed, output_dir=Path(args.out), fairness_attributes=tuple(attrs))
    if args.top_k is not None:
        pc.top_k = args.top_k
    elif cfg is not None:
        pc.top_k = cfg.top_k
    run = _Run(pc, flat=True)
    run.cohort, run.names, run.attributions, run.attributed_idx = cohort, names, results, ids[0]
    if args.fairness_dir:
        for a in attrs:
            p = Path(args.fairness_dir) / f"{a}.json"
            if p.exists():
                doc = json.loads(p.read_text())
                if "auc_min" in doc:
                    run.auc_min[a] = doc["auc_min"]
    files = run.interaction()
    return {"files": [str(f) for f in files]}


def cmd_run(args) -> dict:
    if args.config is None:
        raise ConfigError("run", None, "--config is required")
    cfg = load_config(args.config, seed_override=args.seed)
    if args.out is not None:
        cfg.output_dir = Path(args.out)
    m = run_pipeline(cfg)
    return {"stages": m.stage_names, "config_hash": m.config_hash, "outputs": len(m.outputs)}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attrib-audit", description="Attribution, ROAR and fairness audits on sequential cohorts.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_, out_required=True):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int, default=None, help=f"global seed (overrides ${SEED_ENV} and the config)")
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--out", required=out_required, help="output path")
        p.set_defaults(func=fn)
        return p

    def add_train_flags(p):
        p.add_argument("--model", choices=sorted(MODEL_KINDS))
        p.add_argument("--input", choices=("sequential", "tabular"))
        p.add_argument("--epochs", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--hidden", type=int)

    p = add("generate-data", cmd_generate, "generate a synthetic cohort")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--n-timesteps", dest="n_timesteps", type=int)
    p.add_argument("--n-features", dest="n_features", type=int)
    p.add_argument("--n-informative", dest="n_informative", type=int)
    p.add_argument("--missingness", type=float)
    p.add_argument("--include-static", dest="include_static", action="store_true")
    p.add_argument("--format", choices=("cohort", "csv"), default="cohort")

    p = add("preprocess", cmd_preprocess, "build a cohort from events and static CSV files")
    p.add_argument("--events", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--n-timesteps", dest="n_timesteps", type=int)
    p.add_argument("--no-static", dest="no_static", action="store_true", help="do not embed static attributes")

    p = add("train", cmd_train, "train a model on a cohort directory")
    p.add_argument("--cohort", required=True)
    add_train_flags(p)

    p = add("attribute", cmd_attribute, "compute attributions for a trained model")
    p.add_argument("--cohort", required=True)
    p.add_argument("--model", required=True, help="model checkpoint (JSON)")
    p.add_argument("--methods", "--method", dest="methods", help="comma-separated method names")
    p.add_argument("--samples", choices=("test", "all"), default="test")
    p.add_argument("--max-samples", dest="max_samples", type=int, default=200)

    p = add("roar", cmd_roar, "remove-and-retrain evaluation of attribution rankings")
    p.add_argument("--cohort", required=True)
    p.add_argument("--methods", help="comma-separated method names (plus 'oracle')")
    p.add_argument("--ratios", help="comma-separated ablation ratios starting at 0.0")
    add_train_flags(p)

    p = add("fairness-audit", cmd_fairness, "group AUC and treatment disparity reports")
    p.add_argument("--cohort", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--attributes", help="comma-separated protected attributes")
    p.add_argument("--comorbidity", choices=("hem_mets",))

    p = add("interaction-report", cmd_interaction, "rank aggregation, top-k overlap and group importance")
    p.add_argument("--cohort", required=True)
    p.add_argument("--attributions", nargs="+", required=True, help="attribution CSV files")
    p.add_argument("--input", choices=("sequential", "tabular"), default="sequential")
    p.add_argument("--attributes", help="comma-separated protected attributes")
    p.add_argument("--fairness-dir", dest="fairness_dir", help="fairness-audit output directory")
    p.add_argument("--top-k", dest="top_k", type=int)

    add("run", cmd_run, "run the full pipeline described by --config", out_required=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        result = args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, SchemaError, CapabilityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, RuntimeError, OSError, ArithmeticError, MemoryError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
