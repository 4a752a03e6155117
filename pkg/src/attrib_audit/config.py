"""INI-style pipeline configuration: named sections of ``key = value`` pairs."""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .attribution import ALL_METHODS
from .data.records import PROTECTED_ATTRIBUTES, VOCABULARIES, group_from_slug
from .data.synthetic import FeatureEffect, GeneratorConfig, GroupBias
from .models import MODEL_KINDS, TrainConfig
from .roar import RATIOS

SEED_ENV = "ATTRIB_AUDIT_SEED"
KNOWN_SECTIONS = ("run", "generate", "ingest", "train", "evaluate", "attribute", "roar", "fairness", "interaction")
STAGE_ORDER = ("generate", "ingest", "train", "evaluate", "attribute", "roar", "fairness", "interaction")


class ConfigError(ValueError):
    def __init__(self, section: str, key: str | None, message: str):
        self.section, self.key = section, key
        where = f"[{section}]" + (f" {key}" if key else "")
        super().__init__(f"{where}: {message}")


def derive_seed(global_seed: int, stage: str) -> int:
    """Stage seed from a hash of (global seed, stage name); independent of which stages run."""
    digest = hashlib.sha256(f"{int(global_seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _list(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


class _Section:
    """Typed accessor that tracks which keys were consumed."""

    def __init__(self, name: str, items: dict[str, str]):
        self.name = name
        self.items = dict(items)
        self.used: set[str] = set()

    def raw(self, key, default=None):
        self.used.add(key)
        return self.items.get(key, default)

    def get(self, key, conv, default):
        raw = self.raw(key)
        if raw is None:
            return default
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(self.name, key, f"invalid value {raw!r} ({exc})") from None

    def boolean(self, key, default):
        raw = self.raw(key)
        if raw is None:
            return default
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(self.name, key, f"expected a boolean, got {raw!r}")

    def check_unused(self):
        extra = sorted(set(self.items) - self.used)
        if extra:
            raise ConfigError(self.name, extra[0], "unknown key")


@dataclass
class PipelineConfig:
    seed: int
    output_dir: Path
    generator: GeneratorConfig | None = None
    ingest: dict | None = None
    model_kind: str = "recurrent"
    model_input: str = "sequential"
    train: TrainConfig = field(default_factory=TrainConfig)
    stages: tuple[str, ...] = ()
    attribute_methods: tuple[str, ...] = ()
    attribute_samples: str = "test"
    attribute_max_samples: int = 200
    method_options: dict = field(default_factory=dict)
    roar_methods: tuple[str, ...] = ()
    roar_ratios: tuple[float, ...] = RATIOS
    fairness_attributes: tuple[str, ...] = ()
    comorbidity_flag: str | None = None
    top_k: int = 50
    canonical: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)


def _parse_methods(sec: _Section, key: str, allowed) -> tuple[str, ...]:
    raw = sec.raw(key)
    if raw is None:
        raise ConfigError(sec.name, key, "required")
    methods = _list(raw)
    if not methods:
        raise ConfigError(sec.name, key, "empty method list")
    for m in methods:
        if m not in allowed:
            raise ConfigError(sec.name, key, f"unknown method {m!r}")
    return tuple(methods)


def _parse_generator(sec: _Section, bias_secs, effect_secs) -> GeneratorConfig:
    kwargs = {}
    for f in fields(GeneratorConfig):
        if f.name in ("group_bias", "feature_effects"):
            continue
        if f.name in ("informative_coefs",):
            raw = sec.raw(f.name)
            if raw is not None:
                kwargs[f.name] = tuple(float(v) for v in _list(raw))
            continue
        if f.name == "informative_features":
            raw = sec.raw(f.name)
            if raw is not None:
                kwargs[f.name] = tuple(int(v) for v in _list(raw))
            continue
        default = f.default
        if isinstance(default, bool):
            kwargs[f.name] = sec.boolean(f.name, default)
        elif isinstance(default, int):
            kwargs[f.name] = sec.get(f.name, int, default)
        elif isinstance(default, float):
            kwargs[f.name] = sec.get(f.name, float, default)
        else:
            kwargs[f.name] = sec.get(f.name, str, default)

    bias = {}
    for bsec in bias_secs:
        attr = bsec.name.split(".", 1)[1]
        if attr not in PROTECTED_ATTRIBUTES:
            raise ConfigError(bsec.name, None, f"unknown protected attribute {attr!r}")
        per_group: dict[str, dict[str, float]] = {}
        for key in list(bsec.items):
            slug, _, param = key.rpartition(".")
            if param not in ("mortality_shift", "noise_shift", "treatment_shift") or not slug:
                raise ConfigError(bsec.name, key, "expected <group>.mortality_shift|noise_shift|treatment_shift")
            try:
                group = group_from_slug(attr, slug)
            except KeyError as exc:
                raise ConfigError(bsec.name, key, str(exc.args[0])) from None
            per_group.setdefault(group, {})[param] = bsec.get(key, float, 0.0)
        for group, params in per_group.items():
            bias[(attr, group)] = GroupBias(**params)

    effects = []
    for esec in effect_secs:
        attr = esec.name.split(".", 1)[1]
        if attr not in PROTECTED_ATTRIBUTES:
            raise ConfigError(esec.name, None, f"unknown protected attribute {attr!r}")
        per_group = {}
        for key in list(esec.items):
            slug, _, param = key.rpartition(".")
            if param not in ("feature", "coef") or not slug:
                raise ConfigError(esec.name, key, "expected <group>.feature or <group>.coef")
            try:
                group = group_from_slug(attr, slug)
            except KeyError as exc:
                raise ConfigError(esec.name, key, str(exc.args[0])) from None
            per_group.setdefault(group, {})[param] = esec.get(key, int if param == "feature" else float, None)
        for group, params in per_group.items():
            if set(params) != {"feature", "coef"}:
                raise ConfigError(esec.name, None, f"group {group!r} needs both feature and coef")
            effects.append(FeatureEffect(attr, group, params["feature"], params["coef"]))

    cfg = GeneratorConfig(**kwargs, group_bias=bias, feature_effects=tuple(effects))
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError("generate", None, str(exc)) from None
    return cfg


def parse_config_text(
    text: str, base_dir: Path | None = None, seed_override: int | None = None, partial: bool = False
) -> PipelineConfig:
    """Parse and validate a config; ``partial`` relaxes the [run] section and stage dependencies."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", None, str(exc).splitlines()[0]) from None
    base_dir = base_dir or Path.cwd()

    sections = {name: _Section(name, dict(parser.items(name))) for name in parser.sections()}
    for name in sections:
        head = name.split(".", 1)[0]
        if name not in KNOWN_SECTIONS and not (head in ("bias", "effect") and "." in name):
            raise ConfigError(name, None, "unknown section")

    run = sections.get("run")
    if run is None:
        if not partial:
            raise ConfigError("run", None, "missing section")
        run = sections["run"] = _Section("run", {})
    env_seed = os.environ.get(SEED_ENV)
    seed = run.get("seed", int, None)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError("run", "seed", f"{SEED_ENV}={env_seed!r} is not an integer") from None
    if seed_override is not None:
        seed = seed_override
    if seed is None:
        if not partial:
            raise ConfigError("run", "seed", "required")
        seed = 0
    out = run.get("output_dir", str, None)
    if out is None:
        if not partial:
            raise ConfigError("run", "output_dir", "required")
        out = "."
    run.check_unused()
    output_dir = Path(out) if Path(out).is_absolute() else base_dir / out

    canonical = {name: dict(sorted(sec.items.items())) for name, sec in sections.items()}
    canonical["run"] = {**canonical["run"], "seed": str(seed)}
    cfg = PipelineConfig(seed=seed, output_dir=output_dir, canonical=canonical)

    if "generate" in sections and "ingest" in sections:
        raise ConfigError("ingest", None, "use either [generate] or [ingest], not both")
    stages = []
    if "generate" in sections:
        bias = [s for n, s in sections.items() if n.startswith("bias.")]
        eff = [s for n, s in sections.items() if n.startswith("effect.")]
        cfg.generator = _parse_generator(sections["generate"], bias, eff)
        for s in [sections["generate"], *bias, *eff]:
            s.check_unused()
        stages.append("generate")
    elif "ingest" in sections:
        sec = sections["ingest"]
        ingest = {}
        for key in ("events", "static"):
            raw = sec.raw(key)
            if raw is None:
                raise ConfigError("ingest", key, "required")
            ingest[key] = Path(raw) if Path(raw).is_absolute() else base_dir / raw
        ingest["n_timesteps"] = sec.get("n_timesteps", int, 24)
        ingest["include_static"] = sec.boolean("include_static", True)
        sec.check_unused()
        cfg.ingest = ingest
        stages.append("ingest")

    if "train" in sections:
        sec = sections["train"]
        cfg.model_kind = sec.get("model", str, "recurrent")
        if cfg.model_kind not in MODEL_KINDS:
            raise ConfigError("train", "model", f"unknown model kind {cfg.model_kind!r}")
        cfg.model_input = sec.get("input", str, "sequential" if cfg.model_kind == "recurrent" else "tabular")
        if cfg.model_input not in ("sequential", "tabular"):
            raise ConfigError("train", "input", "expected 'sequential' or 'tabular'")
        if cfg.model_kind == "recurrent" and cfg.model_input != "sequential":
            raise ConfigError("train", "input", "recurrent model needs sequential input")
        defaults = TrainConfig()
        params = {
            f.name: sec.get(f.name, type(getattr(defaults, f.name)), getattr(defaults, f.name))
            for f in fields(TrainConfig)
            if f.name != "seed"
        }
        try:
            cfg.train = TrainConfig(**params, seed=cfg.stage_seed("train"))
            cfg.train.validate()
        except ValueError as exc:
            raise ConfigError("train", None, str(exc)) from None
        sec.check_unused()
        stages.append("train")

    if "evaluate" in sections:
        sections["evaluate"].check_unused()
        stages.append("evaluate")

    if "attribute" in sections:
        sec = sections["attribute"]
        cfg.attribute_methods = _parse_methods(sec, "methods", ALL_METHODS)
        cfg.attribute_samples = sec.get("samples", str, "test")
        if cfg.attribute_samples not in ("test", "all"):
            raise ConfigError("attribute", "samples", "expected 'test' or 'all'")
        cfg.attribute_max_samples = sec.get("max_samples", int, 200)
        for key in ("ig_steps", "n_samples", "n_permutations", "noise_sd", "window"):
            if key in sec.items:
                cfg.method_options[key] = sec.raw(key)
        sec.check_unused()
        stages.append("attribute")

    if "roar" in sections:
        sec = sections["roar"]
        cfg.roar_methods = _parse_methods(sec, "methods", ALL_METHODS + ("oracle",))
        ratios = sec.raw("ratios")
        if ratios is not None:
            try:
                cfg.roar_ratios = tuple(float(r) for r in _list(ratios))
            except ValueError:
                raise ConfigError("roar", "ratios", f"invalid ratio list {ratios!r}") from None
            if not cfg.roar_ratios or cfg.roar_ratios[0] != 0.0 or list(cfg.roar_ratios) != sorted(set(cfg.roar_ratios)):
                raise ConfigError("roar", "ratios", "ratios must be ascending and start at 0.0")
            if cfg.roar_ratios[-1] > 1.0:
                raise ConfigError("roar", "ratios", "ratios must not exceed 1.0")
        sec.check_unused()
        stages.append("roar")

    if "fairness" in sections:
        sec = sections["fairness"]
        attrs = tuple(_list(sec.raw("attributes", ",".join(PROTECTED_ATTRIBUTES))))
        for a in attrs:
            if a not in PROTECTED_ATTRIBUTES:
                raise ConfigError("fairness", "attributes", f"unknown protected attribute {a!r}")
        cfg.fairness_attributes = attrs
        cfg.comorbidity_flag = sec.get("comorbidity", str, None)
        if cfg.comorbidity_flag not in (None, "hem_mets"):
            raise ConfigError("fairness", "comorbidity", "only 'hem_mets' is supported")
        sec.check_unused()
        stages.append("fairness")

    if "interaction" in sections:
        sec = sections["interaction"]
        cfg.top_k = sec.get("top_k", int, 50)
        if cfg.top_k <= 0:
            raise ConfigError("interaction", "top_k", "must be positive")
        sec.check_unused()
        stages.append("interaction")

    if not partial:
        _check_dependencies(cfg, stages)
    cfg.stages = tuple(stages)
    return cfg


def _check_dependencies(cfg: PipelineConfig, stages: list[str]) -> None:
    has_data = "generate" in stages or "ingest" in stages
    needs = {
        "train": ["data"],
        "evaluate": ["data", "train"],
        "attribute": ["data", "train"],
        "roar": ["data", "train"],
        "fairness": ["data", "train"],
        "interaction": ["attribute"],
    }
    for stage in stages:
        for dep in needs.get(stage, []):
            ok = has_data if dep == "data" else dep in stages
            if not ok:
                what = "[generate] or [ingest]" if dep == "data" else f"[{dep}]"
                raise ConfigError(stage, None, f"stage needs {what}")
    if "roar" in stages and "oracle" in cfg.roar_methods and cfg.generator is None:
        raise ConfigError("roar", "methods", "oracle ranking is only available for generated cohorts")
    if "glassbox" in cfg.attribute_methods + cfg.roar_methods and cfg.model_kind != "linear":
        raise ConfigError("attribute", "methods", f"glassbox needs the linear model, not {cfg.model_kind}")


def load_config(path, seed_override: int | None = None, partial: bool = False) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("file", None, f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, base_dir=path.parent, seed_override=seed_override, partial=partial)
