"""Experiment orchestration.

Three patterns are supported: comparing co-activation structure across
labels (one label per property, or critical vs. non-critical states of one
property), validating a feature ranking by pruning the top features and
re-verifying, and a config-driven pipeline that runs every stage and writes
a manifest of parameters and digests.
"""
from __future__ import annotations

import configparser
import hashlib
import itertools
import json
import os
import re
import warnings
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import __version__
from .coactivation import LAYER_SCOPES, build_graph, collect_activations, write_graph
from .dqn import TrainConfig, TrainingRun, train
from .dtmc import build_induced_dtmc, dtmc_digest, dtmc_digests, write_dtmc
from .errors import CoactivError, ConfigError, DimensionError, SampleSizeError
from .graph_analysis import AnalysisReport, analyze, community_overlap
from .labeling import (
    LabeledDataset,
    Provenance,
    label_by_predicate,
    label_critical,
    make_property_dataset,
    write_dataset,
)
from .model_lang import FactoredMdp, model_digest, read_model
from .model_lang.expr import format_number
from .models import SHIPPED, load_shipped
from .pctl import SELECTIONS, ReachabilityProperty, check_reachability, export_result, parse_property, relevant_indices
from .policy import MlpPolicy, policy_digest, prune_input_features, read_policy


def default_output_dir() -> str:
    return os.environ.get("COACTIV_OUT") or "coactiv-out"


def build_digest() -> str:
    """Digest of the installed package sources and shipped models."""
    root = Path(__file__).parent
    h = hashlib.sha256(__version__.encode())
    for path in sorted(p for p in root.rglob("*") if p.suffix in (".py", ".pm")):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


@dataclass(frozen=True)
class AnalysisParams:
    d: float = 0.85
    epsilon: float = 1e-8
    k: int = 50
    min_abs_weight: float = 0.0
    layer_scope: str = "all_pairs"
    louvain_seed: int | None = None
    max_iter: int = 10_000

    def __post_init__(self):
        if not 0 <= self.d < 1:
            raise ConfigError(f"damping d must lie in [0, 1), got {self.d}")
        if self.epsilon <= 0 or self.k < 1 or self.min_abs_weight < 0 or self.max_iter < 1:
            raise ConfigError("epsilon, k and max_iter must be positive and min_abs_weight non-negative")
        if self.layer_scope not in LAYER_SCOPES:
            raise ConfigError(f"layer_scope must be one of {LAYER_SCOPES}")


# --------------------------------------------------------------------------- comparison

@dataclass(frozen=True, eq=False)
class ComparisonReport:
    reports: dict  # group label -> AnalysisReport
    overlaps: dict  # (label a, label b) -> OverlapReport
    graphs: dict = field(default_factory=dict)  # group label -> CoactivationGraph

    @property
    def modularity(self) -> dict:
        return {label: r.partition.modularity for label, r in self.reports.items()}

    def to_dict(self) -> dict:
        return {
            "modularity": self.modularity,
            "feature_rankings": {label: r.features for label, r in self.reports.items()},
            "overlaps": [
                {"a": a, "b": b, "agreement": o.agreement, "n_shared": o.n_shared, "method": o.method,
                 "pairs": [list(p) for p in o.pairs]}
                for (a, b), o in self.overlaps.items()
            ],
        }


def label_groups(datasets: Sequence[LabeledDataset]) -> dict:
    """States per label across datasets; a label used by several datasets is qualified by position."""
    seen = {}
    for ds in datasets:
        for label in ds.groups():
            seen[label] = seen.get(label, 0) + 1
    groups = {}
    for k, ds in enumerate(datasets):
        for label, states in ds.groups().items():
            key = label if seen[label] == 1 else f"{k}:{label}"
            groups[key] = states
    return groups


def compare_labels(m: FactoredMdp, p: MlpPolicy, datasets: Sequence[LabeledDataset],
                   params: AnalysisParams = AnalysisParams()) -> ComparisonReport:
    """One co-activation analysis per label group plus every pairwise community overlap."""
    groups = label_groups(datasets)
    if len(groups) < 2:
        raise SampleSizeError(f"comparison needs at least two label groups, found {list(groups)}")
    if p.input_dim != m.dimension:
        raise DimensionError(f"policy expects {p.input_dim} features, model has {m.dimension} variables")
    reports, graphs = {}, {}
    for label, states in groups.items():
        try:
            acts = collect_activations(p, states, m.variable_names)
        except SampleSizeError as exc:
            raise SampleSizeError(f"label {label!r}: {exc}") from None
        g = build_graph(acts, params.min_abs_weight, params.layer_scope, label)
        graphs[label] = g
        reports[label] = analyze(g, params.d, params.epsilon, params.k, params.louvain_seed, params.max_iter)
    overlaps = {
        (a, b): community_overlap(reports[a].partition, reports[b].partition)
        for a, b in itertools.combinations(reports, 2)
    }
    return ComparisonReport(reports, overlaps, graphs)


# --------------------------------------------------------------------------- pruning

def _value_text(v) -> str:
    return format_number(v) if isinstance(v, Fraction) else repr(v)


@dataclass(frozen=True)
class PruneVerifyReport:
    property_text: str
    features: tuple  # pruned feature names
    baseline: object  # Fraction or float
    pruned: object
    satisfied_before: bool | None
    satisfied_after: bool | None
    baseline_digest: str
    pruned_digest: str

    @property
    def delta(self):
        return self.pruned - self.baseline

    def to_dict(self) -> dict:
        return {
            "property": self.property_text,
            "features": list(self.features),
            "baseline": _value_text(self.baseline),
            "pruned": _value_text(self.pruned),
            "delta": _value_text(self.delta),
            "baseline_float": float(self.baseline),
            "pruned_float": float(self.pruned),
            "satisfied_before": self.satisfied_before,
            "satisfied_after": self.satisfied_after,
            "baseline_chain_digest": self.baseline_digest,
            "pruned_chain_digest": self.pruned_digest,
        }


def resolve_features(m: FactoredMdp, features) -> tuple:
    """Feature indices from names or indices."""
    names = m.variable_names
    out = []
    for f in features:
        if isinstance(f, str) and not f.isdigit():
            if f not in names:
                raise ConfigError(f"unknown feature {f!r}; model variables are {list(names)}")
            out.append(names.index(f))
        else:
            out.append(int(f))
    return tuple(out)


def prune_and_check(m: FactoredMdp, p: MlpPolicy, prop: ReachabilityProperty, features,
                    mode: str = "auto", max_states: int = 1_000_000) -> PruneVerifyReport:
    """Re-verify ``prop`` after zeroing the outgoing weights of ``features``.

    Both chains are built from scratch from the initial state.
    """
    idx = resolve_features(m, features)
    base_chain = build_induced_dtmc(m, p, max_states)
    pruned_chain = build_induced_dtmc(m, prune_input_features(p, idx), max_states)
    base = check_reachability(base_chain, prop, mode)
    pruned = check_reachability(pruned_chain, prop, mode)
    return PruneVerifyReport(
        prop.text(), tuple(m.variable_names[i] for i in sorted(set(idx))),
        base.initial_value, pruned.initial_value, base.satisfied, pruned.satisfied,
        dtmc_digest(base_chain), dtmc_digest(pruned_chain),
    )


def train_until_verified(m: FactoredMdp, cfg: TrainConfig, prop: ReachabilityProperty,
                         max_states: int = 1_000_000) -> TrainingRun:
    """Train until the induced chain satisfies ``prop`` (checked every ``cfg.check_interval`` episodes)."""
    if prop.is_query:
        raise ConfigError("a stopping criterion needs a bounded property, not a query")
    if cfg.check_interval < 1:
        raise ConfigError("check_interval must be positive to verify during training")

    def stop(policy, episode):
        return bool(check_reachability(build_induced_dtmc(m, policy, max_states), prop).satisfied)

    return train(m, cfg, stop)


# --------------------------------------------------------------------------- pipeline

LABEL_SCHEMES = ("property", "critical", "predicate")
CHECK_MODES = ("auto", "exact", "iterative")


@dataclass(frozen=True)
class PipelineConfig:
    model: str
    policy: str
    properties: dict  # label -> property text, in file order
    output: str | None = None  # None: $COACTIV_OUT, else "coactiv-out"
    seed: int = 0
    selection: str = "all_reachable"
    mode: str = "auto"
    max_states: int = 1_000_000
    scheme: str = "property"
    threshold: float = 100.0
    label_property: str | None = None  # property whose states the critical/predicate labelers use
    predicate: str | None = None
    true_label: str = "true"
    false_label: str = "false"
    analysis: AnalysisParams = AnalysisParams()
    prune: str = ""  # "", "top:<n>:<group label>" or comma-separated features
    prune_property: str | None = None
    base_dir: str = "."

    def __post_init__(self):
        if not self.properties:
            raise ConfigError("at least one property is required")
        if self.selection not in SELECTIONS:
            raise ConfigError(f"selection must be one of {SELECTIONS}")
        if self.mode not in CHECK_MODES:
            raise ConfigError(f"mode must be one of {CHECK_MODES}")
        if self.max_states < 1:
            raise ConfigError("max_states must be positive")
        if self.scheme not in LABEL_SCHEMES:
            raise ConfigError(f"labeling scheme must be one of {LABEL_SCHEMES}")
        if self.scheme == "predicate" and not self.predicate:
            raise ConfigError("the predicate scheme needs a predicate")
        for name in (self.label_property, self.prune_property):
            if name is not None and name not in self.properties:
                raise ConfigError(f"unknown property label {name!r}")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def record(self) -> dict:
        """Every parameter, defaults included, without machine-specific paths."""
        out = asdict(self)
        out.pop("base_dir")
        out.pop("output")
        return out


def _get(section, key, default, cast=str):
    if section is None or key not in section or section[key].strip() == "":
        return default
    raw = section[key].strip()
    try:
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError:
        raise ConfigError(f"option {key!r}: cannot interpret {raw!r}") from None


def _optional_int(raw: str):
    return None if raw.lower() == "none" else int(raw)


def load_pipeline_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read an INI pipeline config; ``overrides`` replace top-level fields (e.g. ``seed``)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    path = Path(path)
    try:
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config {path}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {"pipeline", "properties", "labeling", "analysis", "prune"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    pipe = parser["pipeline"] if parser.has_section("pipeline") else None
    lab = parser["labeling"] if parser.has_section("labeling") else None
    ana = parser["analysis"] if parser.has_section("analysis") else None
    pru = parser["prune"] if parser.has_section("prune") else None
    if pipe is None or "model" not in pipe or "policy" not in pipe:
        raise ConfigError("[pipeline] needs 'model' and 'policy'")
    props = dict(parser["properties"]) if parser.has_section("properties") else {}
    analysis = AnalysisParams(
        d=_get(ana, "d", 0.85, float),
        epsilon=_get(ana, "epsilon", 1e-8, float),
        k=_get(ana, "k", 50, int),
        min_abs_weight=_get(ana, "min_abs_weight", 0.0, float),
        layer_scope=_get(ana, "layer_scope", "all_pairs"),
        louvain_seed=_get(ana, "louvain_seed", None, _optional_int),
        max_iter=_get(ana, "max_iter", 10_000, int),
    )
    values = dict(
        model=pipe["model"].strip(),
        policy=pipe["policy"].strip(),
        properties=props,
        output=_get(pipe, "output", None),
        seed=_get(pipe, "seed", 0, int),
        selection=_get(pipe, "selection", "all_reachable"),
        mode=_get(pipe, "mode", "auto"),
        max_states=_get(pipe, "max_states", 1_000_000, int),
        scheme=_get(lab, "scheme", "property"),
        threshold=_get(lab, "threshold", 100.0, float),
        label_property=_get(lab, "property", None),
        predicate=_get(lab, "predicate", None),
        true_label=_get(lab, "true_label", "true"),
        false_label=_get(lab, "false_label", "false"),
        analysis=analysis,
        prune=_get(pru, "features", ""),
        prune_property=_get(pru, "property", None),
        base_dir=str(path.parent),
    )
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig(**values)


def load_model_ref(ref: str, base: Path = Path(".")) -> FactoredMdp:
    """A model file path, or ``shipped:<name>`` for a model bundled with the package."""
    if ref.startswith("shipped:"):
        name = ref.split(":", 1)[1]
        if name not in SHIPPED:
            raise ConfigError(f"no shipped model {name!r}; available: {list(SHIPPED)}")
        return load_shipped(name)
    path = Path(ref)
    return read_model(path if path.is_absolute() else base / path)


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def _sha_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def dataset_relation(a: set, b: set) -> str:
    """How state set ``a`` relates to ``b``."""
    if a == b:
        return "equal"
    if not a & b:
        return "disjoint"
    if a < b:
        return "strict_subset"
    if a > b:
        return "strict_superset"
    return "overlapping"


@dataclass(frozen=True, eq=False)
class PipelineResult:
    manifest: dict
    manifest_path: Path
    chain: object
    results: dict  # property label -> CheckResult
    datasets: list
    comparison: ComparisonReport | None
    prune: PruneVerifyReport | None


@contextmanager
def _stage(name):
    """Attach the stage name to domain errors raised inside a pipeline step."""
    try:
        yield
    except CoactivError as exc:
        if not getattr(exc, "pipeline_stage", None):
            exc.pipeline_stage = name
        raise


def run_pipeline(config: PipelineConfig | str | Path, output: str | Path | None = None) -> PipelineResult:
    """Build, check, select, label, analyze and optionally prune-verify; write every artifact.

    The manifest written to ``<output>/manifest.json`` records every parameter
    and the digest of every input and output, and is byte-identical across
    runs with the same inputs.
    """
    cfg = config if isinstance(config, PipelineConfig) else load_pipeline_config(config)
    if output is not None:
        out = Path(output)
    elif cfg.output is not None:
        out = cfg.resolve(cfg.output)
    else:
        out = Path(default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    caught: list = []
    artifacts: dict = {}

    def record(path: Path):
        artifacts[path.name] = _sha_file(path)

    with warnings.catch_warnings(record=True) as warned:
        warnings.simplefilter("always")
        with _stage("model"):
            m = load_model_ref(cfg.model, Path(cfg.base_dir))
        with _stage("policy"):
            p = read_policy(cfg.resolve(cfg.policy))
        digests = {"model": model_digest(m), "policy": policy_digest(p)}
        with _stage("build"):
            chain = build_induced_dtmc(m, p, cfg.max_states)
            for path in write_dtmc(chain, out / "chain").values():
                record(path)
        digests["chain"] = dtmc_digest(chain)
        digests["chain_parts"] = dtmc_digests(chain)

        props, results, selected = {}, {}, {}
        with _stage("check"):
            for label, text in cfg.properties.items():
                props[label] = parse_property(text)
                r = check_reachability(chain, props[label], cfg.mode)
                results[label] = r
                values_text, summary = export_result(r, {k: digests[k] for k in ("model", "policy", "chain")})
                for suffix, text_out in ((".values.txt", values_text), (".summary.json", summary)):
                    path = out / f"check_{_slug(label)}{suffix}"
                    path.write_text(text_out, encoding="utf-8")
                    record(path)
                selected[label] = relevant_indices(chain, r, cfg.selection)

        datasets = []
        with _stage("dataset"):
            def prov(label, labeler=""):
                return Provenance(digests["model"], digests["policy"], props[label].text(), cfg.selection, labeler)

            if cfg.scheme == "property":
                for label in cfg.properties:
                    states = [chain.states[i] for i in selected[label]]
                    datasets.append(make_property_dataset(states, label, prov(label), m.variable_names))
            else:
                label = cfg.label_property or next(iter(cfg.properties))
                states = [chain.states[i] for i in selected[label]]
                if cfg.scheme == "critical":
                    datasets.append(label_critical(p, states, cfg.threshold, prov(label), m.variable_names))
                else:
                    datasets.append(label_by_predicate(states, cfg.predicate, (cfg.true_label, cfg.false_label),
                                                       m.variable_names, prov(label)))
            for k, ds in enumerate(datasets):
                path = write_dataset(ds, out / f"dataset_{k}_{_slug('_'.join(ds.label_set))}.csv")
                record(path)
                record(path.with_name(path.name + ".provenance.json"))

        relations = {}
        if cfg.scheme == "property":
            for a, b in itertools.permutations(cfg.properties, 2):
                relations[f"{a} vs {b}"] = dataset_relation(set(selected[a]), set(selected[b]))

        comparison = None
        with _stage("analysis"):
            if len(label_groups(datasets)) >= 2:
                comparison = compare_labels(m, p, datasets, cfg.analysis)
                for label, g in comparison.graphs.items():
                    for path in write_graph(g, out / f"graph_{_slug(label)}").values():
                        record(path)
                    path = out / f"analysis_{_slug(label)}.json"
                    path.write_text(json.dumps(comparison.reports[label].to_dict(), sort_keys=True, indent=2) + "\n",
                                    encoding="utf-8")
                    record(path)
                path = out / "comparison.json"
                path.write_text(json.dumps(comparison.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
                record(path)

        prune_report = None
        with _stage("prune"):
            if cfg.prune:
                features = _prune_features(cfg.prune, comparison)
                label = cfg.prune_property or _default_prune_property(cfg)
                prune_report = prune_and_check(m, p, props[label], features, cfg.mode, cfg.max_states)
                path = out / "prune.json"
                path.write_text(json.dumps(prune_report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
                record(path)
        caught = sorted({str(w.message) for w in warned})

    manifest = {
        "build": {"version": __version__, "digest": build_digest()},
        "config": cfg.record(),
        "digests": digests,
        "chain": {"states": chain.n_states, "transitions": chain.n_transitions, "fallbacks": chain.fallbacks},
        "results": {label: r.summary() for label, r in results.items()},
        "datasets": [
            {"labels": list(ds.label_set), "counts": ds.counts(), "provenance": asdict(ds.provenance)}
            for ds in datasets
        ],
        "dataset_relations": relations,
        "comparison": comparison.to_dict() if comparison else None,
        "prune": prune_report.to_dict() if prune_report else None,
        "artifacts": artifacts,
        "warnings": caught,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return PipelineResult(manifest, manifest_path, chain, results, datasets, comparison, prune_report)


def _default_prune_property(cfg: PipelineConfig) -> str:
    parts = cfg.prune.split(":")
    if parts[0] == "top" and len(parts) == 3 and parts[2] in cfg.properties:
        return parts[2]
    return next(iter(cfg.properties))


def _prune_features(spec: str, comparison: ComparisonReport | None) -> list:
    """Feature names from ``top:<n>:<label>`` or an explicit comma-separated list."""
    if spec.startswith("top:"):
        parts = spec.split(":")
        if len(parts) != 3 or not parts[1].isdigit():
            raise ConfigError(f"prune spec {spec!r} must look like top:<n>:<label>")
        n, label = int(parts[1]), parts[2]
        if comparison is None or label not in comparison.reports:
            raise ConfigError(f"prune spec refers to label {label!r} with no analysis report")
        return [name for name, _ in comparison.reports[label].features[:n]]
    return [f.strip() for f in spec.split(",") if f.strip()]


__all__ = [
    "AnalysisParams", "AnalysisReport", "ComparisonReport", "PipelineConfig", "PipelineResult",
    "PruneVerifyReport", "build_digest", "compare_labels", "dataset_relation", "label_groups",
    "default_output_dir", "load_model_ref", "load_pipeline_config", "prune_and_check", "resolve_features",
    "run_pipeline", "train_until_verified",
]
