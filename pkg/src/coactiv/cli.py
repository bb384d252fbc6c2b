"""Command-line interface.

Every subcommand wraps one stage of the pipeline.  Rich results go to files
in the output directory (``--out``, else ``$COACTIV_OUT``, else
``coactiv-out``); standard output gets short ``key=value`` records.

Exit status: 0 on success, 1 on a domain error (a JSON error record is
printed to standard error), 2 on a usage error such as an unknown flag or a
malformed property.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .coactivation import build_graph, collect_activations, write_graph
from .dqn import TrainConfig, evaluate, load_train_config, train
from .dtmc import build_induced_dtmc, dtmc_digest, write_dtmc
from .errors import CoactivError, ConfigError, PropertySyntaxError
from .experiments import (
    AnalysisParams,
    build_digest,
    compare_labels,
    default_output_dir,
    label_groups,
    load_model_ref,
    load_pipeline_config,
    prune_and_check,
    run_pipeline,
    train_until_verified,
)
from .graph_analysis import analyze
from .labeling import (
    Provenance,
    label_by_predicate,
    label_critical,
    make_property_dataset,
    read_dataset,
    write_dataset,
)
from .model_lang import model_digest, pretty_print
from .pctl import SELECTIONS, check_reachability, export_result, parse_property, relevant_indices
from .policy import policy_digest, read_policy, save_policy

USAGE_ERRORS = (PropertySyntaxError, ConfigError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class _VersionAction(argparse.Action):
    def __init__(self, option_strings, dest, **kwargs):
        super().__init__(option_strings, dest, nargs=0, **kwargs)

    def __call__(self, parser, namespace, values, option_string=None):
        print(f"coactiv {__version__} build={build_digest()}")
        parser.exit()


def _emit(**fields):
    print(" ".join(f"{k}={v}" for k, v in fields.items()))


def _out_dir(args) -> Path:
    out = Path(args.out or default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_invocation(out: Path, args, extra: dict | None = None):
    record = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    record.update(extra or {})
    (out / f"invocation_{args.command}.json").write_text(json.dumps(record, sort_keys=True, indent=2) + "\n",
                                                        encoding="utf-8")


def _analysis_params(args) -> AnalysisParams:
    return AnalysisParams(d=args.d, epsilon=args.epsilon, k=args.k, min_abs_weight=args.min_abs_weight,
                          layer_scope=args.layer_scope, louvain_seed=args.louvain_seed)


# --------------------------------------------------------------------------- commands

def cmd_parse(args):
    m = load_model_ref(args.model)
    out = _out_dir(args)
    _write_invocation(out, args)
    (out / "model.canonical.pm").write_text(pretty_print(m), encoding="utf-8")
    _emit(model=m.name, variables=m.dimension, commands=len(m.commands), actions=",".join(m.actions),
          labels=",".join(m.labels), digest=model_digest(m))


def cmd_train(args):
    m = load_model_ref(args.model)
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    cfg.seed = args.seed
    out = _out_dir(args)
    _write_invocation(out, args, {"train_config": cfg.to_dict()})
    if args.until:
        prop = parse_property(args.until)
        if cfg.check_interval < 1:
            cfg.check_interval = 50
        run = train_until_verified(m, cfg, prop)
    else:
        run = train(m, cfg)
    policy_path = out / args.policy_name
    save_policy(run.policy, policy_path)
    (out / "train_log.jsonl").write_text(run.log_lines(), encoding="utf-8")
    mean, _ = evaluate(run.policy, m, cfg.eval_episodes, cfg.seed, cfg.terminal_label, cfg.max_steps)
    _emit(policy=policy_path, episodes=len(run.log), steps=run.steps, stopped_early=run.stopped_early,
          mean_return=repr(mean), digest=policy_digest(run.policy))


def cmd_build(args):
    m = load_model_ref(args.model)
    p = read_policy(args.policy)
    out = _out_dir(args)
    _write_invocation(out, args)
    d = build_induced_dtmc(m, p, args.max_states)
    write_dtmc(d, out / "chain")
    _emit(states=d.n_states, transitions=d.n_transitions, fallbacks=d.fallbacks, digest=dtmc_digest(d))


def _check(args):
    prop = parse_property(args.prop)
    m = load_model_ref(args.model)
    p = read_policy(args.policy)
    d = build_induced_dtmc(m, p, args.max_states)
    r = check_reachability(d, prop, args.mode)
    digests = {"model": model_digest(m), "policy": policy_digest(p), "chain": dtmc_digest(d)}
    return m, p, d, prop, r, digests


def cmd_check(args):
    m, p, d, prop, r, digests = _check(args)
    out = _out_dir(args)
    _write_invocation(out, args)
    values, summary = export_result(r, digests)
    (out / "check.values.txt").write_text(values, encoding="utf-8")
    (out / "check.summary.json").write_text(summary, encoding="utf-8")
    s = json.loads(summary)
    _emit(property=json.dumps(s["property"]), mode=s["mode"], satisfied=s["satisfied"],
          initial_value=s["initial_value"], states=d.n_states)


def cmd_dataset(args):
    m, p, d, prop, r, digests = _check(args)
    out = _out_dir(args)
    _write_invocation(out, args)
    states = [d.states[i] for i in relevant_indices(d, r, args.selection)]
    kind, _, spec = args.labeler.partition(":")
    prov = Provenance(digests["model"], digests["policy"], prop.text(), args.selection, args.labeler)
    if kind == "property":
        ds = make_property_dataset(states, spec or "property", prov, m.variable_names)
    elif kind == "critical":
        try:
            tau = float(spec or 100)
        except ValueError:
            raise UsageError(f"critical threshold must be a number, got {spec!r}") from None
        ds = label_critical(p, states, tau, prov, m.variable_names)
    elif kind == "predicate":
        ds = label_by_predicate(states, spec, ("true", "false"), m.variable_names, prov)
    else:
        raise UsageError(f"unknown labeler {args.labeler!r}; use property:<label>, critical:<tau> or predicate:<expr>")
    path = write_dataset(ds, out / args.dataset_name)
    _emit(dataset=path, rows=len(ds), **{f"count[{k}]": v for k, v in ds.counts().items()})


def _groups(args):
    datasets = [read_dataset(path) for path in args.dataset]
    return datasets, label_groups(datasets)


def cmd_coactivate(args):
    p = read_policy(args.policy)
    out = _out_dir(args)
    _write_invocation(out, args)
    datasets, groups = _groups(args)
    names = datasets[0].feature_names
    for label, states in groups.items():
        g = build_graph(collect_activations(p, states, names), args.min_abs_weight, args.layer_scope, label)
        write_graph(g, out / f"graph_{label}")
        _emit(label=label, nodes=g.n_nodes, edges=g.n_edges, zero_variance=len(g.excluded))


def cmd_analyze(args):
    p = read_policy(args.policy)
    out = _out_dir(args)
    _write_invocation(out, args)
    datasets, groups = _groups(args)
    params = _analysis_params(args)
    names = datasets[0].feature_names
    for label, states in groups.items():
        g = build_graph(collect_activations(p, states, names), params.min_abs_weight, params.layer_scope, label)
        rep = analyze(g, params.d, params.epsilon, params.k, params.louvain_seed, params.max_iter)
        (out / f"analysis_{label}.json").write_text(json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n",
                                                  encoding="utf-8")
        _emit(label=label, modularity=repr(rep.partition.modularity), communities=rep.partition.n_communities,
              top_feature=rep.features[0][0])


def cmd_compare(args):
    m = load_model_ref(args.model)
    p = read_policy(args.policy)
    out = _out_dir(args)
    _write_invocation(out, args)
    datasets = [read_dataset(path) for path in args.dataset]
    rep = compare_labels(m, p, datasets, _analysis_params(args))
    (out / "comparison.json").write_text(json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n",
                                         encoding="utf-8")
    for (a, b), o in rep.overlaps.items():
        _emit(a=a, b=b, overlap=repr(o.agreement), q_a=repr(rep.modularity[a]), q_b=repr(rep.modularity[b]))


def cmd_prune_verify(args):
    prop = parse_property(args.prop)
    m = load_model_ref(args.model)
    p = read_policy(args.policy)
    out = _out_dir(args)
    _write_invocation(out, args)
    features = [f.strip() for f in args.features.split(",") if f.strip()]
    rep = prune_and_check(m, p, prop, features, args.mode, args.max_states)
    (out / "prune.json").write_text(json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    d = rep.to_dict()
    _emit(features=",".join(rep.features) or "-", baseline=d["baseline"], pruned=d["pruned"], delta=d["delta"],
          satisfied_before=rep.satisfied_before, satisfied_after=rep.satisfied_after)


def cmd_run(args):
    cfg = load_pipeline_config(args.config, {"seed": args.seed})
    out = Path(args.out) if args.out else (cfg.resolve(cfg.output) if cfg.output else Path(default_output_dir()))
    out.mkdir(parents=True, exist_ok=True)
    _write_invocation(out, args, {"pipeline_config": cfg.record()})
    result = run_pipeline(cfg, out)
    for label, r in result.results.items():
        _emit(property=label, satisfied=r.satisfied, initial_value=r.summary()["initial_value"])
    _emit(manifest=result.manifest_path)


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coactiv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action=_VersionAction, help="print version and build digest")
    common = _Parser(add_help=False)
    common.add_argument("--out", help="output directory (default: $COACTIV_OUT or ./coactiv-out)")
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.set_defaults(func=func)
        return sp

    def model_policy(sp, policy=True):
        sp.add_argument("--model", required=True, help="model file or shipped:<name>")
        if policy:
            sp.add_argument("--policy", required=True, help="policy weight file (JSON)")

    def checking(sp):
        sp.add_argument("--prop", required=True, help='property, e.g. "P>=0.99 [ F jobs_done=1 ]"')
        sp.add_argument("--mode", choices=("auto", "exact", "iterative"), default="auto")
        sp.add_argument("--max-states", type=int, default=1_000_000)

    def analysis(sp):
        sp.add_argument("--d", type=float, default=0.85, help="PageRank damping")
        sp.add_argument("--epsilon", type=float, default=1e-8, help="PageRank L1 tolerance")
        sp.add_argument("--k", type=int, default=50, help="number of top neurons to report")
        sp.add_argument("--min-abs-weight", type=float, default=0.0)
        sp.add_argument("--layer-scope", choices=("all_pairs", "adjacent_layers"), default="all_pairs")
        sp.add_argument("--louvain-seed", type=int, default=None, help="shuffle Louvain visit order")

    sp = add("parse", cmd_parse, "validate a model and write its canonical text")
    model_policy(sp, policy=False)

    sp = add("train", cmd_train, "train a Q-network policy")
    model_policy(sp, policy=False)
    sp.add_argument("--config", help="INI file with a [train] section")
    sp.add_argument("--until", help="stop once this bounded property holds on the induced chain")
    sp.add_argument("--policy-name", default="policy.json")

    sp = add("build", cmd_build, "build the chain induced by a policy")
    model_policy(sp)
    sp.add_argument("--max-states", type=int, default=1_000_000)

    sp = add("check", cmd_check, "check a reachability property on the induced chain")
    model_policy(sp)
    checking(sp)

    sp = add("dataset", cmd_dataset, "extract and label the states relevant to a property")
    model_policy(sp)
    checking(sp)
    sp.add_argument("--selection", choices=SELECTIONS, default="all_reachable")
    sp.add_argument("--labeler", default="property:property",
                    help="property:<label>, critical:<tau> or predicate:<expr>")
    sp.add_argument("--dataset-name", default="dataset.csv")

    for name, func, text in (("coactivate", cmd_coactivate, "build co-activation graphs per label"),
                             ("analyze", cmd_analyze, "PageRank and communities per label")):
        sp = add(name, func, text)
        sp.add_argument("--policy", required=True)
        sp.add_argument("--dataset", required=True, action="append", help="dataset CSV (repeatable)")
        analysis(sp)

    sp = add("compare", cmd_compare, "compare co-activation structure across labels")
    model_policy(sp)
    sp.add_argument("--dataset", required=True, action="append", help="dataset CSV (repeatable)")
    analysis(sp)

    sp = add("prune-verify", cmd_prune_verify, "re-check a property after pruning input features")
    model_policy(sp)
    checking(sp)
    sp.add_argument("--features", required=True, help="comma-separated feature names or indices")

    sp = add("run", cmd_run, "run a full pipeline from a config file")
    sp.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"coactiv: error: {exc}", file=sys.stderr)
        return 2
    except CoactivError as exc:
        stage = getattr(exc, "pipeline_stage", None) or exc.stage
        record = {"error": type(exc).__name__, "stage": stage, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1
    except OSError as exc:
        record = {"error": type(exc).__name__, "stage": "io", "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
