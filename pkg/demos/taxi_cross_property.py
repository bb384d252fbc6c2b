"""Cross-property comparison on the taxi model.

1. Train a Q-network until P>=0.99 [ F jobs_done=1 ] holds on its induced chain.
2. Extract the states relevant to "one job" and to "two jobs".
3. Build one co-activation graph per property and compare their PageRank
   feature rankings and Louvain communities.
4. Prune the two most central input features and re-check the property.

Run from the repository root:  python demos/taxi_cross_property.py
Artifacts go to coactiv-out/taxi_cross_property (or $COACTIV_OUT).
"""
import json
import warnings
from pathlib import Path

from coactiv.dqn import load_train_config
from coactiv.experiments import default_output_dir, load_pipeline_config, run_pipeline, train_until_verified
from coactiv.models import load_shipped
from coactiv.pctl import parse_property
from coactiv.policy import read_policy, save_policy

CONFIGS = Path(__file__).resolve().parent / "configs"
OUT = Path(default_output_dir()) / "taxi_cross_property"
OUT.mkdir(parents=True, exist_ok=True)

# %% train (or reuse) a policy
policy_path = OUT / "taxi_policy.json"
if policy_path.exists():
    policy = read_policy(policy_path)
    print(f"reusing {policy_path}")
else:
    cfg = load_train_config(CONFIGS / "taxi_train.ini")
    run = train_until_verified(load_shipped("taxi"), cfg, parse_property("P>=0.99 [ F jobs_done=1 ]"))
    save_policy(run.policy, policy_path)
    print(f"trained for {len(run.log)} episodes ({run.steps} steps), stopped early: {run.stopped_early}")

# %% the full pipeline: chain, checks, datasets, graphs, analysis, pruning
config = load_pipeline_config(CONFIGS / "taxi_pipeline.cfg", {"policy": str(policy_path)})
with warnings.catch_warnings():
    warnings.simplefilter("ignore", UserWarning)  # small datasets; the manifest keeps the messages
    result = run_pipeline(config, OUT / "pipeline")
manifest = result.manifest

print(f"\ninduced chain: {result.chain.n_states} states, {result.chain.fallbacks} fallback choices")
for label, summary in manifest["results"].items():
    print(f"  {summary['property']:<32} = {summary['initial_value']}")

# %% datasets and how they relate
for ds in result.datasets:
    print(f"dataset {ds.label_set[0]!r}: {len(ds)} states")
print("relations:", json.dumps(manifest["dataset_relations"]))

# %% structure per property
cmp = result.comparison
for label, report in cmp.reports.items():
    top = ", ".join(f"{name} {score:.3f}" for name, score in report.features[:4])
    print(f"{label}: modularity {report.partition.modularity:.3f}, "
          f"{report.partition.n_communities} communities; top features: {top}")
for (a, b), overlap in cmp.overlaps.items():
    print(f"community overlap {a} vs {b}: {overlap.agreement:.0%} of {overlap.n_shared} neurons")

# %% pruning the two most central features
prune = manifest["prune"]
print(f"\npruning {prune['features']}: {prune['property']} goes {prune['baseline']} -> {prune['pruned']}")
print(f"manifest: {result.manifest_path}")
