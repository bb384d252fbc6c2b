"""Critical vs. non-critical states within one property.

A state is critical when the spread between the policy's highest and lowest
Q-value reaches a threshold: there the choice of action matters most.  The
two groups get separate co-activation graphs whose rankings and communities
are compared.

The training config scales rewards by -0.01, so Q-values are about a
hundredth of the model's reward units.  The threshold here is picked from the
spread distribution so that roughly the top tenth of states is critical.

Run after demos/taxi_cross_property.py (it reuses that policy):
    python demos/taxi_critical_states.py
"""
import warnings
from pathlib import Path

import numpy as np

from coactiv.dtmc import build_induced_dtmc
from coactiv.experiments import AnalysisParams, compare_labels, default_output_dir
from coactiv.labeling import label_critical, q_gaps, write_dataset
from coactiv.models import load_shipped
from coactiv.pctl import check_reachability, parse_property, relevant_states
from coactiv.policy import read_policy

OUT = Path(default_output_dir()) / "taxi_cross_property"
policy_path = OUT / "taxi_policy.json"
if not policy_path.exists():
    raise SystemExit(f"{policy_path} not found; run demos/taxi_cross_property.py first")

m = load_shipped("taxi")
p = read_policy(policy_path)
chain = build_induced_dtmc(m, p)
result = check_reachability(chain, parse_property("P=? [ F jobs_done=2 ]"))
states = relevant_states(chain, result, "until_target")
print(f"P=? [ F jobs_done=2 ] = {result.initial_value} over {len(states)} relevant states")

# %% pick a threshold from the Q-value spreads
gaps = q_gaps(p, states)
print("spread quantiles (0, 25, 50, 75, 90, 100 %):", np.round(np.quantile(gaps, [0, .25, .5, .75, .9, 1]), 3))
tau = float(np.quantile(gaps, 0.9))
ds = label_critical(p, states, tau, feature_names=m.variable_names)
print(f"threshold {tau:.3f}: {ds.counts()}")
write_dataset(ds, OUT / "critical_states.csv")

# %% compare the two groups
with warnings.catch_warnings():
    warnings.simplefilter("ignore", UserWarning)
    cmp = compare_labels(m, p, [ds], AnalysisParams())
for label, report in cmp.reports.items():
    top = ", ".join(name for name, _ in report.features[:3])
    print(f"{label:>12}: modularity {report.partition.modularity:.3f}, top features {top}")
for (a, b), overlap in cmp.overlaps.items():
    print(f"community overlap {a} vs {b}: {overlap.agreement:.0%}")
