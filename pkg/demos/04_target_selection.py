"""
Which records are worth attacking?
==================================

A record is flagged as vulnerable when it has few neighbors in the
reference models' last hidden layer, compared with how many neighbors a
typical record would be expected to have. A smaller distance radius or a
larger neighbor budget can only grow the selected set.
"""

# %%
from dataclasses import replace

from gmia import ProtocolConfig, make_cancer_like, prepare, select_vulnerable
from gmia.evaluation import selection_params

config = ProtocolConfig(seed=11, n_repeats=10)
state = prepare(make_cancer_like(11), config)

verdicts = select_vulnerable(state.target_pool, state.reference_pool, state.ensemble, selection_params(state, config))
flagged = [v for v in verdicts if v.selected]
for v in flagged:
    print(f"{v.record_id}: {v.neighbor_count} neighbors (budget {v.expected_neighbors:.3f})")

# %%
for delta, beta in [(0.1, 0.1), (0.05, 0.1), (0.05, 1.0)]:
    params = selection_params(state, replace(config, delta=delta, beta=beta))
    chosen = [v.record_id for v in select_vulnerable(state.target_pool, state.reference_pool, state.ensemble, params)
              if v.selected]
    print(f"delta={delta} beta={beta}: {len(chosen)} selected")
