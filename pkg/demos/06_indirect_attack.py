"""
Indirect attack: querying *other* points
========================================

Some records leave no trace in the model's output on the record itself, yet
training on them shifts predictions elsewhere. The indirect attack searches
for query points whose reference outputs move consistently when the target
record is added, then combines the per-query p-values while accounting for
their correlation.
"""

# %%
from dataclasses import replace

from gmia import (IndirectParams, ProtocolConfig, aggregate, attack, build_positive_reference_models,
                  find_enhancing, make_cancer_like, prepare)
from gmia._seeding import hash64

config = ProtocolConfig(seed=11)
state = prepare(make_cancer_like(11), config)
target = state.target_pool.get("c0219")

search = IndirectParams(generation_mode="gaussian_around_target", noise_scale=1.0, n_candidates=500,
                        n_clusters=50, max_opt_steps=50)

# %%
# Reference models that were additionally updated on the target record.
positive = build_positive_reference_models(state.ensemble, target, config.update, config.positive_batches)
found = find_enhancing(target, state.ensemble, positive, search, state.reference_pool.feature_ranges(),
                       seed=hash64(config.seed_for("enhancing"), target.id))
print(len(found), "enhancing queries; best influence", max((e.influence for e in found), default=None))

# %%
both = replace(config, attack_kinds=("direct", "indirect"), attack_records=(target.id,), indirect=search)
report = attack(state, both)
for kind in ("direct", "indirect"):
    m = aggregate(report.rows, [0.01], kind)[0]
    print(f"{kind:8s} at p < 0.01: {m.tp} hits, {m.fp} false alarms")
