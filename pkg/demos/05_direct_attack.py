"""
Direct attack on the selected records
=====================================

For each selected record and each target model, the model's loss on the
record is compared with the reference loss distribution. A small p-value
says the model fits the record better than models that never saw it.
Ground truth membership is known, so we can count hits and false alarms.
"""

# %%
import numpy as np

from gmia import ProtocolConfig, attack, direct_attack, make_cancer_like, prepare

config = ProtocolConfig(seed=11)
state = prepare(make_cancer_like(11), config)
report = attack(state, config)
print("selected:", report.selected)
print("target models: train accuracy %.3f, test accuracy %.3f"
      % (state.accuracy.train_mean, state.accuracy.test_mean))

# %%
for m in report.metrics("direct"):
    prec = "-" if m.precision is None else f"{m.precision:.3f}"
    print(f"p < {m.cutoff:g}: precision {prec}, recall {m.recall:.3f} ({m.tp} hits, {m.fp} false alarms)")
print("guessing 'member' every time:", report.always_infer_precision())

# %%
# The same test for a single model, as an auditor would run it.
record = state.target_pool.get(report.selected[0])
row = state.target_pool.ids.index(record.id)
for j in range(4):
    result = direct_attack(state.target_models[j], record, state.ensemble, state.model_ids[j])
    print(f"{result.model_id}: p = {result.p_value:.4f}, member = {bool(state.plan.matrix()[row, j])}")
