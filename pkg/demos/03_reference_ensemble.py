"""
Reference models and the loss distribution of a record
======================================================

The adversary trains many models on bootstrap samples of its own data. For a
target record, the losses of these models describe what an *out* model looks
like; a fitted CDF turns any target model's loss into a p-value.
"""

# %%
import tempfile

import numpy as np

from gmia import (ModelSpec, TrainingConfig, build_reference_models, fit_cdf, load_ensemble, make_cancer_like,
                  partition, save_ensemble)
from gmia.direct import reference_losses

universe = make_cancer_like(seed=11)
target_pool, reference_pool = partition(universe, n_target=200, seed=11)
spec = ModelSpec((universe.n_features, 10, 2))
ensemble = build_reference_models(reference_pool, k=30, sample_size=100, spec=spec,
                                  config=TrainingConfig(300, 10, 0.05), seed=11)
print(ensemble.k, "reference models")

# %%
record = target_pool.record(0)
losses = reference_losses(ensemble, record.features, record.label)
cdf = fit_cdf(losses)
print("reference losses for", record.id, ":", np.round(np.sort(losses)[:5], 4), "...")
for loss in (losses.min() / 10, np.median(losses), losses.max()):
    print(f"loss {loss:.4g} -> p {float(cdf(loss)):.3f}")

# %%
# Ensembles are written to a directory and reloaded bit for bit.
where = tempfile.mkdtemp()
save_ensemble(where, ensemble)
again = load_ensemble(where, reference_pool)
print("round trip identical:", all(a.equals(b) for a, b in zip(ensemble.models, again.models)))
