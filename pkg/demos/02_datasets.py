"""
Loading tabular data and splitting it for the protocol
======================================================

A dataset arrives as a CSV plus a JSON schema. Numeric columns are
standardized and categorical ones one-hot encoded. The record universe is
then cut into a target pool (the records being audited) and a disjoint
reference pool (the adversary's own data).
"""

# %%
import json
import tempfile
from pathlib import Path

import numpy as np

from gmia import Schema, load_csv, make_cancer_like, make_split_plan, partition
from gmia.datasets import bootstrap_sample

workdir = Path(tempfile.mkdtemp())
(workdir / "patients.csv").write_text(
    "pid,age,smoker,label\n"
    "p1,34,yes,0\n"
    "p2,51,no,1\n"
    "p3,47,no,1\n"
    "p4,29,yes,0\n"
)
schema = {"id": "pid", "label": "label",
          "columns": [{"name": "age", "kind": "numeric"}, {"name": "smoker", "kind": "categorical"}]}
(workdir / "patients.schema.json").write_text(json.dumps(schema))

data = load_csv(workdir / "patients.csv", Schema.load(workdir / "patients.schema.json"))
print(data.ids)
print(np.round(data.X, 3))   # age standardized, smoker one-hot

# %%
# The synthetic stand-in for the breast-cancer table used throughout the demos.
universe = make_cancer_like(seed=11)
target_pool, reference_pool = partition(universe, n_target=200, seed=11)
print(len(universe), "records ->", len(target_pool), "target /", len(reference_pool), "reference")
print("shared ids:", set(target_pool.ids) & set(reference_pool.ids))

# %%
# Each protocol repeat splits the target pool into two halves and trains one
# model per half, so every record is a member of exactly one model per repeat.
plan = make_split_plan(target_pool, n_repeats=10, seed=11)
print("membership matrix shape:", plan.matrix().shape)
print("memberships of the first records:", plan.matrix().sum(axis=1)[:5])

# Reference models see bootstrap samples of the reference pool.
sample = bootstrap_sample(reference_pool, 100, seed=3)
print("bootstrap draws", len(sample), "rows,", len(set(sample.ids)), "distinct")
