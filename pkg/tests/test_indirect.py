import warnings
from dataclasses import replace

import numpy as np
import pytest

from gmia.datasets import BootstrapSample, Dataset, Record
from gmia.direct import query_attack
from gmia.ensemble import Ensemble
from gmia.indirect import (IndirectParams, InfluenceScore, cluster_select, estimate_query_correlation,
                           find_enhancing, generate_candidates, hinge_gradient, hinge_objective, indirect_attack,
                           indirect_attack_many, influence, influence_scores, optimize_enhancing, query_features,
                           read_enhancing, select_enhancing, write_enhancing)
from gmia.model import ConfigurationError, ModelParams, ModelSpec, TrainingConfig
from gmia.selection import cosine_distances

RANGES = (np.array([-3.0, -3.0]), np.array([3.0, 3.0]))


def _bias_ensemble(biases, kind="reference", target=None):
    spec = ModelSpec((2, 2))
    models = tuple(ModelParams(spec, (np.zeros((2, 2)),), (np.array(b, dtype=float),)) for b in biases)
    pool = Dataset(("p0",), np.zeros((1, 2)), np.zeros(1, int), 2, "pool")
    manifests = tuple(BootstrapSample("pool", ("p0",), i) for i in range(len(biases)))
    return Ensemble(models, manifests, spec, TrainingConfig(1, 1, 0.1), 0, pool, kind, target)


def _brute_force_average_linkage(dist, n_clusters):
    clusters = [[i] for i in range(len(dist))]
    while len(clusters) > n_clusters:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d = dist[np.ix_(clusters[a], clusters[b])].mean()
                if best is None or d < best[0]:
                    best = (d, a, b)
        _, a, b = best
        clusters[a] = clusters[a] + clusters.pop(b)
    return clusters


def test_uniform_candidates_stay_in_range():
    target = Record("t", np.zeros(2), 1)
    cands = generate_candidates(IndirectParams(n_candidates=200), target, RANGES, seed=1)
    X = np.array([c.features for c in cands])
    assert len(cands) == 200 and np.all(X >= -3) and np.all(X <= 3)
    assert all(c.label == 1 for c in cands)
    again = generate_candidates(IndirectParams(n_candidates=200), target, RANGES, seed=1)
    np.testing.assert_array_equal(X, np.array([c.features for c in again]))


def test_gaussian_candidates_shrink_to_target():
    target = Record("t", np.array([0.5, -1.0]), 0)
    p = IndirectParams(generation_mode="gaussian_around_target", noise_scale=1e-9, n_candidates=20)
    X = np.array([c.features for c in generate_candidates(p, target, RANGES, 0)])
    assert np.abs(X - target.features).max() < 1e-8
    with pytest.raises(ValueError):
        IndirectParams(generation_mode="gaussian_around_target", noise_scale=0.0)


def test_cluster_select_matches_brute_force(small_ensemble):
    target = Record("t", np.zeros(2), 1)
    cands = generate_candidates(IndirectParams(n_candidates=40), target, RANGES, seed=3)
    F = query_features(small_ensemble, cands)
    dist = cosine_distances(F, F)
    dist = (dist + dist.T) / 2
    np.fill_diagonal(dist, 0)
    for n_clusters in (1, 5, 12):
        clusters = _brute_force_average_linkage(dist, n_clusters)
        medoids = {c[int(np.argmin(dist[np.ix_(c, c)].mean(axis=1)))] for c in clusters}
        got = {int(r.id.split("~q")[1]) for r in cluster_select(cands, small_ensemble, n_clusters)}
        assert got == medoids


def test_cluster_select_edges(small_ensemble):
    target = Record("t", np.zeros(2), 1)
    cands = generate_candidates(IndirectParams(n_candidates=10), target, RANGES, seed=4)
    assert cluster_select(cands, small_ensemble, 10) == cands
    twins = cands[:5] + [cands[0].with_features(cands[0].features, id="dup")]
    chosen = cluster_select(twins, small_ensemble, 5)
    assert len(chosen) == 5 and not {"dup", cands[0].id} <= {c.id for c in chosen}
    with pytest.raises(ValueError):
        cluster_select(cands, small_ensemble, 11)


def test_influence_counts_strict_increases():
    ref = _bias_ensemble([[0, 0]] * 4)
    pos = _bias_ensemble([[0, 1], [0, 2], [0, 0.5], [0, 0]], "positive", "t")
    t = Record("t", np.zeros(2), 1)
    score = influence(t, Record("q", np.ones(2), 1), ref, pos)
    assert score.count == 3 and score.value == 0.75
    same = _bias_ensemble([[0, 0]] * 4, "positive", "t")
    assert influence(t, t, ref, same).value == 0


def test_influence_requires_pairing(small_ensemble, small_positive, outside_record):
    with pytest.raises(ConfigurationError):
        influence(Record("other", np.zeros(2), 0), outside_record, small_ensemble, small_positive)
    with pytest.raises(ConfigurationError):
        influence(outside_record, outside_record, small_positive, small_ensemble)


def test_target_influences_itself(small_ensemble, small_positive, outside_record):
    assert influence(outside_record, outside_record, small_ensemble, small_positive).value >= 0.9


def test_select_enhancing_threshold():
    q = Record("q", np.zeros(2), 1)
    assert select_enhancing(q, InfluenceScore(20, 20, "t", "q"), 0.95)
    assert not select_enhancing(q, InfluenceScore(19, 20, "t", "q"), 0.95)
    with pytest.warns(UserWarning):
        assert not select_enhancing(q, InfluenceScore(20, 20, "t", "q"), 1.0)
    with pytest.raises(ValueError):
        select_enhancing(q, InfluenceScore(20, 20, "t", "other"), 0.5)


def test_hinge_gradient_finite_differences(small_ensemble, small_positive, outside_record):
    x = np.array([1.0, -0.5])
    g = hinge_gradient(x, 1, small_ensemble, small_positive, 0.5)
    fd = [(hinge_objective(x + e, 1, small_ensemble, small_positive, 0.5)[0]
           - hinge_objective(x - e, 1, small_ensemble, small_positive, 0.5)[0]) / 2e-5 for e in np.eye(2) * 1e-5]
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-9)


def test_optimization_never_worsens(small_ensemble, small_positive, outside_record):
    params = IndirectParams(max_opt_steps=30, hinge_margin=0.05)
    starts = generate_candidates(params, outside_record, RANGES, seed=9, n=20)
    for q in starts:
        res = optimize_enhancing(q, outside_record, small_ensemble, small_positive, params, RANGES)
        start = influence(outside_record, q, small_ensemble, small_positive)
        assert res.influence.count >= start.count
        assert res.hinge <= res.start_hinge
        assert res.influence == influence(outside_record, res.record, small_ensemble, small_positive)
        assert np.all(res.record.features >= RANGES[0]) and np.all(res.record.features <= RANGES[1])


def test_inactive_hinge_leaves_query(small_ensemble, small_positive, outside_record):
    tiny = IndirectParams(hinge_margin=1e-300)
    q = outside_record.with_features(outside_record.features, id="q")
    gaps = hinge_objective(q.features, 1, small_ensemble, small_positive, 1e-300)[1]
    assert np.all(gaps > 0)
    res = optimize_enhancing(q, outside_record, small_ensemble, small_positive, tiny)
    np.testing.assert_array_equal(res.record.features, q.features)
    assert res.steps == 0


def test_correlation_estimate():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    b = np.array([1.0, -1.0, -1.0, 1.0])
    corr = estimate_query_correlation(np.array([a, a, b, np.full(4, 2.0)]))
    assert corr[0, 1] == pytest.approx(1) and corr[0, 0] == 1
    assert abs(corr[0, 2]) < 1e-9
    assert corr[3, 0] == 0 and corr[3, 3] == 1
    np.testing.assert_array_equal(corr, corr.T)


def test_single_query_indirect_equals_direct(small_ensemble, outside_record):
    m = small_ensemble.models[0]
    q = Record("q", np.array([0.7, 0.2]), 1)
    direct = query_attack(m, q, outside_record.label, small_ensemble).p_value
    assert indirect_attack(m, outside_record, [q], small_ensemble).p_value == pytest.approx(direct, abs=1e-12)


def test_indirect_rejects_bad_queries(small_ensemble, outside_record):
    m = small_ensemble.models[0]
    with pytest.raises(ValueError):
        indirect_attack(m, outside_record, [], small_ensemble)
    with pytest.raises(ValueError):
        indirect_attack(m, outside_record, [outside_record.with_features(outside_record.features, "q")],
                        small_ensemble)


def test_find_enhancing_and_persistence(tmp_path, small_ensemble, small_positive, outside_record):
    params = IndirectParams(n_candidates=200, n_clusters=20, max_opt_steps=20, min_enhancing=5)
    found = find_enhancing(outside_record, small_ensemble, small_positive, params, RANGES, seed=2)
    assert found
    assert all(e.influence > params.influence_threshold for e in found)
    assert all(np.linalg.norm(e.record.features - outside_record.features) > 0 for e in found)
    write_enhancing(tmp_path / "e.csv", outside_record, found)
    back = read_enhancing(tmp_path / "e.csv")
    assert [e.record.id for e in back] == [e.record.id for e in found]
    for a, b in zip(back, found):
        np.testing.assert_array_equal(a.record.features, b.record.features)
        assert (a.influence, a.opt_steps, a.seed) == (b.influence, b.opt_steps, b.seed)
    results = indirect_attack_many(small_ensemble.models[:2], outside_record, [e.record for e in back],
                                   small_ensemble, ["a", "b"])
    assert [r.model_id for r in results] == ["a", "b"]
    assert all(0 <= r.p_value <= 1 and r.kind == "indirect" for r in results)
