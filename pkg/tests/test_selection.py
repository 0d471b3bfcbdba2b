import numpy as np
import pytest

from gmia.datasets import Dataset
from gmia.selection import (SelectionParams, cosine_distance, count_neighbors, expected_training_neighbors,
                            feature_matrix, neighbor_counts, record_feature_vector, select_vulnerable,
                            selected_ids, write_verdicts)
from gmia.model import last_layer_output


def test_feature_vector(small_ensemble, small_pool):
    r = small_pool.record(0)
    f = record_feature_vector(small_ensemble, r)
    assert f.shape == (8 * 2,)
    np.testing.assert_allclose(f[2:4], last_layer_output(small_ensemble.models[1], r.features), atol=1e-15)
    np.testing.assert_allclose(feature_matrix(small_ensemble, small_pool.X[:3])[0], f, atol=1e-12)


def test_cosine_distance_cases():
    a = np.array([1.0, 2.0, -1.0])
    assert cosine_distance(a, a) == pytest.approx(0, abs=1e-15)
    assert cosine_distance(np.array([1.0, 0]), np.array([0, 3.0])) == pytest.approx(1)
    assert cosine_distance(a, -a) == pytest.approx(2)
    assert cosine_distance(np.zeros(3), a) == 2


def test_neighbor_counts_edges(small_ensemble, small_pool):
    r = small_pool.record(0)
    assert count_neighbors(r, small_pool, small_ensemble, 1e-300) == 0
    with pytest.raises(ValueError):
        SelectionParams(0.0, 0.1, 10, 10)
    with pytest.raises(ValueError):
        SelectionParams(2.5, 0.1, 10, 10)
    everything = count_neighbors(r, small_pool, small_ensemble, 2.0)
    assert everything <= len(small_pool) - 1
    twin = Dataset(("twin",), r.features[None], np.array([r.label]), 2)
    assert count_neighbors(r, twin, small_ensemble, 1e-9) == 1


def test_counts_agree_and_relation_is_symmetric(small_ensemble, small_pool):
    counts = neighbor_counts(small_pool, small_pool, small_ensemble, 0.05)
    single = [count_neighbors(r, small_pool, small_ensemble, 0.05) for r in small_pool]
    np.testing.assert_array_equal(counts, single)
    F = feature_matrix(small_ensemble, small_pool.X)
    from gmia.selection import cosine_distances
    near = cosine_distances(F, F) < 0.05
    np.testing.assert_array_equal(near, near.T)


def test_expected_neighbors():
    assert expected_training_neighbors(0, 100, 400) == 0
    assert expected_training_neighbors(7, 50, 50) == 7
    assert expected_training_neighbors(6, 10_000, 28_842) == pytest.approx(2.08, abs=0.005)
    assert expected_training_neighbors(6, 10_000, 28_842, "inverse") == pytest.approx(6 * 2.8842)


def test_selection_rule_and_monotonicity(cancer_state):
    pool, ref, ens = cancer_state.target_pool, cancer_state.reference_pool, cancer_state.ensemble
    verdicts = select_vulnerable(pool, ref, ens, SelectionParams(0.1, 0.1, 100, 499))
    assert all(v.selected == (v.expected_neighbors < 0.1) for v in verdicts)
    assert selected_ids(select_vulnerable(pool, ref, ens, SelectionParams(0.1, 0.0, 100, 499))) == []
    prev = set()
    for beta in (0.0, 0.1, 0.5, 1.0, 5.0):
        cur = set(selected_ids(select_vulnerable(pool, ref, ens, SelectionParams(0.1, beta, 100, 499))))
        assert prev <= cur
        prev = cur
    prev = set()
    for delta in (0.3, 0.2, 0.1, 0.05, 0.01):
        cur = set(selected_ids(select_vulnerable(pool, ref, ens, SelectionParams(delta, 0.5, 100, 499))))
        assert prev <= cur
        prev = cur


def test_duplicate_is_never_selected(cancer_state):
    ref, ens = cancer_state.reference_pool, cancer_state.ensemble
    r = ref.record(0)
    cand = Dataset(("copy",), r.features[None], np.array([r.label]), 2)
    params = SelectionParams(0.1, 100 / 499, 100, 499)
    assert not select_vulnerable(cand, ref, ens, params)[0].selected


def test_selection_ignores_target_models(cancer_state):
    from dataclasses import replace
    stripped = replace(cancer_state, target_models=(), model_ids=())
    a = select_vulnerable(cancer_state.target_pool, cancer_state.reference_pool, cancer_state.ensemble,
                          SelectionParams(0.1, 0.1, 100, 499))
    b = select_vulnerable(stripped.target_pool, stripped.reference_pool, stripped.ensemble,
                          SelectionParams(0.1, 0.1, 100, 499))
    assert a == b


def test_verdicts_csv(tmp_path, cancer_state):
    params = SelectionParams(0.1, 0.1, 100, 499)
    verdicts = select_vulnerable(cancer_state.target_pool, cancer_state.reference_pool, cancer_state.ensemble, params)
    write_verdicts(tmp_path / "v.csv", verdicts, params)
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "record_id,neighbor_count,expected_neighbors,selected,delta,beta"
    assert len(lines) == 201
