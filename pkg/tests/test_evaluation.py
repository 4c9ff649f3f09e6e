#!/usr/bin/env python3
"""
测试评估指标、聚类纯度、实例预测、导出与评估协议
"""

import csv

import numpy as np
import pytest

from bagmil.core.exceptions import CompatibilityError, ContractError
from bagmil.datasets import ScenarioSpec, make_bags
from bagmil.evaluation import (
    MetricBundle, cardinality_generalization, cluster_bags, cluster_purity, confusion_counts, cross_validate,
    error_rate, export_features, export_states, instance_evaluation, kmeans, permutation_robustness,
    purity_labels, summarize_seeds,
)
from bagmil.models import MilModel
from bagmil.training import TrainConfig


def _bags(task, pool, n_bags=6, mean=3.0, seed=0):
    return make_bags(ScenarioSpec.for_task(task, mean_cardinality=mean, std_cardinality=0.0, n_bags=n_bags,
                                           seed=seed), pool)


def _read_csv(path):
    with open(path, encoding='utf-8') as f:
        lines = f.read().splitlines()
    return lines[0], list(csv.reader(lines[1:]))


# ---- 指标 ----

def test_confusion_counts_oracle():
    counts = confusion_counts([1, 1, 0, 0, 1], [1, 0, 0, 1, 1], 'binary')
    assert (counts.tp, counts.fp, counts.tn, counts.fn) == (2, 1, 1, 1)
    bundle = MetricBundle.from_counts(counts)
    assert bundle.error_rate == pytest.approx(40.0)
    assert bundle.f1 == pytest.approx(100.0 * 2 * (2 / 3) * (2 / 3) / (4 / 3))


def test_counting_uses_exact_match():
    bundle = MetricBundle.from_counts(confusion_counts([2, 3, 0], [2, 2, 0], 'count'))
    assert bundle.error_rate == pytest.approx(100.0 / 3)
    assert bundle.f1 is None


def test_error_rate_rejects_empty(tiny_spec):
    with pytest.raises(ContractError):
        error_rate(MilModel.initialize(tiny_spec(), 0), [])


def test_summarize_seeds_population_std():
    bundles = [MetricBundle.from_counts(confusion_counts([1, 0], [1, 1], 'binary')),
               MetricBundle.from_counts(confusion_counts([1, 1], [1, 1], 'binary'))]
    summary = summarize_seeds(bundles, [0, 1])
    assert summary.mean['error_rate'] == pytest.approx(25.0)
    assert summary.std['error_rate'] == pytest.approx(25.0)
    assert [row['seed'] for row in summary.per_seed] == [0, 1]


# ---- k-means ----

def _blobs(seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    labels = np.repeat(np.arange(3), 20)
    return centers[labels] + rng.normal(scale=0.5, size=(60, 2)), labels


def test_kmeans_recovers_blobs():
    X, labels = _blobs()
    result = kmeans(X, 3, seed=1)
    report = cluster_purity(result.assignments, labels, k=3)
    assert report.avg_cluster_purity == pytest.approx(100.0)
    assert all(b <= a * (1 + 1e-9) + 1e-9 for a, b in zip(result.sse_history, result.sse_history[1:]))


def test_kmeans_single_cluster_sse():
    X, _ = _blobs(seed=2)
    result = kmeans(X, 1, seed=0, restarts=2)
    assert result.sse == pytest.approx(float(((X - X.mean(axis=0)) ** 2).sum()))


def test_kmeans_is_deterministic():
    X, _ = _blobs(seed=3)
    assert np.array_equal(kmeans(X, 3, seed=4).assignments, kmeans(X, 3, seed=4).assignments)


def test_kmeans_rejects_fewer_samples_than_clusters():
    with pytest.raises(ContractError):
        kmeans(np.zeros((2, 3)), 3, seed=0)


# ---- 纯度 ----

def test_cluster_purity_hand_example():
    """簇 {9,9,4} 与 {7,7} 的纯度为 (2/3 + 1)/2"""
    report = cluster_purity([0, 0, 0, 1, 1], [9, 9, 4, 7, 7], task='single_digit')
    assert report.k == 2
    assert report.avg_cluster_purity == pytest.approx(83.3333, abs=1e-3)


def test_cluster_purity_pure_and_empty():
    report = cluster_purity([0, 0, 2], [3, 3, 6], task='multi_digit')
    assert report.avg_cluster_purity == pytest.approx(100.0)
    assert report.empty_clusters == [1] and report.sizes == [2, 0, 1]


def test_purity_labels_mapping():
    assert purity_labels([9, 1, 9], 'counting') == [9, -1, 9]
    assert purity_labels([3, 6, 5], 'multi_digit') == [3, 6, -1]
    assert purity_labels([4, 7], 'outlier') == [4, 7]


def _purity_oracle(assignments, labels, k):
    """逐簇计数的朴素实现"""
    values = []
    for j in range(k):
        members = [labels[i] for i in range(len(labels)) if assignments[i] == j]
        if members:
            values.append(max(members.count(c) for c in set(members)) / len(members))
    return 100.0 * sum(values) / len(values)


@pytest.mark.parametrize('seed', range(5))
def test_cluster_purity_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    assignments = rng.integers(0, 10, size=200).tolist()
    labels = rng.integers(0, 10, size=200).tolist()
    report = cluster_purity(assignments, labels, task='outlier')
    assert report.avg_cluster_purity == pytest.approx(_purity_oracle(assignments, labels, 10))
    assert 10.0 <= report.avg_cluster_purity <= 100.0


def test_cluster_bags_auto_k(tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(task='multi_digit'), 0)
    bags = _bags('multi_digit', pool, n_bags=4)
    report = cluster_bags(model, bags, seed=0, restarts=2)
    assert report.k == 3
    assert sum(report.sizes) == sum(b.cardinality for b in bags)


# ---- 置换鲁棒性 ----

def test_permutation_invariant_model_has_zero_std(tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(pooling='mean'), 0)
    bags = _bags('single_digit', pool, n_bags=6)
    report = permutation_robustness(model, bags, n_perm=5, seed=1)
    assert report.std == 0.0
    assert report.mean == pytest.approx(report.unshuffled_error)
    assert report.label_flip_fraction == 0.0
    assert report.to_dict()['n_perm'] == 5


def test_permutation_robustness_is_reproducible(tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(), 2)
    bags = _bags('single_digit', pool, n_bags=4)
    a = permutation_robustness(model, bags, n_perm=3, seed=7)
    b = permutation_robustness(model, bags, n_perm=3, seed=7, workers=2)
    assert a.errors == b.errors


def test_permutation_rejects_zero_perm(tiny_spec, pool):
    with pytest.raises(ContractError):
        permutation_robustness(MilModel.initialize(tiny_spec(), 0), _bags('single_digit', pool, 2), n_perm=0)


# ---- 包大小泛化 ----

def test_cardinality_requires_multi_digit(tiny_spec, pool):
    with pytest.raises(CompatibilityError):
        cardinality_generalization(MilModel.initialize(tiny_spec(), 0), pool, pool, [4])


def test_cardinality_errors_per_size(tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(task='multi_digit'), 0)
    report = cardinality_generalization(model, pool, pool, [4, 6], n_test_bags=4)
    assert sorted(report.errors) == [4, 6]
    assert all(0.0 <= e <= 100.0 for e in report.errors.values())
    assert report.to_dict()['finetuned_errors'] == {}


@pytest.mark.slow
def test_cardinality_finetune_leaves_model_untouched(tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(task='multi_digit'), 0)
    before = model.params['head.weight'].copy()
    report = cardinality_generalization(model, pool, pool, [4], finetune=True, config=TrainConfig(epochs=1),
                                        n_train_bags=10, n_test_bags=4)
    assert 4 in report.finetuned_errors
    assert np.array_equal(before, model.params['head.weight'])


# ---- 实例预测 ----

def test_instance_evaluation_counts(tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(task='counting'), 0)
    bags = _bags('counting', pool, n_bags=3, mean=5.0)
    report = instance_evaluation(model, bags)
    n_nines = sum(list(b.instance_labels).count(9) for b in bags)
    assert report.n_witness == n_nines
    assert report.n_witness + report.n_other == sum(b.cardinality for b in bags)
    assert report.mean_accuracy == pytest.approx((report.tp_rate + report.tn_rate) / 2)


def test_instance_evaluation_rejects_outlier(tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(task='outlier'), 0)
    with pytest.raises(CompatibilityError):
        instance_evaluation(model, _bags('outlier', pool, n_bags=2))


# ---- 导出 ----

def test_export_states_layout(tmp_path, tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(), 0)
    bags = _bags('single_digit', pool, n_bags=3)
    stats = export_states(model, bags, tmp_path / 'states.csv', comment={'seed': 0})
    comment, rows = _read_csv(tmp_path / 'states.csv')
    assert comment.startswith('# ')
    assert rows[0] == ['bag_id', 'step', 'instance_label', 'h_0', 'h_1', 'h_2', 'h_3']
    assert len(rows) - 1 == sum(b.cardinality for b in bags)
    assert stats['n_witness_steps'] + stats['n_non_witness_steps'] == len(rows) - 1


def test_export_states_requires_bilstm(tmp_path, tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(pooling='attention'), 0)
    with pytest.raises(CompatibilityError):
        export_states(model, _bags('single_digit', pool, n_bags=2), tmp_path / 'states.csv')


def test_export_features_layout(tmp_path, tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(), 0)
    bags = _bags('single_digit', pool, n_bags=2)
    features = export_features(model, bags, tmp_path / 'features.csv')
    _, rows = _read_csv(tmp_path / 'features.csv')
    assert features.shape == (sum(b.cardinality for b in bags), 8)
    assert len(rows[0]) == 3 + 8 and len(rows) - 1 == features.shape[0]


# ---- 交叉验证 ----

@pytest.mark.slow
def test_cross_validate_folds(tiny_spec, glyph_pool):
    bags = _bags('single_digit', glyph_pool, n_bags=4)
    summary = cross_validate(tiny_spec(), bags, TrainConfig(epochs=1), folds=2, seed=0)
    assert len(summary.per_seed) == 2
    with pytest.raises(ContractError):
        cross_validate(tiny_spec(), bags[:1], TrainConfig(epochs=1), folds=2)
