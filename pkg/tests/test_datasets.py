#!/usr/bin/env python3
"""
测试实例池读取、合成字形与多示例包生成
"""

import json
import struct
from collections import Counter

import numpy as np
import pytest

from bagmil.core.exceptions import ContractError, DataConsistencyError, DataFormatError, GenerationError
from bagmil.datasets import (
    InstancePool, ScenarioSpec, label_rule, load_bags, load_mnist_idx, load_pool, make_bags, make_pair_bags,
    read_manifest, sample_cardinality, save_bags, save_pool, shuffle_bag, singletons, summarize_bags,
    synth_glyphs, write_idx,
)
from bagmil.datasets.mnist import IMAGES_MAGIC
from bagmil.numerics import Rng

from conftest import random_pool


# ---- IDX ----

def test_idx_round_trip(tmp_path, pool):
    write_idx(pool.images, pool.labels, tmp_path / 'img', tmp_path / 'lbl')
    loaded = load_mnist_idx(tmp_path / 'img', tmp_path / 'lbl')
    assert np.array_equal(loaded.images, pool.images)
    assert np.array_equal(loaded.labels, pool.labels)


def test_idx_header_counts(tmp_path, pool):
    """头部记录的数量与尺寸"""
    write_idx(pool.images, pool.labels, tmp_path / 'img', tmp_path / 'lbl')
    magic, count, rows, cols = struct.unpack('>IIII', (tmp_path / 'img').read_bytes()[:16])
    assert (magic, count, rows, cols) == (IMAGES_MAGIC, len(pool), 28, 28)


def test_idx_rejects_wrong_magic(tmp_path, pool):
    write_idx(pool.images, pool.labels, tmp_path / 'img', tmp_path / 'lbl')
    data = bytearray((tmp_path / 'img').read_bytes())
    data[0:4] = struct.pack('>I', 1234)
    (tmp_path / 'img').write_bytes(bytes(data))
    with pytest.raises(DataFormatError):
        load_mnist_idx(tmp_path / 'img', tmp_path / 'lbl')


def test_idx_rejects_truncation(tmp_path, pool):
    write_idx(pool.images, pool.labels, tmp_path / 'img', tmp_path / 'lbl')
    data = (tmp_path / 'img').read_bytes()
    (tmp_path / 'img').write_bytes(data[:-10])
    with pytest.raises(DataFormatError):
        load_mnist_idx(tmp_path / 'img', tmp_path / 'lbl')


def test_idx_count_mismatch(tmp_path, pool):
    write_idx(pool.images, pool.labels, tmp_path / 'img', tmp_path / 'lbl')
    write_idx(pool.images[:5], pool.labels[:5], tmp_path / 'img5', tmp_path / 'lbl5')
    with pytest.raises(DataConsistencyError):
        load_mnist_idx(tmp_path / 'img', tmp_path / 'lbl5')


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(DataFormatError):
        load_mnist_idx(tmp_path / 'nope', tmp_path / 'nope2')


# ---- 合成字形与实例池 ----

def test_synth_glyphs_deterministic():
    a = synth_glyphs(3, seed=5)
    b = synth_glyphs(3, seed=5)
    assert np.array_equal(a.images, b.images)
    assert a.images.dtype == np.uint8 and a.images.shape == (30, 28, 28)
    assert a.histogram() == {c: 3 for c in range(10)}


def test_synth_glyphs_rejects_empty():
    with pytest.raises(ContractError):
        synth_glyphs(0, seed=1)


def test_pool_manifest_is_reproducible(tmp_path):
    """相同的合成输入得到相同的清单哈希"""
    pools = {'train': synth_glyphs(2, seed=7, split='train'), 'test': synth_glyphs(2, seed=7, split='test')}
    first = save_pool(pools, tmp_path / 'a', 'synthetic:2:7')
    second = save_pool(pools, tmp_path / 'b', 'synthetic:2:7')
    assert first['manifest_hash'] == second['manifest_hash']
    assert first['splits']['train']['count'] == 20
    loaded = load_pool(tmp_path / 'a', 'test')
    assert np.array_equal(loaded.images, pools['test'].images)


def test_pool_checksum_mismatch(tmp_path, pool):
    save_pool({'train': pool}, tmp_path, 'test')
    manifest = read_manifest(tmp_path)
    path = tmp_path / manifest['splits']['train']['labels_file']
    data = bytearray(path.read_bytes())
    data[-1] = (data[-1] + 1) % 10
    path.write_bytes(bytes(data))
    with pytest.raises(DataConsistencyError):
        load_pool(tmp_path, 'train')


def test_crop_to_27(pool):
    assert pool.crop(27).image_shape == (27, 27)
    assert pool.crop(28) is pool


# ---- 包标签规则 ----

def test_label_rule_examples():
    assert label_rule('single_digit', [1, 9, 3]).value == 1
    assert label_rule('single_digit', [1, 2, 3]).value == 0
    assert label_rule('multi_digit', [3, 4, 6]).value == 1
    assert label_rule('multi_digit', [3, 3, 4]).value == 0
    assert label_rule('counting', [9, 9, 1, 9]).value == 3
    assert label_rule('outlier', [4, 4, 4]).value == 0
    assert label_rule('outlier', [4, 4, 7]).value == 1


def _oracle(task, labels):
    """独立循环实现的包标签"""
    if task == 'single_digit':
        return int(any(c == 9 for c in labels))
    if task == 'multi_digit':
        return int(any(c == 3 for c in labels) and any(c == 6 for c in labels))
    if task == 'counting':
        return sum(1 for c in labels if c == 9)
    return int(any(c != labels[0] for c in labels))


@pytest.mark.parametrize('task', ['single_digit', 'multi_digit', 'counting', 'outlier'])
def test_generated_bags_agree_with_oracle(task, pool):
    """一万个包的标签与独立规则一致"""
    spec = ScenarioSpec.for_task(task, n_bags=10000, seed=11)
    bags = make_bags(spec, pool)
    assert len(bags) == 10000
    for bag in bags:
        assert bag.target.value == _oracle(task, list(bag.instance_labels))


@pytest.mark.parametrize('task', ['single_digit', 'multi_digit', 'outlier'])
def test_binary_bags_balanced(task, pool):
    bags = make_bags(ScenarioSpec.for_task(task, n_bags=1000, seed=2), pool)
    summary = summarize_bags(bags)
    assert summary['n_positive'] == 500 and summary['n_negative'] == 500


def test_counting_target_histogram(pool):
    bags = make_bags(ScenarioSpec.for_task('counting', n_bags=300, seed=4), pool)
    summary = summarize_bags(bags)
    recount = Counter(str(list(b.instance_labels).count(9)) for b in bags)
    assert summary['target_histogram'] == dict(sorted(recount.items(), key=lambda kv: int(kv[0])))


def test_make_bags_deterministic(pool):
    spec = ScenarioSpec.for_task('multi_digit', n_bags=50, seed=8)
    a, b = make_bags(spec, pool), make_bags(spec, pool)
    assert all(np.array_equal(x.instances, y.instances) and x.instance_labels == y.instance_labels
               for x, y in zip(a, b))


def test_cardinality_minimum():
    rng = Rng(0)
    sizes = [sample_cardinality(1.0, 5.0, rng, minimum=2) for _ in range(200)]
    assert min(sizes) >= 2


def test_cardinality_distribution_monte_carlo():
    """m=10、σ=2 抽一万次，均值与标准差落在 ±0.1 内"""
    rng = Rng(21)
    sizes = np.array([sample_cardinality(10.0, 2.0, rng) for _ in range(10000)], dtype=np.float64)
    assert abs(sizes.mean() - 10.0) <= 0.1
    assert abs(sizes.std() - 2.0) <= 0.1


def test_sigma_zero_fixed_cardinality(pool):
    bags = make_bags(ScenarioSpec.for_task('counting', n_bags=20, seed=1), pool)
    assert {b.cardinality for b in bags} == {15}


def test_missing_witness_class_fails():
    pool = random_pool()
    keep = pool.labels != 9
    without_nine = InstancePool(pool.images[keep], pool.labels[keep])
    with pytest.raises(GenerationError):
        make_bags(ScenarioSpec.for_task('single_digit', n_bags=10, seed=0), without_nine)


def test_pair_bags_have_exactly_one_pair(pool):
    bags = make_pair_bags(40, 20, pool, seed=3)
    for bag in bags:
        labels = list(bag.instance_labels)
        assert bag.cardinality == 20
        if bag.target.value == 1:
            assert labels.count(3) == 1 and labels.count(6) == 1
        else:
            assert labels.count(3) + labels.count(6) == 1


def test_shuffle_keeps_labels_aligned(pool):
    bag = make_bags(ScenarioSpec.for_task('single_digit', n_bags=2, seed=0), pool)[0]
    shuffled = shuffle_bag(bag, Rng(1))
    assert shuffled.target == bag.target
    assert sorted(shuffled.instance_labels) == sorted(bag.instance_labels)
    for image, label in zip(shuffled.instances, shuffled.instance_labels):
        matches = [i for i in range(bag.cardinality) if np.array_equal(bag.instances[i], image)]
        assert any(bag.instance_labels[i] == label for i in matches)


@pytest.mark.parametrize('task', ['single_digit', 'multi_digit', 'counting', 'outlier'])
def test_repeated_shuffles_keep_target(task, pool):
    """同一个包打乱一百次，按潜在标签重新推出的包标签始终不变"""
    bag = make_bags(ScenarioSpec.for_task(task, n_bags=2, seed=5), pool)[0]
    rng = Rng(9)
    for _ in range(100):
        shuffled = shuffle_bag(bag, rng)
        assert _oracle(task, list(shuffled.instance_labels)) == bag.target.value
        assert label_rule(task, shuffled.instance_labels) == bag.target


def test_singletons(pool):
    bag = make_bags(ScenarioSpec.for_task('single_digit', n_bags=2, seed=0), pool)[0]
    parts = singletons(bag)
    assert len(parts) == bag.cardinality
    assert all(p.cardinality == 1 and p.target is None for p in parts)


def test_bag_cache_round_trip(tmp_path, pool):
    spec = ScenarioSpec.for_task('outlier', n_bags=30, seed=6)
    bags = make_bags(spec, pool)
    digest_a = save_bags(tmp_path / 'a.bin', bags, 'outlier', 'train', spec, 'abc')
    digest_b = save_bags(tmp_path / 'b.bin', bags, 'outlier', 'train', spec, 'abc')
    assert digest_a == digest_b
    cache = load_bags(tmp_path / 'a.bin')
    assert cache.task == 'outlier' and cache.scenario == spec and cache.pool_manifest_hash == 'abc'
    for x, y in zip(bags, cache.bags):
        assert np.array_equal(x.instances, y.instances)
        assert x.instance_labels == y.instance_labels and x.target == y.target


def test_bag_cache_rejects_bad_magic(tmp_path):
    (tmp_path / 'bad.bin').write_bytes(b'NOTBAGS!' + b'\x00' * 10)
    with pytest.raises(DataFormatError):
        load_bags(tmp_path / 'bad.bin')


def _write_cache(path, header, payload=b''):
    encoded = json.dumps(header).encode('utf-8')
    path.write_bytes(b'MILBAGS1' + struct.pack('<I', len(encoded)) + encoded + payload)


def test_bag_cache_rejects_header_without_image_shape(tmp_path):
    _write_cache(tmp_path / 'bad.bin', {'bags': [], 'task': 'single_digit', 'split': 'train'})
    with pytest.raises(DataFormatError):
        load_bags(tmp_path / 'bad.bin')


def test_bag_cache_rejects_label_count_mismatch(tmp_path):
    """包的潜在标签数与实例数不一致视为文件损坏"""
    header = {
        'task': 'single_digit', 'split': 'train', 'image_shape': [2, 2],
        'bags': [{'bag_id': 0, 'cardinality': 2, 'labels': [9], 'target': {'variant': 'binary', 'value': 1}}],
    }
    _write_cache(tmp_path / 'bad.bin', header, b'\x00' * 8)
    with pytest.raises(DataFormatError):
        load_bags(tmp_path / 'bad.bin')
