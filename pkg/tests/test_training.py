#!/usr/bin/env python3
"""
测试任务损失、Adam、检查点与训练循环
"""

import json
import math
import struct

import numpy as np
import pytest

from bagmil.core.exceptions import CompatibilityError, ContractError, DataFormatError, MigrationError
from bagmil.datasets import ScenarioSpec, make_bags, synth_glyphs
from bagmil.models import IduConfig, MilModel, MiWeights
from bagmil.models.parameters import ParameterSet
from bagmil.numerics import Tensor
from bagmil.training import (
    AdamState, Checkpoint, SupervisedConfig, TrainConfig, adam_step, finetune, load_checkpoint, load_model,
    save_checkpoint, task_loss, task_loss_value, train, train_instance_classifier,
)


def _bags(task, pool, n_bags=8, mean=3.0, seed=0):
    return make_bags(ScenarioSpec.for_task(task, mean_cardinality=mean, std_cardinality=0.0, n_bags=n_bags,
                                           seed=seed), pool)


# ---- 损失 ----

@pytest.mark.parametrize('z,y', [(0.3, 1), (-2.0, 0), (5.0, 0), (-40.0, 1)])
def test_classifier_loss_matches_bce(z, y):
    """logit 形式与 −[y ln σ + (1−y) ln(1−σ)] 一致"""
    p = 1.0 / (1.0 + math.exp(-z))
    expected = -(y * math.log(p) + (1 - y) * math.log1p(-p)) if abs(z) < 30 else (
        abs(z) if (z < 0) == (y == 1) else 0.0)
    assert task_loss(Tensor(z), y, 'classifier').item() == pytest.approx(expected, rel=1e-9, abs=1e-12)
    assert task_loss_value(z, y, 'classifier') == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_regressor_loss():
    assert task_loss(Tensor(2.5), 4, 'regressor').item() == pytest.approx(2.25)
    assert task_loss_value(0.0, 0, 'regressor') == 0.0


@pytest.mark.parametrize('target,variant', [(2, 'classifier'), (-1, 'regressor'), (1, 'ranker')])
def test_task_loss_rejects_bad_targets(target, variant):
    with pytest.raises(ContractError):
        task_loss(Tensor(0.0), target, variant)


# ---- Adam ----

def test_adam_first_steps():
    """前两步的更新量约为 lr（偏差校正后 m̂/√v̂ = ±1）"""
    params = ParameterSet({'w': np.array([1.0, -1.0])})
    config = TrainConfig(lr=0.1, weight_decay=0.0)
    state = adam_step(params, {'w': np.array([0.5, -2.0])}, AdamState(), config)
    assert np.allclose(params['w'], [0.9, -0.9], atol=1e-6)
    adam_step(params, {'w': np.array([0.5, -2.0])}, state, config)
    assert np.allclose(params['w'], [0.8, -0.8], atol=1e-6)
    assert state.step == 2


def test_adam_weight_decay_without_gradient_signal():
    """零梯度时权重只按 lr·wd 收缩，一维偏置保持不变"""
    params = ParameterSet({'w': np.array([[2.0]]), 'bias': np.array([2.0])})
    adam_step(params, {'w': np.array([[0.0]]), 'bias': np.array([0.0])}, AdamState(),
              TrainConfig(lr=0.1, weight_decay=0.5))
    assert np.allclose(params['w'], [[2.0 - 0.1 * 0.5 * 2.0]])
    assert np.array_equal(params['bias'], [2.0])


def _scalar_adam(theta, grads, lr, beta1, beta2, eps, weight_decay):
    """逐坐标的标量 Adam 参照实现"""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        theta = theta - lr * weight_decay * theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


def test_adam_matches_scalar_reference_over_100_steps():
    rng = np.random.default_rng(5)
    start = rng.normal(size=(3, 2))
    bias_start = rng.normal(size=2)
    grads = rng.normal(size=(100, 3, 2))
    bias_grads = rng.normal(size=(100, 2))
    config = TrainConfig(lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-2)

    params = ParameterSet({'w': start, 'bias': bias_start})
    state = AdamState()
    for step in range(100):
        adam_step(params, {'w': grads[step], 'bias': bias_grads[step]}, state, config)

    for i in range(3):
        for j in range(2):
            expected = _scalar_adam(start[i, j], grads[:, i, j], 1e-2, 0.9, 0.999, 1e-8, 1e-2)
            assert abs(params['w'][i, j] - expected) <= 1e-10
    for j in range(2):
        expected = _scalar_adam(bias_start[j], bias_grads[:, j], 1e-2, 0.9, 0.999, 1e-8, 0.0)
        assert abs(params['bias'][j] - expected) <= 1e-10


def test_adam_skips_missing_gradients():
    params = ParameterSet({'a': np.ones(2), 'b': np.ones(2)})
    adam_step(params, {'a': np.ones(2)}, AdamState(), TrainConfig(lr=0.1, weight_decay=0.0))
    assert np.array_equal(params['b'], np.ones(2))


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(lr=0.0)
    with pytest.raises(ContractError):
        TrainConfig(mi_batch_size=1)


def test_train_config_dict_round_trip():
    config = TrainConfig(epochs=3, mi=MiWeights(alpha=0.2, beta=0.0, gamma=0.3))
    assert TrainConfig.from_dict(config.to_dict()) == config


# ---- 检查点 ----

def test_checkpoint_round_trip_is_bit_exact(tmp_path, tiny_spec):
    model = MilModel.initialize(tiny_spec(pooling='gated_attention', mi=True), 9)
    checkpoint = Checkpoint.from_model(model, train_config=TrainConfig().to_dict(), epoch=4,
                                       extra={'config_hash': 'abc', 'seed': 9})
    save_checkpoint(checkpoint, tmp_path / 'ck.bin')
    loaded = load_checkpoint(tmp_path / 'ck.bin')
    assert loaded.spec == model.spec
    assert loaded.epoch == 4 and loaded.extra == {'config_hash': 'abc', 'seed': 9}
    assert loaded.params.names() == model.params.names()
    for name in model.params.names():
        assert loaded.params[name].tobytes() == model.params[name].tobytes()


def _saved(tmp_path, tiny_spec):
    path = tmp_path / 'ck.bin'
    save_checkpoint(Checkpoint.from_model(MilModel.initialize(tiny_spec(), 0)), path)
    return path


def test_checkpoint_bad_magic(tmp_path, tiny_spec):
    path = _saved(tmp_path, tiny_spec)
    path.write_bytes(b'XXXX' + path.read_bytes()[4:])
    with pytest.raises(DataFormatError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path, tiny_spec):
    path = _saved(tmp_path, tiny_spec)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(DataFormatError):
        load_checkpoint(path)


def test_checkpoint_trailing_bytes(tmp_path, tiny_spec):
    path = _saved(tmp_path, tiny_spec)
    path.write_bytes(path.read_bytes() + b'\x00' * 8)
    with pytest.raises(DataFormatError):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path, tiny_spec):
    path = _saved(tmp_path, tiny_spec)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack('<I', 99)
    path.write_bytes(bytes(data))
    with pytest.raises(MigrationError):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(DataFormatError):
        load_checkpoint(tmp_path / 'none.bin')


def _rewrite_metadata(path, edit):
    """改写检查点的 JSON 元数据，张量数据保持不变"""
    data = path.read_bytes()
    _, meta_len = struct.unpack('<II', data[4:12])
    metadata = json.loads(data[12:12 + meta_len].decode('utf-8'))
    edit(metadata)
    encoded = json.dumps(metadata).encode('utf-8')
    path.write_bytes(data[:4] + struct.pack('<II', 1, len(encoded)) + encoded + data[12 + meta_len:])


@pytest.mark.parametrize('key', ['model_spec', 'tensors'])
def test_checkpoint_missing_metadata_key(tmp_path, tiny_spec, key):
    path = _saved(tmp_path, tiny_spec)
    _rewrite_metadata(path, lambda metadata: metadata.pop(key))
    with pytest.raises(DataFormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_dropped_tensor(tmp_path, tiny_spec):
    """缺少参数的检查点在读取时就报错，而不是推理时"""
    model = MilModel.initialize(tiny_spec(), 0)
    names = model.params.names()
    kept = ParameterSet({name: model.params[name] for name in names[1:]})
    path = tmp_path / 'ck.bin'
    save_checkpoint(Checkpoint(spec=model.spec, params=kept), path)
    with pytest.raises(DataFormatError):
        load_model(path)


def test_checkpoint_rejects_wrong_tensor_shape(tmp_path, tiny_spec):
    model = MilModel.initialize(tiny_spec(), 0)
    params = ParameterSet({name: model.params[name] for name in model.params.names()
                           if name != 'head.weight'})
    params.add('head.weight', np.zeros((3, 1)))
    path = tmp_path / 'ck.bin'
    save_checkpoint(Checkpoint(spec=model.spec, params=params), path)
    with pytest.raises(DataFormatError):
        load_checkpoint(path)


# ---- 训练循环 ----

def test_train_rejects_mismatched_task(tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(task='single_digit'), 0)
    with pytest.raises(CompatibilityError):
        train(model, _bags('counting', pool, n_bags=4), None, TrainConfig(epochs=1))


def test_train_rejects_mi_without_heads(tiny_spec, pool):
    model = MilModel.initialize(tiny_spec(mi=False), 0)
    with pytest.raises(CompatibilityError):
        train(model, _bags('single_digit', pool, n_bags=4), None, TrainConfig(epochs=1, mi=MiWeights()))


@pytest.mark.slow
def test_training_is_deterministic(tiny_spec, glyph_pool):
    """相同种子两次训练得到逐位相同的参数"""
    bags = _bags('single_digit', glyph_pool, n_bags=6)
    config = TrainConfig(epochs=2, lr=1e-2, seed=3)
    first = MilModel.initialize(tiny_spec(), 1)
    second = MilModel.initialize(tiny_spec(), 1)
    ck_a, history_a = train(first, bags, None, config)
    ck_b, _ = train(second, bags, None, config)
    for name in ck_a.params.names():
        assert np.array_equal(ck_a.params[name], ck_b.params[name])
    assert len(history_a.records) == 2 and history_a.best_epoch == 2
    assert all(np.isfinite(r.train_loss) for r in history_a.records)


@pytest.mark.slow
def test_training_with_mi_records_terms(tiny_spec, glyph_pool):
    bags = _bags('single_digit', glyph_pool, n_bags=4)
    model = MilModel.initialize(tiny_spec(mi=True), 2)
    before = {name: model.params[name].copy() for name in model.params.names()}
    _, history = train(model, bags, None, TrainConfig(epochs=1, mi=MiWeights(), mi_batch_size=4))
    record = history.records[0]
    assert set(record.mi) == {'global_term', 'local_term', 'prior_encoder_term', 'prior_discriminator_term'}
    assert not np.array_equal(before['mi.prior.b2'], model.params['mi.prior.b2'])


@pytest.mark.slow
def test_early_stopping_keeps_best_epoch(tiny_spec, glyph_pool):
    train_bags = _bags('single_digit', glyph_pool, n_bags=6, seed=1)
    val_bags = _bags('single_digit', glyph_pool, n_bags=4, seed=2)
    model = MilModel.initialize(tiny_spec(), 0)
    checkpoint, history = train(model, train_bags, val_bags, TrainConfig(epochs=4, patience=1, lr=1e-2))
    assert checkpoint.epoch == history.best_epoch
    assert all(r.val_error is not None for r in history.records)
    if history.stopped_early:
        assert len(history.records) == history.best_epoch + 1
    for name in model.params.names():
        assert np.array_equal(checkpoint.params[name], model.params[name])


@pytest.mark.slow
def test_finetune_continues_training(tiny_spec, glyph_pool):
    bags = _bags('counting', glyph_pool, n_bags=4)
    model = MilModel.initialize(tiny_spec(task='counting'), 0)
    before = model.params['head.bias'].copy()
    history = finetune(model, bags, TrainConfig(epochs=10, lr=1e-2), epochs=1)
    assert len(history.records) == 1
    assert not np.array_equal(before, model.params['head.bias'])


@pytest.mark.slow
def test_instance_classifier_smoke(tiny_idu, glyph_pool):
    classifier = train_instance_classifier(glyph_pool, tiny_idu, SupervisedConfig(epochs=1, batch_size=40))
    assert classifier.predict(glyph_pool.images[:7]).shape == (7,)


@pytest.mark.slow
def test_lenet_reaches_held_out_accuracy_on_glyphs():
    """每类 200 个字形训练的 LeNet 在另一种子生成的字形上准确率 >= 95%"""
    train_pool = synth_glyphs(200, seed=11, split='train')
    held_out = synth_glyphs(30, seed=12, split='test')
    idu = IduConfig(conv1_channels=20, conv2_channels=50, fc1_units=128, feature_dim=64)
    classifier = train_instance_classifier(train_pool, idu, SupervisedConfig(epochs=4, batch_size=32, seed=1))
    assert classifier.accuracy(held_out) >= 95.0
