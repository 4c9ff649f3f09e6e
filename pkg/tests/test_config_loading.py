#!/usr/bin/env python3
"""
测试配置文件加载
验证任务默认值、未知键拒绝、命令行覆盖与配置哈希
"""

import json

import pytest

from bagmil.core.config import (
    RunConfig, apply_overrides, config_hash, derive_seed, load_config, save_config, validate_config,
)
from bagmil.core.exceptions import ConfigError


def test_task_defaults_filled():
    """未给出的场景参数按任务填充"""
    config = validate_config({'task': 'counting'})
    assert (config.m, config.sigma, config.n_train_bags) == (15.0, 0.0, 1000)
    assert validate_config({'task': 'outlier'}).n_train_bags == 4000
    assert validate_config({'task': 'single_digit', 'm': 4.0}).m == 4.0


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as info:
        validate_config({'task': 'single_digit', 'learning_rate': 0.1})
    assert 'learning_rate' in str(info.value)


@pytest.mark.parametrize('data', [
    {'input_size': 32},
    {'task': 'regression'},
    {'mi_enabled': True, 'mi_alpha': 0.0, 'mi_beta': 0.0, 'mi_gamma': 0.0},
    {'m': 0.5},
    {'lr': 0.0},
])
def test_invalid_values_rejected(data):
    with pytest.raises(ConfigError):
        validate_config(data)


def test_load_config_from_file(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'task': 'multi_digit', 'pooling': 'mean', 'seed': 3}), encoding='utf-8')
    config = load_config(path)
    assert config.task == 'multi_digit' and config.pooling == 'mean' and config.m == 12.0


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'missing.json')
    bad = tmp_path / 'bad.json'
    bad.write_text('{not json', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(bad)
    listing = tmp_path / 'list.json'
    listing.write_text('[1, 2]', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(listing)


def test_load_config_falls_back_to_defaults(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv('HOME', str(tmp_path))
    assert load_config() == RunConfig()


def test_save_and_reload(tmp_path):
    config = validate_config({'task': 'outlier', 'k_outliers': 2, 'epochs': 3})
    save_config(config, tmp_path / 'out' / 'config.json')
    assert load_config(tmp_path / 'out' / 'config.json') == config


def test_task_override_resets_scenario_defaults():
    """切换任务时场景参数回到新任务的默认值"""
    config = validate_config({'task': 'counting'})
    switched = apply_overrides(config, {'task': 'outlier', 'seed': None})
    assert (switched.m, switched.sigma, switched.n_train_bags) == (6.0, 1.0, 4000)
    kept = apply_overrides(config, {'task': 'outlier', 'm': 9.0})
    assert kept.m == 9.0


def test_config_hash_ignores_paths_and_workers():
    base = validate_config({'task': 'single_digit'})
    moved = apply_overrides(base, {'out_dir': '/tmp/elsewhere', 'eval_workers': 8, 'log_level': 'DEBUG'})
    assert config_hash(base) == config_hash(moved)
    assert config_hash(base) != config_hash(apply_overrides(base, {'seed': 1}))


def test_derived_objects():
    config = validate_config({'task': 'multi_digit', 'mi_enabled': False, 'hidden_dim': 16})
    spec = config.model_spec()
    assert spec.mi_hidden is None and spec.hidden_dim == 16
    assert config.train_config().mi is None
    assert config.scenario('test').seed == derive_seed(0, 'bags/test')
    assert config.scenario('val').n_bags == 200
    assert derive_seed(0, 'a') != derive_seed(0, 'b')
