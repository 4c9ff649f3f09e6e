#!/usr/bin/env python3
"""
测试命令行入口
数据准备、包生成、训练与评估子命令的退出码和产物
"""

import json

import pytest

from bagmil.cli import main
from bagmil.datasets import load_bags
from bagmil.training import load_checkpoint

TINY = {
    'task': 'single_digit',
    'm': 3.0,
    'sigma': 0.0,
    'n_train_bags': 4,
    'n_val_bags': 2,
    'n_test_bags': 4,
    'conv1_channels': 2,
    'conv2_channels': 3,
    'fc1_units': 8,
    'feature_dim': 6,
    'hidden_dim': 4,
    'attention_dim': 5,
    'mi_hidden': 4,
    'mi_batch_size': 4,
    'epochs': 1,
    'log_level': 'WARNING',
}


def _prepare(tmp_path, name='pool', n=3, seed=1):
    out = tmp_path / name
    assert main(['--log-level', 'WARNING', 'data', 'prepare', '--synthetic', str(n), '--seed', str(seed),
                 '--out', str(out)]) == 0
    return out


def _config(tmp_path, pool_dir, **extra):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({**TINY, 'data_dir': str(pool_dir), 'out_dir': str(tmp_path / 'runs'), **extra}),
                    encoding='utf-8')
    return path


def test_data_prepare_is_reproducible(tmp_path, capsys):
    """相同的合成参数得到相同的清单哈希"""
    _prepare(tmp_path, 'a')
    first = capsys.readouterr().out
    _prepare(tmp_path, 'b')
    second = capsys.readouterr().out
    assert first.startswith('manifest_hash=') and first == second


def test_missing_mnist_dir_exits_with_input_error(tmp_path):
    assert main(['--log-level', 'ERROR', 'data', 'prepare', '--mnist-dir', str(tmp_path / 'nope'),
                 '--out', str(tmp_path / 'pool')]) == 2


def test_bags_generate_writes_cache_and_summary(tmp_path, capsys):
    pool_dir = _prepare(tmp_path)
    config = _config(tmp_path, pool_dir)
    out = tmp_path / 'bags' / 'train.bin'
    capsys.readouterr()
    assert main(['--log-level', 'WARNING', 'bags', 'generate', '--config', str(config), '--n', '10',
                 '--out', str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed['n_positive'] == 5 and printed['n_negative'] == 5
    cache = load_bags(out)
    assert cache.task == 'single_digit' and len(cache.bags) == 10
    summary = json.loads(out.with_suffix('.summary.json').read_text(encoding='utf-8'))
    assert summary['cache_sha256'] == printed['cache_sha256']
    assert 'config_hash' in summary and summary['seed'] == 0


def test_bags_generate_missing_pool(tmp_path):
    config = _config(tmp_path, tmp_path / 'absent')
    assert main(['--log-level', 'ERROR', 'bags', 'generate', '--config', str(config)]) == 2


def test_unknown_config_key_exits_with_input_error(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'task': 'single_digit', 'bogus': 1}), encoding='utf-8')
    assert main(['--log-level', 'ERROR', 'bags', 'generate', '--config', str(path)]) == 2


@pytest.mark.slow
@pytest.mark.integration
def test_train_then_analyse(tmp_path):
    """训练一轮后依次运行 eval / cluster / export-states / instance-eval"""
    pool_dir = _prepare(tmp_path)
    config = _config(tmp_path, pool_dir)
    assert main(['--log-level', 'WARNING', 'train', '--config', str(config)]) == 0

    run_dirs = list((tmp_path / 'runs').iterdir())
    assert len(run_dirs) == 1
    run_dir = run_dirs[0]
    for name in ('config.json', 'bags_test.bin', 'checkpoint.bin', 'history.json', 'results.json',
                 'features.csv', 'states.csv'):
        assert (run_dir / name).exists()
    checkpoint = load_checkpoint(run_dir / 'checkpoint.bin')
    results = json.loads((run_dir / 'results.json').read_text(encoding='utf-8'))
    assert results['config_hash'] == checkpoint.extra['config_hash']
    metrics = results['metrics']
    assert 0.0 <= metrics['error_rate'] <= 100.0
    assert metrics['per_seed'][0]['seed'] == 0
    assert metrics['mean']['error_rate'] == metrics['error_rate'] and metrics['std']['error_rate'] == 0.0
    n_instances = sum(b.cardinality for b in load_bags(run_dir / 'bags_test.bin').bags)
    assert len((run_dir / 'features.csv').read_text(encoding='utf-8').splitlines()) == 2 + n_instances

    ckpt, bags = str(run_dir / 'checkpoint.bin'), str(run_dir / 'bags_test.bin')
    assert main(['--log-level', 'WARNING', 'eval', '--ckpt', ckpt, '--bags', bags, '--perm', '2']) == 0
    evaluation = json.loads((run_dir / 'eval_results.json').read_text(encoding='utf-8'))
    assert evaluation['permutation']['n_perm'] == 2
    assert {'mean', 'std'} <= set(evaluation['permutation'])

    features = tmp_path / 'features.csv'
    assert main(['--log-level', 'WARNING', 'cluster', '--ckpt', ckpt, '--bags', bags, '--restarts', '2',
                 '--features-out', str(features)]) == 0
    cluster = json.loads((run_dir / 'cluster_test.json').read_text(encoding='utf-8'))
    assert cluster['k'] == 2 and features.exists()

    states = tmp_path / 'states.csv'
    assert main(['--log-level', 'WARNING', 'export-states', '--ckpt', ckpt, '--bags', bags,
                 '--out', str(states)]) == 0
    assert states.exists() and states.with_suffix('.summary.json').exists()

    assert main(['--log-level', 'WARNING', 'instance-eval', '--ckpt', ckpt, '--bags', bags]) == 0
    assert (run_dir / 'instance_results.json').exists()


@pytest.mark.slow
@pytest.mark.integration
def test_eval_rejects_task_mismatch(tmp_path):
    pool_dir = _prepare(tmp_path)
    config = _config(tmp_path, pool_dir, mi_enabled=False)
    assert main(['--log-level', 'WARNING', 'train', '--config', str(config)]) == 0
    run_dir = next((tmp_path / 'runs').iterdir())
    counting = tmp_path / 'counting.bin'
    assert main(['--log-level', 'WARNING', 'bags', 'generate', '--config', str(config), '--task', 'counting',
                 '--n', '2', '--m', '3', '--out', str(counting)]) == 0
    assert main(['--log-level', 'ERROR', 'eval', '--ckpt', str(run_dir / 'checkpoint.bin'),
                 '--bags', str(counting)]) == 4


@pytest.mark.slow
@pytest.mark.integration
def test_train_keeps_scenario_of_given_test_cache(tmp_path):
    """指定测试包缓存时，运行目录中的 bags_test.bin 记录缓存自己的场景"""
    pool_dir = _prepare(tmp_path)
    config = _config(tmp_path, pool_dir, mi_enabled=False, pooling='mean')
    cache_path = tmp_path / 'given_test.bin'
    assert main(['--log-level', 'WARNING', 'bags', 'generate', '--config', str(config), '--split', 'test',
                 '--n', '4', '--m', '4', '--seed', '7', '--out', str(cache_path)]) == 0
    config = _config(tmp_path, pool_dir, mi_enabled=False, pooling='mean', test_bags_path=str(cache_path))
    assert main(['--log-level', 'WARNING', 'train', '--config', str(config)]) == 0

    run_dir = next((tmp_path / 'runs').iterdir())
    given = load_bags(cache_path)
    saved = load_bags(run_dir / 'bags_test.bin')
    assert saved.scenario == given.scenario
    assert saved.scenario.mean_cardinality == 4.0
    assert (run_dir / 'features.csv').exists() and not (run_dir / 'states.csv').exists()
