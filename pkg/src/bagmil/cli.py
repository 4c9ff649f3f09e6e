#!/usr/bin/env python3
"""
bagmil 命令行入口
数据准备、包生成、训练、评估与分析导出
"""

import sys
import json
import logging
import argparse
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .core.config import RunConfig, apply_overrides, config_hash, load_config, save_config
from .core.exceptions import BagMilError, CompatibilityError, InputDataError
from .datasets import (
    BagCache, InstancePool, ScenarioSpec, load_bags, load_mnist_dir, load_pool, make_bags, read_manifest,
    save_bags, save_pool, summarize_bags, synth_glyphs,
)
from .datasets.bags import TASK_CLUSTERS
from .evaluation import (
    MetricBundle, cardinality_generalization, cluster_bags, error_rate, export_features, export_states,
    instance_evaluation, permutation_robustness, repeat_experiment, summarize_seeds,
)
from .models import MilModel
from .numerics import set_debug_numerics
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train
from .utils.log_utils import setup_logging
from .utils.run_utils import create_run_dir, file_sha256, provenance, save_artifact_json

logger = logging.getLogger(__name__)


# ---- 公共辅助 ----

def _parse_int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError as e:
        raise InputDataError(f"无法解析整数列表: {text}") from e


def _resolve_config(args: argparse.Namespace, overrides: Dict[str, Any]) -> RunConfig:
    config = load_config(Path(args.config)) if getattr(args, 'config', None) else load_config()
    return apply_overrides(config, overrides)


def _load_pools(data_dir: str, input_size: int) -> Tuple[InstancePool, InstancePool, str]:
    """读取训练/测试实例池（按输入大小裁剪），返回清单哈希"""
    manifest = read_manifest(data_dir)
    pool_train = load_pool(data_dir, 'train', manifest=manifest).crop(input_size)
    pool_test = load_pool(data_dir, 'test', manifest=manifest).crop(input_size)
    return pool_train, pool_test, manifest['manifest_hash']


def run_id_for(config: RunConfig) -> str:
    return f"{config.task}_{config.pooling}_s{config.seed}_{config_hash(config)[:8]}"


def _checkpoint_provenance(checkpoint: Checkpoint) -> Tuple[str, int]:
    return str(checkpoint.extra.get('config_hash', '')), int(checkpoint.extra.get('seed', 0))


def _load_eval_inputs(ckpt_path: str, bags_path: str) -> Tuple[Checkpoint, MilModel, BagCache]:
    """读取检查点与包缓存，并检查任务是否一致"""
    checkpoint = load_checkpoint(ckpt_path)
    cache = load_bags(bags_path)
    if cache.task != checkpoint.spec.task:
        raise CompatibilityError(f"检查点任务 {checkpoint.spec.task} 与包缓存任务 {cache.task} 不匹配")
    return checkpoint, checkpoint.to_model(), cache


def _default_output(ckpt_path: str, name: str) -> Path:
    return Path(ckpt_path).parent / name


# ---- 子命令 ----

def cmd_data_prepare(args: argparse.Namespace) -> int:
    """读取 MNIST 或生成合成字形，缓存实例池与清单"""
    if args.mnist_dir:
        pools = load_mnist_dir(args.mnist_dir)
        source = 'mnist'
    else:
        pools = {
            'train': synth_glyphs(args.synthetic, args.seed, 'train'),
            'test': synth_glyphs(args.synthetic, args.seed, 'test'),
        }
        source = f"synthetic:{args.synthetic}:{args.seed}"
    manifest = save_pool(pools, args.out, source)
    counts = ", ".join(f"{k}={v['count']}" for k, v in manifest['splits'].items())
    print(f"manifest_hash={manifest['manifest_hash']} ({counts})")
    return 0


def cmd_bags_generate(args: argparse.Namespace) -> int:
    """按场景生成包并写出缓存与摘要"""
    config = _resolve_config(args, {
        'task': args.task, 'seed': args.seed, 'm': args.m, 'sigma': args.sigma,
        'k_outliers': args.k_outliers, 'data_dir': args.data_dir,
    })
    manifest = read_manifest(config.data_dir)
    pool_split = 'test' if args.split == 'test' else 'train'
    pool = load_pool(config.data_dir, pool_split, manifest=manifest).crop(config.input_size)
    spec = config.scenario(args.split, n_bags=args.n)
    bags = make_bags(spec, pool)

    out = Path(args.out) if args.out else Path(config.out_dir) / f"bags_{config.task}_{args.split}.bin"
    cache_hash = save_bags(out, bags, config.task, args.split, spec, manifest['manifest_hash'])
    summary = summarize_bags(bags)
    summary.update({'cache_sha256': cache_hash, 'scenario': spec.to_dict(), 'split': args.split})
    save_artifact_json(out.with_suffix('.summary.json'), summary, config_hash(config), config.seed)
    print(json.dumps({'cache_sha256': cache_hash, 'n_positive': summary['n_positive'],
                      'n_negative': summary['n_negative'],
                      'cardinality_histogram': summary['cardinality_histogram'],
                      'target_histogram': summary['target_histogram']}, sort_keys=True))
    return 0


def _bags_for_split(config: RunConfig, split: str, path: Optional[str],
                    pool: InstancePool) -> Tuple[List, Optional[ScenarioSpec]]:
    """返回 (包列表, 场景规格)；来自缓存时沿用缓存记录的场景"""
    if path:
        cache = load_bags(path)
        if cache.task != config.task:
            raise CompatibilityError(f"配置任务 {config.task} 与包缓存任务 {cache.task} 不匹配: {path}")
        return cache.bags, cache.scenario
    scenario = config.scenario(split)
    return make_bags(scenario, pool), scenario


def _metrics_with_seeds(bundle: MetricBundle, seed: int) -> Dict[str, Any]:
    """单次运行也写出 per_seed / mean / std，与 repeat 的结果结构一致"""
    summary = summarize_seeds([bundle], [seed])
    return {**bundle.to_dict(), 'per_seed': summary.per_seed, 'mean': summary.mean, 'std': summary.std}


def cmd_train(args: argparse.Namespace) -> int:
    """训练并在测试包上评估，所有产物写入运行目录"""
    overrides = {
        'task': args.task, 'pooling': args.pooling, 'seed': args.seed, 'epochs': args.epochs,
        'data_dir': args.data_dir, 'out_dir': args.out_dir,
    }
    if args.no_mi:
        overrides['mi_enabled'] = False
    config = _resolve_config(args, overrides)
    set_debug_numerics(config.debug_numerics)
    digest = config_hash(config)
    run_dir = create_run_dir(config.out_dir, run_id_for(config))
    save_config(config, run_dir / 'config.json')

    pool_train, pool_test, manifest_hash = _load_pools(config.data_dir, config.input_size)
    train_bags, _ = _bags_for_split(config, 'train', config.train_bags_path, pool_train)
    val_bags, _ = _bags_for_split(config, 'val', config.val_bags_path, pool_train)
    test_bags, test_scenario = _bags_for_split(config, 'test', config.test_bags_path, pool_test)
    save_bags(run_dir / 'bags_test.bin', test_bags, config.task, 'test', test_scenario, manifest_hash)

    model = MilModel.initialize(config.model_spec(), config.seed)
    checkpoint, history = train(model, train_bags, val_bags, config.train_config())
    checkpoint.extra.update({'config_hash': digest, 'seed': config.seed, 'pool_manifest_hash': manifest_hash})
    save_checkpoint(checkpoint, run_dir / 'checkpoint.bin')
    save_artifact_json(run_dir / 'history.json', history.to_dict(), digest, config.seed)

    comment = provenance(digest, config.seed)
    export_features(model, test_bags, run_dir / 'features.csv', comment=comment, workers=config.eval_workers)
    if config.pooling == 'bilstm':
        export_states(model, test_bags, run_dir / 'states.csv', comment=comment)

    bundle = error_rate(model, test_bags, config.eval_workers)
    save_artifact_json(run_dir / 'results.json', {
        'task': config.task,
        'pooling': config.pooling,
        'seeds': [config.seed],
        'metrics': _metrics_with_seeds(bundle, config.seed),
        'best_epoch': history.best_epoch,
        'checkpoint_sha256': file_sha256(run_dir / 'checkpoint.bin'),
    }, digest, config.seed)
    print(f"run_dir={run_dir} error_rate={bundle.error_rate:.2f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """测试错误率，可选置换鲁棒性与包大小泛化"""
    checkpoint, model, cache = _load_eval_inputs(args.ckpt, args.bags)
    digest, seed = _checkpoint_provenance(checkpoint)
    bundle = error_rate(model, cache.bags, args.workers)
    payload: Dict[str, Any] = {
        'task': checkpoint.spec.task,
        'pooling': checkpoint.spec.pooling,
        'seeds': [seed],
        'metrics': _metrics_with_seeds(bundle, seed),
    }
    if args.perm:
        payload['permutation'] = permutation_robustness(model, cache.bags, args.perm, seed, args.workers).to_dict()
    if args.cardinality:
        sizes = _parse_int_list(args.cardinality)
        data_dir = args.data_dir or 'data/pool'
        pool_train, pool_test, _ = _load_pools(data_dir, checkpoint.spec.idu.input_size)
        train_config = None
        if args.finetune:
            train_config = TrainConfig.from_dict(checkpoint.train_config)
            if args.finetune_epochs:
                train_config = replace(train_config, epochs=args.finetune_epochs)
        payload['cardinality'] = cardinality_generalization(
            model, pool_train, pool_test, sizes, finetune=args.finetune, config=train_config,
            n_train_bags=args.n_train_bags, n_test_bags=args.n_test_bags, seed=seed, workers=args.workers,
        ).to_dict()

    out = Path(args.out) if args.out else _default_output(args.ckpt, 'eval_results.json')
    save_artifact_json(out, payload, digest, seed)
    print(json.dumps({'error_rate': bundle.error_rate, **(
        {'perm_mean': payload['permutation']['mean'], 'perm_std': payload['permutation']['std']}
        if 'permutation' in payload else {})}, sort_keys=True))
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    """单例特征 k-means 与平均簇纯度"""
    checkpoint, model, cache = _load_eval_inputs(args.ckpt, args.bags)
    digest, seed = _checkpoint_provenance(checkpoint)
    k = TASK_CLUSTERS[checkpoint.spec.task] if args.k == 'auto' else int(args.k)
    report = cluster_bags(model, cache.bags, k=k, seed=seed, restarts=args.restarts, split=cache.split,
                          workers=args.workers)
    if args.features_out:
        export_features(model, cache.bags, Path(args.features_out), comment=provenance(digest, seed),
                        workers=args.workers)
    out = Path(args.out) if args.out else _default_output(args.ckpt, f"cluster_{cache.split}.json")
    save_artifact_json(out, {'task': checkpoint.spec.task, **report.to_dict()}, digest, seed)
    print(f"k={report.k} avg_cluster_purity={report.avg_cluster_purity:.2f}")
    return 0


def cmd_export_states(args: argparse.Namespace) -> int:
    """导出前向 LSTM 隐藏状态"""
    checkpoint, model, cache = _load_eval_inputs(args.ckpt, args.bags)
    digest, seed = _checkpoint_provenance(checkpoint)
    stats = export_states(model, cache.bags, Path(args.out), comment=provenance(digest, seed))
    save_artifact_json(Path(args.out).with_suffix('.summary.json'), {'state_jumps': stats}, digest, seed)
    return 0


def cmd_instance_eval(args: argparse.Namespace) -> int:
    """单例包实例预测（TP / TN / 平均准确率）"""
    checkpoint, model, cache = _load_eval_inputs(args.ckpt, args.bags)
    digest, seed = _checkpoint_provenance(checkpoint)
    report = instance_evaluation(model, cache.bags)
    out = Path(args.out) if args.out else _default_output(args.ckpt, 'instance_results.json')
    save_artifact_json(out, report.to_dict(), digest, seed)
    print(f"tp={report.tp_rate:.2f} tn={report.tn_rate:.2f} mean_acc={report.mean_accuracy:.2f}")
    return 0


def cmd_repeat(args: argparse.Namespace) -> int:
    """多种子、多池化方式的重复实验"""
    config = _resolve_config(args, {'task': args.task, 'epochs': args.epochs, 'data_dir': args.data_dir,
                                    'out_dir': args.out_dir})
    seeds = _parse_int_list(args.seeds)
    poolings = [p.strip() for p in args.poolings.split(',') if p.strip()] if args.poolings else None
    pool_train, pool_test, _ = _load_pools(config.data_dir, config.input_size)
    results = repeat_experiment(config, pool_train, pool_test, seeds=seeds, poolings=poolings)
    digest = config_hash(config)
    out = Path(args.out) if args.out else Path(config.out_dir) / f"repeat_{config.task}_{digest[:8]}.json"
    save_artifact_json(out, {
        'task': config.task,
        'seeds': seeds,
        'results': {pooling: bundle.to_dict() for pooling, bundle in results.items()},
    }, digest, config.seed)
    for pooling, bundle in results.items():
        print(f"{pooling}: {bundle.mean['error_rate']:.2f}±{bundle.std['error_rate']:.2f}")
    return 0


# ---- 参数解析 ----

def create_parser() -> argparse.ArgumentParser:
    """创建命令行解析器"""
    parser = argparse.ArgumentParser(prog='bagmil', description='基于 LSTM 包编码的多示例学习实验工具')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='日志级别')
    parser.add_argument('--log-file', type=str, help='日志文件路径')
    subparsers = parser.add_subparsers(dest='command', required=True)

    # data prepare
    data = subparsers.add_parser('data', help='实例池准备')
    data_sub = data.add_subparsers(dest='action', required=True)
    prepare = data_sub.add_parser('prepare', help='缓存 MNIST 或合成字形实例池')
    source = prepare.add_mutually_exclusive_group(required=True)
    source.add_argument('--mnist-dir', type=str, help='官方 MNIST IDX 文件目录')
    source.add_argument('--synthetic', type=int, help='每类合成字形数量')
    prepare.add_argument('--seed', type=int, default=0, help='合成种子')
    prepare.add_argument('--out', type=str, default='data/pool', help='实例池输出目录')
    prepare.set_defaults(handler=cmd_data_prepare)

    # bags generate
    bags = subparsers.add_parser('bags', help='包生成')
    bags_sub = bags.add_subparsers(dest='action', required=True)
    generate = bags_sub.add_parser('generate', help='按场景生成包缓存')
    generate.add_argument('--config', '-c', type=str, help='配置文件路径')
    generate.add_argument('--task', choices=['single_digit', 'multi_digit', 'counting', 'outlier'])
    generate.add_argument('--n', type=int, help='包数量')
    generate.add_argument('--m', type=float, help='平均包大小')
    generate.add_argument('--sigma', type=float, help='包大小标准差')
    generate.add_argument('--k-outliers', type=int, help='离群实例数')
    generate.add_argument('--seed', type=int, help='运行种子')
    generate.add_argument('--split', choices=['train', 'val', 'test'], default='train')
    generate.add_argument('--data-dir', type=str, help='实例池目录')
    generate.add_argument('--out', type=str, help='包缓存输出路径')
    generate.set_defaults(handler=cmd_bags_generate)

    # train
    train_parser = subparsers.add_parser('train', help='训练模型')
    train_parser.add_argument('--config', '-c', type=str, help='配置文件路径')
    train_parser.add_argument('--task', choices=['single_digit', 'multi_digit', 'counting', 'outlier'])
    train_parser.add_argument('--pooling', choices=['bilstm', 'attention', 'gated_attention', 'mean', 'max'])
    train_parser.add_argument('--seed', type=int)
    train_parser.add_argument('--epochs', type=int)
    train_parser.add_argument('--no-mi', action='store_true', help='关闭互信息正则')
    train_parser.add_argument('--data-dir', type=str)
    train_parser.add_argument('--out-dir', type=str)
    train_parser.set_defaults(handler=cmd_train)

    # eval
    eval_parser = subparsers.add_parser('eval', help='评估检查点')
    _add_eval_inputs(eval_parser)
    eval_parser.add_argument('--perm', type=int, default=0, help='置换次数')
    eval_parser.add_argument('--cardinality', type=str, help='包大小列表，如 50,100,200')
    eval_parser.add_argument('--finetune', action='store_true', help='在新包大小上微调后再测试')
    eval_parser.add_argument('--finetune-epochs', type=int, help='微调轮数（缺省沿用训练配置）')
    eval_parser.add_argument('--n-train-bags', type=int, default=1000, help='原始训练包数量（微调用其 1/5）')
    eval_parser.add_argument('--n-test-bags', type=int, default=1000, help='每个包大小的测试包数量')
    eval_parser.add_argument('--data-dir', type=str, help='实例池目录（包大小泛化用）')
    eval_parser.add_argument('--out', type=str, help='结果文件路径')
    eval_parser.set_defaults(handler=cmd_eval)

    # cluster
    cluster = subparsers.add_parser('cluster', help='单例特征聚类纯度')
    _add_eval_inputs(cluster)
    cluster.add_argument('--k', default='auto', help="簇数或 'auto'（按任务确定）")
    cluster.add_argument('--restarts', type=int, default=10)
    cluster.add_argument('--features-out', type=str, help='features.csv 输出路径')
    cluster.add_argument('--out', type=str, help='结果文件路径')
    cluster.set_defaults(handler=cmd_cluster)

    # export-states
    states = subparsers.add_parser('export-states', help='导出 LSTM 隐藏状态')
    _add_eval_inputs(states)
    states.add_argument('--out', type=str, required=True, help='states.csv 输出路径')
    states.set_defaults(handler=cmd_export_states)

    # instance-eval
    instance = subparsers.add_parser('instance-eval', help='单例包实例预测')
    _add_eval_inputs(instance)
    instance.add_argument('--out', type=str, help='结果文件路径')
    instance.set_defaults(handler=cmd_instance_eval)

    # repeat
    repeat = subparsers.add_parser('repeat', help='多种子重复实验')
    repeat.add_argument('--config', '-c', type=str, help='配置文件路径')
    repeat.add_argument('--task', choices=['single_digit', 'multi_digit', 'counting', 'outlier'])
    repeat.add_argument('--seeds', type=str, default='0,1,2,3,4')
    repeat.add_argument('--poolings', type=str, help='池化方式列表，如 bilstm,attention,gated_attention')
    repeat.add_argument('--epochs', type=int)
    repeat.add_argument('--data-dir', type=str)
    repeat.add_argument('--out-dir', type=str)
    repeat.add_argument('--out', type=str, help='结果文件路径')
    repeat.set_defaults(handler=cmd_repeat)

    return parser


def _add_eval_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--ckpt', type=str, required=True, help='检查点路径')
    parser.add_argument('--bags', type=str, required=True, help='包缓存路径')
    parser.add_argument('--workers', type=int, default=1, help='评估线程数')


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数，返回退出码"""
    parser = create_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, args.log_file)

    try:
        return args.handler(args)
    except BagMilError as e:
        logger.error(f"❌ {e}")
        if getattr(e, 'diagnostics', None):
            logger.error(f"❌ 诊断信息: {json.dumps(e.diagnostics, ensure_ascii=False, default=str)}")
        return e.exit_code
    except Exception as e:
        logger.error(f"❌ 程序异常: {e}")
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
