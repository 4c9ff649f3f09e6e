#!/usr/bin/env python3
"""
评估协议
置换鲁棒性、包大小泛化、多种子重复实验与 k 折交叉验证
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..core.config import RunConfig, apply_overrides, derive_seed
from ..core.exceptions import CompatibilityError, ContractError
from ..datasets.bags import Bag, make_bags, make_pair_bags, shuffle_bag
from ..datasets.mnist import InstancePool
from ..models.mil_model import MilModel, ModelSpec
from ..numerics.rng import Rng
from .metrics import MetricBundle, error_rate, metrics_from_predictions, predict_bags, summarize_seeds

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class PermutationReport:
    """
    置换鲁棒性结果（百分比）

    Attributes:
        mean / std: 各次置换错误率的均值与总体标准差
        errors: 每次置换的错误率
        unshuffled_error: 原始顺序的错误率
        label_flip_fraction: 预测标签相对原始顺序发生变化的 (包, 置换) 比例
    """

    mean: float
    std: float
    errors: List[float]
    unshuffled_error: float
    label_flip_fraction: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_perm': len(self.errors),
            'mean': self.mean,
            'std': self.std,
            'errors': self.errors,
            'unshuffled_error': self.unshuffled_error,
            'label_flip_fraction': self.label_flip_fraction,
        }


def permutation_robustness(model: MilModel, bags: Sequence[Bag], n_perm: int = 100, seed: int = 0,
                           workers: int = 1) -> PermutationReport:
    """
    每次把所有包的实例顺序重新打乱后评估错误率

    Args:
        model: 已训练模型
        bags: 测试包
        n_perm: 置换次数
        seed: 运行种子（使用其 'eval/perm' 子流）
        workers: 评估线程数
    """
    if n_perm < 1:
        raise ContractError(f"n_perm 必须 >= 1，当前 {n_perm}")
    if not bags:
        raise ContractError("permutation_robustness 需要非空的包列表")
    baseline = predict_bags(model, bags, workers)
    reference = [p.label for p in baseline]
    unshuffled_error = metrics_from_predictions(baseline, bags).error_rate

    rng = Rng(seed).substream('eval/perm')
    errors: List[float] = []
    flips = 0
    for p in range(n_perm):
        shuffled = [shuffle_bag(bag, rng) for bag in bags]
        predictions = predict_bags(model, shuffled, workers)
        errors.append(metrics_from_predictions(predictions, shuffled).error_rate)
        flips += sum(int(pred.label != ref) for pred, ref in zip(predictions, reference))
        logger.debug(f"置换 {p + 1}/{n_perm}: 错误率 {errors[-1]:.2f}%")

    report = PermutationReport(
        mean=float(np.mean(errors)),
        std=float(np.std(errors)),
        errors=errors,
        unshuffled_error=unshuffled_error,
        label_flip_fraction=flips / (n_perm * len(bags)),
    )
    logger.info(f"📊 置换鲁棒性: {report.mean:.2f}±{report.std:.2f}% ({n_perm} 次), "
                f"原始顺序 {unshuffled_error:.2f}%, 标签翻转比例 {report.label_flip_fraction:.4f}")
    return report


@dataclass
class CardinalityReport:
    """每个包大小的错误率；finetuned 只在开启微调时给出"""

    sizes: List[int]
    errors: Dict[int, float] = field(default_factory=dict)
    finetuned_errors: Dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'sizes': self.sizes,
            'errors': {str(k): v for k, v in self.errors.items()},
            'finetuned_errors': {str(k): v for k, v in self.finetuned_errors.items()},
        }


def cardinality_generalization(model: MilModel, pool_train: InstancePool, pool_test: InstancePool,
                               sizes: Sequence[int], finetune: bool = False, config=None,
                               n_train_bags: int = 1000, n_test_bags: int = 1000, seed: int = 0,
                               workers: int = 1) -> CardinalityReport:
    """
    在更大的包上测试多数字模型：正包只含一对 (3, 6)，负包只含一个见证实例

    Args:
        model: 已训练的多数字模型（不会被修改）
        pool_train / pool_test: 微调与测试用的实例池
        sizes: 目标包大小
        finetune: 是否先用 n_train_bags/5 个新大小的包微调模型副本
        config: 微调用的 TrainConfig
        n_train_bags: 原始训练包数量
        n_test_bags: 每个大小的测试包数量
        seed: 运行种子

    Raises:
        CompatibilityError: 模型不是多数字任务
        ContractError: 开启微调但没有给出训练配置
    """
    if model.spec.task != 'multi_digit':
        raise CompatibilityError(f"包大小泛化需要 multi_digit 模型，当前 {model.spec.task}")
    if finetune and config is None:
        raise ContractError("微调需要训练配置")

    report = CardinalityReport(sizes=[int(s) for s in sizes])
    for size in report.sizes:
        test_bags = make_pair_bags(n_test_bags, size, pool_test, derive_seed(seed, f"cardinality/test/{size}"))
        report.errors[size] = error_rate(model, test_bags, workers).error_rate
        message = f"📊 包大小 {size}: 错误率 {report.errors[size]:.2f}%"
        if finetune:
            from ..training.trainer import finetune as run_finetune

            tuned = model.copy()
            tune_bags = make_pair_bags(max(2, n_train_bags // 5), size, pool_train,
                                       derive_seed(seed, f"cardinality/train/{size}"))
            run_finetune(tuned, tune_bags, config, epochs=config.epochs)
            report.finetuned_errors[size] = error_rate(tuned, test_bags, workers).error_rate
            message += f", 微调后 {report.finetuned_errors[size]:.2f}%"
        logger.info(message)
    return report


def _run_once(config: RunConfig, pool_train: InstancePool, pool_test: InstancePool) -> MetricBundle:
    from ..training.trainer import train

    train_bags = make_bags(config.scenario('train'), pool_train)
    val_bags = make_bags(config.scenario('val'), pool_train)
    test_bags = make_bags(config.scenario('test'), pool_test)
    model = MilModel.initialize(config.model_spec(), config.seed)
    train(model, train_bags, val_bags, config.train_config())
    return error_rate(model, test_bags, config.eval_workers)


def repeat_experiment(config: RunConfig, pool_train: InstancePool, pool_test: InstancePool,
                      seeds: Sequence[int] = DEFAULT_SEEDS,
                      poolings: Optional[Sequence[str]] = None) -> Dict[str, MetricBundle]:
    """
    多种子重复实验：每种池化方式、每个种子重新生成包并从头训练

    Args:
        config: 基础运行配置
        pool_train / pool_test: 实例池
        seeds: 种子列表
        poolings: 池化方式列表，缺省时只用 config.pooling

    Returns:
        {池化方式: 均值 ± 标准差汇总}
    """
    poolings = list(poolings) if poolings else [config.pooling]
    results: Dict[str, MetricBundle] = {}
    for pooling in poolings:
        bundles = []
        for seed in seeds:
            logger.info(f"🚀 重复实验: {config.task}/{pooling}, 种子 {seed}")
            bundles.append(_run_once(apply_overrides(config, {'pooling': pooling, 'seed': seed}),
                                     pool_train, pool_test))
        results[pooling] = summarize_seeds(bundles, seeds)
        summary = results[pooling]
        logger.info(f"📊 {pooling}: 错误率 {summary.mean['error_rate']:.2f}±{summary.std['error_rate']:.2f}%")
    return results


def cross_validate(spec: ModelSpec, bags: Sequence[Bag], config, folds: int = 10,
                   seed: int = 0, workers: int = 1) -> MetricBundle:
    """
    k 折交叉验证：每折从头训练，在留出折上评估；汇总各折的均值与标准差

    Args:
        spec: 模型结构
        bags: 全部包
        config: TrainConfig
        folds: 折数
        seed: 划分与初始化种子
    """
    from ..training.trainer import train

    if folds < 2 or len(bags) < folds:
        raise ContractError(f"无法把 {len(bags)} 个包划分为 {folds} 折")
    order = Rng(seed).substream('cv/split').permutation(len(bags))
    assignment = np.array_split(np.asarray(order, dtype=np.int64), folds)

    bundles = []
    for fold, held_out in enumerate(assignment):
        held = set(int(i) for i in held_out)
        test_bags = [bags[i] for i in sorted(held)]
        train_bags = [bags[i] for i in range(len(bags)) if i not in held]
        model = MilModel.initialize(spec, derive_seed(seed, f"cv/{fold}"))
        train(model, train_bags, None, config)
        bundles.append(error_rate(model, test_bags, workers))
        logger.info(f"📊 第 {fold + 1}/{folds} 折: 错误率 {bundles[-1].error_rate:.2f}%")
    return summarize_seeds(bundles, list(range(folds)))
