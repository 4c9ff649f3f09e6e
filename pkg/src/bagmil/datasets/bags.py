#!/usr/bin/env python3
"""
多示例包生成
四种场景：单数字出现、多数字共现、数字计数、离群检测
"""

import math
import logging
from collections import Counter
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from ..core.config import TASK_DEFAULTS
from ..core.exceptions import ContractError, GenerationError
from ..numerics.rng import Rng
from .mnist import InstancePool

logger = logging.getLogger(__name__)

TASKS = ('single_digit', 'multi_digit', 'counting', 'outlier')

# 每个场景的见证类别
WITNESSES: Dict[str, Tuple[int, ...]] = {
    'single_digit': (9,),
    'multi_digit': (3, 6),
    'counting': (9,),
    'outlier': (),
}

# 每个任务的聚类数
TASK_CLUSTERS: Dict[str, int] = {
    'single_digit': 2,
    'multi_digit': 3,
    'counting': 2,
    'outlier': 10,
}


def is_binary_task(task: str) -> bool:
    return task != 'counting'


def min_cardinality(task: str) -> int:
    """二分类场景至少 2 个实例，计数场景至少 1 个"""
    return 1 if task == 'counting' else 2


@dataclass(frozen=True)
class BagTarget:
    """包级标签：二分类 {0,1} 或非负计数"""

    variant: Literal['binary', 'count']
    value: int

    def __post_init__(self):
        if self.variant == 'binary' and self.value not in (0, 1):
            raise ContractError(f"二分类标签必须为 0 或 1，当前 {self.value}")
        if self.variant == 'count' and self.value < 0:
            raise ContractError(f"计数标签必须非负，当前 {self.value}")
        if self.variant not in ('binary', 'count'):
            raise ContractError(f"未知标签类型: {self.variant}")

    @classmethod
    def binary(cls, value: int) -> 'BagTarget':
        return cls('binary', int(value))

    @classmethod
    def count(cls, value: int) -> 'BagTarget':
        return cls('count', int(value))


@dataclass(frozen=True)
class Bag:
    """
    一个包

    Attributes:
        instances: [m×H×W] uint8 图像，顺序即观察顺序
        instance_labels: 潜在实例类别，只供评估使用
        target: 包级标签；单例包为 None
        bag_id: 包编号
    """

    instances: np.ndarray
    instance_labels: Tuple[int, ...]
    target: Optional[BagTarget]
    bag_id: int = 0

    def __post_init__(self):
        if self.instances.ndim != 3:
            raise ContractError(f"包实例必须是 m×H×W，当前形状 {self.instances.shape}")
        if len(self.instances) != len(self.instance_labels):
            raise ContractError(
                f"实例数 {len(self.instances)} 与潜在标签数 {len(self.instance_labels)} 不一致"
            )
        if len(self.instances) < 1:
            raise ContractError("包至少包含一个实例")
        if self.target is not None and self.target.variant == 'count' and self.target.value > len(self.instances):
            raise ContractError(f"计数 {self.target.value} 超过包大小 {len(self.instances)}")

    @property
    def cardinality(self) -> int:
        return int(len(self.instances))


@dataclass(frozen=True)
class ScenarioSpec:
    """场景规格"""

    kind: str
    witnesses: Tuple[int, ...]
    mean_cardinality: float
    std_cardinality: float
    n_bags: int
    seed: int
    k_outliers: int = 1

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ContractError(f"未知场景: {self.kind}（可选 {TASKS}）")
        if tuple(self.witnesses) != WITNESSES[self.kind]:
            raise ContractError(f"场景 {self.kind} 的见证类别必须是 {WITNESSES[self.kind]}，当前 {self.witnesses}")
        if self.mean_cardinality < 1:
            raise ContractError(f"平均包大小必须 >= 1，当前 {self.mean_cardinality}")
        if self.std_cardinality < 0:
            raise ContractError(f"包大小标准差必须 >= 0，当前 {self.std_cardinality}")
        if self.n_bags < 1:
            raise ContractError(f"包数量必须 >= 1，当前 {self.n_bags}")
        if self.k_outliers < 1:
            raise ContractError(f"离群实例数必须 >= 1，当前 {self.k_outliers}")

    @classmethod
    def for_task(cls, kind: str, mean_cardinality: Optional[float] = None,
                 std_cardinality: Optional[float] = None, n_bags: Optional[int] = None,
                 seed: int = 0, k_outliers: int = 1) -> 'ScenarioSpec':
        """按任务默认值构造场景规格"""
        if kind not in TASKS:
            raise ContractError(f"未知场景: {kind}（可选 {TASKS}）")
        defaults = TASK_DEFAULTS[kind]
        return cls(
            kind=kind,
            witnesses=WITNESSES[kind],
            mean_cardinality=float(defaults['m'] if mean_cardinality is None else mean_cardinality),
            std_cardinality=float(defaults['sigma'] if std_cardinality is None else std_cardinality),
            n_bags=int(defaults['n_train_bags'] if n_bags is None else n_bags),
            seed=int(seed),
            k_outliers=int(k_outliers),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'witnesses': list(self.witnesses),
            'mean_cardinality': self.mean_cardinality,
            'std_cardinality': self.std_cardinality,
            'n_bags': self.n_bags,
            'seed': self.seed,
            'k_outliers': self.k_outliers,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScenarioSpec':
        return cls(
            kind=data['kind'],
            witnesses=tuple(data['witnesses']),
            mean_cardinality=float(data['mean_cardinality']),
            std_cardinality=float(data['std_cardinality']),
            n_bags=int(data['n_bags']),
            seed=int(data['seed']),
            k_outliers=int(data.get('k_outliers', 1)),
        )


def label_rule(task: str, instance_labels: Sequence[int]) -> BagTarget:
    """
    按场景规则由潜在实例标签推出包标签

    Args:
        task: 场景
        instance_labels: 潜在实例类别

    Returns:
        BagTarget
    """
    labels = [int(c) for c in instance_labels]
    if task == 'single_digit':
        return BagTarget.binary(int(9 in labels))
    if task == 'multi_digit':
        return BagTarget.binary(int(3 in labels and 6 in labels))
    if task == 'counting':
        return BagTarget.count(labels.count(9))
    if task == 'outlier':
        return BagTarget.binary(int(len(set(labels)) > 1))
    raise ContractError(f"未知场景: {task}")


def sample_cardinality(m: float, sigma: float, rng: Rng, minimum: int = 2) -> int:
    """
    包大小 = round(Normal(m, σ))，截断到不小于 minimum

    Args:
        m: 平均包大小
        sigma: 标准差
        rng: 随机数生成器
        minimum: 下限（二分类场景 2，计数场景 1）
    """
    if m < 1:
        raise ContractError(f"平均包大小必须 >= 1，当前 {m}")
    draw = rng.normal(m, sigma)
    return max(int(minimum), int(math.floor(draw + 0.5)))


class _ClassSampler:
    """按类别约束从实例池抽样下标"""

    def __init__(self, pool: InstancePool):
        self.pool = pool
        self.by_class = pool.class_indices()
        self.present = tuple(c for c in range(10) if len(self.by_class[c]) > 0)
        self._cache: Dict[Tuple[int, ...], np.ndarray] = {}

    def excluding(self, excluded: Sequence[int]) -> np.ndarray:
        key = tuple(sorted(set(int(c) for c in excluded)))
        if key not in self._cache:
            mask = ~np.isin(self.pool.labels, key) if key else np.ones(len(self.pool), dtype=bool)
            self._cache[key] = np.flatnonzero(mask)
        return self._cache[key]

    def draw(self, candidates: np.ndarray, count: int, rng: Rng) -> List[int]:
        if len(candidates) == 0:
            raise GenerationError("实例池中没有满足约束的实例")
        return [int(candidates[rng.integers(0, len(candidates))]) for _ in range(count)]

    def draw_class(self, digit: int, count: int, rng: Rng) -> List[int]:
        candidates = self.by_class[int(digit)]
        if len(candidates) == 0:
            raise GenerationError(f"实例池中缺少类别 {digit}")
        return self.draw(candidates, count, rng)


def _require_classes(sampler: _ClassSampler, classes: Sequence[int], task: str) -> None:
    missing = [c for c in classes if c not in sampler.present]
    if missing:
        raise GenerationError(f"场景 {task} 无法生成：实例池缺少类别 {missing}")


def _inject_witnesses(indices: List[int], sampler: _ClassSampler, witnesses: Sequence[int], rng: Rng) -> List[int]:
    """把缺失的见证类别注入到随机位置，不覆盖唯一的已有见证"""
    labels = [int(sampler.pool.labels[i]) for i in indices]
    for witness in witnesses:
        if witness in labels:
            continue
        counts = Counter(labels)
        free = [p for p, c in enumerate(labels) if c not in witnesses or counts[c] > 1]
        position = free[rng.integers(0, len(free))]
        indices[position] = sampler.draw_class(witness, 1, rng)[0]
        labels[position] = witness
    return indices


def _build_bag(pool: InstancePool, indices: Sequence[int], target: BagTarget, bag_id: int) -> Bag:
    idx = np.asarray(indices, dtype=np.int64)
    return Bag(
        instances=pool.images[idx],
        instance_labels=tuple(int(c) for c in pool.labels[idx]),
        target=target,
        bag_id=bag_id,
    )


def _balanced_targets(n_bags: int, rng: Rng) -> List[int]:
    n_pos = (n_bags + 1) // 2
    targets = [1] * n_pos + [0] * (n_bags - n_pos)
    return [targets[i] for i in rng.permutation(n_bags)]


def _bag_indices(spec: ScenarioSpec, sampler: _ClassSampler, positive: int, m: int, rng: Rng) -> List[int]:
    kind = spec.kind
    everything = sampler.excluding(())
    if kind == 'counting':
        return sampler.draw(everything, m, rng)

    if kind == 'single_digit':
        if positive:
            return _inject_witnesses(sampler.draw(everything, m, rng), sampler, spec.witnesses, rng)
        return sampler.draw(sampler.excluding(spec.witnesses), m, rng)

    if kind == 'multi_digit':
        if positive:
            return _inject_witnesses(sampler.draw(everything, m, rng), sampler, spec.witnesses, rng)
        dropped = spec.witnesses[rng.integers(0, len(spec.witnesses))]
        return sampler.draw(sampler.excluding((dropped,)), m, rng)

    # outlier
    majority = sampler.present[rng.integers(0, len(sampler.present))]
    if not positive:
        return sampler.draw_class(majority, m, rng)
    k = spec.k_outliers
    m = max(m, 2 * k + 1)
    others = [c for c in sampler.present if c != majority]
    outlier = others[rng.integers(0, len(others))]
    indices = sampler.draw_class(majority, m - k, rng) + sampler.draw_class(outlier, k, rng)
    return [indices[i] for i in rng.permutation(len(indices))]


def make_bags(spec: ScenarioSpec, pool: InstancePool) -> List[Bag]:
    """
    按场景规格生成包

    二分类场景正负各半；正包注入见证实例，负包从排除见证的实例中抽样；
    计数场景均匀抽样，标签为 9 的个数；离群场景正包为多数类加 k 个另一类实例

    Args:
        spec: 场景规格
        pool: 实例池（训练包只用训练池，测试包只用测试池）

    Returns:
        n_bags 个包

    Raises:
        GenerationError: 实例池无法满足规格
    """
    if len(pool) == 0:
        raise GenerationError("实例池为空")
    sampler = _ClassSampler(pool)
    if spec.kind in ('single_digit', 'multi_digit'):
        _require_classes(sampler, spec.witnesses, spec.kind)
        for witness in spec.witnesses:
            if len(sampler.excluding((witness,))) == 0:
                raise GenerationError(f"场景 {spec.kind} 无法生成负包：实例池只有见证类别")
    elif spec.kind == 'outlier' and len(sampler.present) < 2:
        raise GenerationError("离群场景需要至少两个类别")

    rng = Rng(spec.seed)
    minimum = min_cardinality(spec.kind)
    positives = _balanced_targets(spec.n_bags, rng) if is_binary_task(spec.kind) else [0] * spec.n_bags

    bags = []
    for bag_id, positive in enumerate(positives):
        m = sample_cardinality(spec.mean_cardinality, spec.std_cardinality, rng, minimum)
        indices = _bag_indices(spec, sampler, positive, m, rng)
        labels = [int(pool.labels[i]) for i in indices]
        target = label_rule(spec.kind, labels)
        if is_binary_task(spec.kind) and target.value != positive:
            raise GenerationError(f"包 {bag_id} 标签自检失败: 期望 {positive}，规则给出 {target.value}")
        bags.append(_build_bag(pool, indices, target, bag_id))

    summary = summarize_bags(bags)
    logger.info(f"✅ 已生成 {len(bags)} 个 {spec.kind} 包 (m={spec.mean_cardinality}, σ={spec.std_cardinality}, "
                f"正/负={summary['n_positive']}/{summary['n_negative']})")
    return bags


def make_pair_bags(n_bags: int, cardinality: int, pool: InstancePool, seed: int) -> List[Bag]:
    """
    固定大小的多数字包：正包恰含一个 3 和一个 6，负包恰含一个见证实例，其余为非见证类别

    Args:
        n_bags: 包数量（正负各半）
        cardinality: 包大小
        pool: 实例池
        seed: 随机种子
    """
    if cardinality < 2:
        raise GenerationError(f"见证对包至少需要 2 个实例，当前 {cardinality}")
    sampler = _ClassSampler(pool)
    witnesses = WITNESSES['multi_digit']
    _require_classes(sampler, witnesses, 'multi_digit')
    fillers = sampler.excluding(witnesses)
    if len(fillers) == 0:
        raise GenerationError("实例池中没有非见证实例")

    rng = Rng(seed)
    bags = []
    for bag_id, positive in enumerate(_balanced_targets(n_bags, rng)):
        if positive:
            indices = sampler.draw_class(3, 1, rng) + sampler.draw_class(6, 1, rng)
        else:
            indices = sampler.draw_class(witnesses[rng.integers(0, 2)], 1, rng)
        indices += sampler.draw(fillers, cardinality - len(indices), rng)
        indices = [indices[i] for i in rng.permutation(len(indices))]
        labels = [int(pool.labels[i]) for i in indices]
        bags.append(_build_bag(pool, indices, label_rule('multi_digit', labels), bag_id))
    logger.info(f"✅ 已生成 {len(bags)} 个见证对包 (大小 {cardinality})")
    return bags


def shuffle_bag(bag: Bag, rng: Rng) -> Bag:
    """以同一排列打乱实例与潜在标签，包标签不变"""
    if bag.cardinality == 1:
        return bag
    perm = rng.permutation(bag.cardinality)
    return replace(
        bag,
        instances=bag.instances[np.asarray(perm, dtype=np.int64)],
        instance_labels=tuple(bag.instance_labels[i] for i in perm),
    )


def singletons(bag: Bag) -> List[Bag]:
    """把包拆成按原顺序排列的单例包（无包标签，仅供评估）"""
    return [
        Bag(instances=bag.instances[i:i + 1], instance_labels=(bag.instance_labels[i],), target=None,
            bag_id=bag.bag_id)
        for i in range(bag.cardinality)
    ]


def summarize_bags(bags: Sequence[Bag]) -> Dict[str, Any]:
    """类别平衡与包大小直方图"""
    cardinalities = Counter(b.cardinality for b in bags)
    targets = Counter(b.target.value for b in bags if b.target is not None)
    binary = bool(bags) and bags[0].target is not None and bags[0].target.variant == 'binary'
    summary: Dict[str, Any] = {
        'n_bags': len(bags),
        'cardinality_histogram': {str(k): v for k, v in sorted(cardinalities.items())},
        'target_histogram': {str(k): v for k, v in sorted(targets.items())},
        'mean_cardinality': float(np.mean([b.cardinality for b in bags])) if bags else 0.0,
    }
    if binary:
        summary['n_positive'] = targets.get(1, 0)
        summary['n_negative'] = targets.get(0, 0)
    else:
        summary['n_positive'] = sum(v for k, v in targets.items() if k > 0)
        summary['n_negative'] = targets.get(0, 0)
    return summary
