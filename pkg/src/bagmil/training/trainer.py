#!/usr/bin/env python3
"""
训练循环
每轮打乱包顺序与包内实例顺序，任务损失加互信息正则，按验证错误率早停
"""

import time
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import CompatibilityError, ContractError, NumericAbortError
from ..datasets.bags import Bag, shuffle_bag
from ..evaluation.metrics import bag_outputs, confusion_counts, MetricBundle
from ..models.mi_loss import MiWeights, mi_components, mi_total
from ..models.mil_model import MilModel
from ..numerics import ops
from ..numerics.rng import Rng
from ..numerics.tensor import Tape, backward
from .checkpoint import Checkpoint
from .losses import task_loss, task_loss_value
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """训练配置"""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    epochs: int = 50
    batch_bags: int = 1
    seed: int = 0
    shuffle_instances_each_epoch: bool = True
    mi: Optional[MiWeights] = None
    mi_batch_size: int = 32
    patience: int = 20
    eval_workers: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError(f"学习率必须 > 0，当前 {self.lr}")
        if self.epochs < 1:
            raise ContractError(f"epochs 必须 >= 1，当前 {self.epochs}")
        if self.batch_bags < 1:
            raise ContractError(f"batch_bags 必须 >= 1，当前 {self.batch_bags}")
        if self.mi_batch_size < 2:
            raise ContractError(f"mi_batch_size 必须 >= 2，当前 {self.mi_batch_size}")
        if self.patience < 1:
            raise ContractError(f"patience 必须 >= 1，当前 {self.patience}")

    @property
    def mi_active(self) -> bool:
        return self.mi is not None and self.mi.active

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['mi'] = self.mi.to_dict() if self.mi is not None else None
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        """由检查点中回显的训练配置重建"""
        values = dict(data)
        mi = values.pop('mi', None)
        return cls(**values, mi=MiWeights(**mi) if mi else None)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_task_loss: float
    train_error: float
    mi: Dict[str, float] = field(default_factory=dict)
    val_loss: Optional[float] = None
    val_error: Optional[float] = None


@dataclass
class History:
    """每轮的训练记录"""

    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'best_epoch': self.best_epoch,
            'stopped_early': self.stopped_early,
            'epochs': [asdict(r) for r in self.records],
        }


def _check_compatible(model: MilModel, bags: Sequence[Bag], split: str) -> None:
    if not bags:
        raise ContractError(f"{split} 包列表为空")
    expected = 'count' if model.spec.head_variant == 'regressor' else 'binary'
    for bag in bags:
        if bag.target is None or bag.target.variant != expected:
            raise CompatibilityError(
                f"{split} 包 {bag.bag_id} 的标签类型与模型任务 {model.spec.task} 不匹配"
            )


def _mi_batch(bag: Bag, train_bags: Sequence[Bag], batch_size: int, rng: Rng) -> np.ndarray:
    """当前包的实例，不足时从其他训练包补齐到 batch_size"""
    images = [bag.instances]
    need = batch_size - bag.cardinality
    others = [b for b in train_bags if b.bag_id != bag.bag_id] or list(train_bags)
    extra = []
    for _ in range(max(0, need)):
        donor = others[rng.integers(0, len(others))]
        extra.append(donor.instances[rng.integers(0, donor.cardinality)])
    if extra:
        images.append(np.stack(extra))
    return np.concatenate(images, axis=0)


def _evaluate_split(model: MilModel, bags: Sequence[Bag], workers: int) -> Tuple[float, float]:
    """(平均任务损失, 错误率%)"""
    variant = model.spec.head_variant
    raws = bag_outputs(model, bags, workers)
    targets = [b.target.value for b in bags]
    loss = float(np.mean([task_loss_value(r, y, variant) for r, y in zip(raws, targets)]))
    labels = [model.head.interpret(r).label for r in raws]
    counts = confusion_counts(labels, targets, bags[0].target.variant)
    return loss, MetricBundle.from_counts(counts).error_rate


def _bag_step(model: MilModel, bag: Bag, train_bags: Sequence[Bag], config: TrainConfig,
              mi_rng: Rng, epoch: int) -> Tuple[Dict[str, np.ndarray], float, float, Dict[str, float], float]:
    """一个包的前向与反向，返回 (梯度, 总损失, 任务损失, 互信息分量, 原始输出)"""
    leaves = model.leaves(requires_grad=True)
    variant = model.spec.head_variant
    with Tape() as tape:
        if config.mi_active:
            images = _mi_batch(bag, train_bags, config.mi_batch_size, mi_rng)
            features, local_map = model.encode(images, leaves, keep_map=True)
            m = bag.cardinality
            result = model.from_features(features[0:m], leaves)
            loss_task = task_loss(result.output, bag.target.value, variant)
            mi_values: Dict[str, float] = {}
            total = loss_task
            if features.shape[0] >= 2:
                components = mi_components(features, local_map, model.mi_heads(leaves), config.mi,
                                           mi_rng.substream(f"step/{mi_rng.next_u64()}"))
                total = ops.add(loss_task, mi_total(components, config.mi))
                mi_values = components.values()
        else:
            result = model.forward(bag.instances, leaves)
            loss_task = task_loss(result.output, bag.target.value, variant)
            total = loss_task
            mi_values = {}

    total_value = total.item()
    if not np.isfinite(total_value):
        raise NumericAbortError("❌ 训练损失出现非有限数值", {
            'epoch': epoch, 'bag_id': bag.bag_id, 'task_loss': loss_task.item(), **mi_values,
        })
    grads = backward(tape, total)
    return ({name: grads.of(t) for name, t in leaves.items()}, total_value, loss_task.item(), mi_values,
            result.output.item())


def train(model: MilModel, train_bags: Sequence[Bag], val_bags: Optional[Sequence[Bag]],
          config: TrainConfig) -> Tuple[Checkpoint, History]:
    """
    训练模型

    Args:
        model: 待训练模型（训练结束后参数恢复为验证最优的一轮）
        train_bags: 训练包
        val_bags: 验证包；为 None 时不早停，保留最后一轮
        config: 训练配置

    Returns:
        (最优检查点, 训练历史)

    Raises:
        CompatibilityError: 包标签类型与模型头部不匹配
        NumericAbortError: 损失出现 NaN/Inf
    """
    _check_compatible(model, train_bags, 'train')
    if val_bags is not None:
        _check_compatible(model, val_bags, 'val')
    if config.mi_active and not model.spec.mi_enabled:
        raise CompatibilityError("训练配置启用了互信息，但模型没有互信息判别器")

    root = Rng(config.seed)
    shuffle_rng = root.substream('shuffle')
    mi_rng = root.substream('mi')
    state = AdamState()
    history = History()
    best_key: Optional[Tuple[float, float]] = None
    best_params = model.params.copy()
    wait = 0
    variant = model.spec.head_variant
    bag_variant = train_bags[0].target.variant

    logger.info(f"🚀 开始训练: {len(train_bags)} 个训练包, {config.epochs} 轮, "
                f"互信息{'开启' if config.mi_active else '关闭'}")
    for epoch in range(1, config.epochs + 1):
        started = time.time()
        order = shuffle_rng.permutation(len(train_bags))
        losses, task_losses, labels, targets = [], [], [], []
        mi_sums: Dict[str, float] = {}

        for start in range(0, len(order), config.batch_bags):
            batch = [train_bags[i] for i in order[start:start + config.batch_bags]]
            accumulated: Dict[str, np.ndarray] = {}
            for bag in batch:
                if config.shuffle_instances_each_epoch:
                    bag = shuffle_bag(bag, shuffle_rng)
                grads, total_value, task_value, mi_values, raw = _bag_step(
                    model, bag, train_bags, config, mi_rng, epoch
                )
                for name, grad in grads.items():
                    accumulated[name] = grad if name not in accumulated else accumulated[name] + grad
                losses.append(total_value)
                task_losses.append(task_value)
                labels.append(model.head.interpret(raw).label)
                targets.append(bag.target.value)
                for key, value in mi_values.items():
                    mi_sums[key] = mi_sums.get(key, 0.0) + value
                logger.debug(f"包 {bag.bag_id}: 损失 {total_value:.4f} (任务 {task_value:.4f})")
            scale = 1.0 / len(batch)
            adam_step(model.params, {k: v * scale for k, v in accumulated.items()}, state, config)

        train_error = MetricBundle.from_counts(confusion_counts(labels, targets, bag_variant)).error_rate
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            train_task_loss=float(np.mean(task_losses)),
            train_error=train_error,
            mi={k: v / len(losses) for k, v in sorted(mi_sums.items())},
        )

        if val_bags is not None:
            record.val_loss, record.val_error = _evaluate_split(model, val_bags, config.eval_workers)
            key = (record.val_error, record.val_loss)
            if best_key is None or key < best_key:
                best_key = key
                best_params = model.params.copy()
                history.best_epoch = epoch
                wait = 0
            else:
                wait += 1
        else:
            best_params = model.params.copy()
            history.best_epoch = epoch
        history.records.append(record)

        mi_text = ", ".join(f"{k}={v:.4f}" for k, v in record.mi.items())
        val_text = (f", 验证损失 {record.val_loss:.4f}, 验证错误率 {record.val_error:.2f}%"
                    if record.val_loss is not None else "")
        logger.info(f"📊 第 {epoch}/{config.epochs} 轮: 训练损失 {record.train_loss:.4f}, "
                    f"训练错误率 {train_error:.2f}%{val_text}"
                    f"{', 互信息 ' + mi_text if mi_text else ''} ({time.time() - started:.1f}s)")

        if val_bags is not None and wait >= config.patience:
            history.stopped_early = True
            logger.info(f"⚠️ 验证错误率 {config.patience} 轮未改善，提前停止（最优第 {history.best_epoch} 轮）")
            break

    model.params = best_params.copy()
    checkpoint = Checkpoint.from_model(
        model,
        train_config=config.to_dict(),
        rng_state=shuffle_rng.get_state(),
        epoch=history.best_epoch,
        extra={'task': model.spec.task, 'variant': variant},
    )
    logger.info(f"✅ 训练完成: 最优第 {history.best_epoch} 轮")
    return checkpoint, history


def finetune(model: MilModel, bags: Sequence[Bag], config: TrainConfig, epochs: int,
             val_bags: Optional[Sequence[Bag]] = None) -> History:
    """在已有模型上继续训练（参数原地更新）"""
    _, history = train(model, bags, val_bags, replace(config, epochs=epochs))
    return history
