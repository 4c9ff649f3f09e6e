#!/usr/bin/env python3
"""
全监督实例分类器
LeNet IDU 加 10 类 softmax，用实例标签直接训练；作为字形冒烟测试与实例预测的监督参照
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..datasets.mnist import InstancePool
from ..models.encoders import IduConfig, encode_bag, init_idu
from ..models.parameters import ParameterSet, xavier_uniform
from ..numerics import ops
from ..numerics.rng import Rng
from ..numerics.tensor import Tape, Tensor, backward
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)

NUM_CLASSES = 10


@dataclass(frozen=True)
class SupervisedConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 3
    batch_size: int = 32
    seed: int = 0


class InstanceClassifier:
    """IDU + 线性 softmax 分类器"""

    def __init__(self, idu: IduConfig, params: ParameterSet):
        self.idu = idu
        self.params = params

    def logits(self, images: np.ndarray, leaves=None) -> Tensor:
        leaves = leaves if leaves is not None else self.params.leaves(requires_grad=False)
        idu_leaves = {k[4:]: v for k, v in leaves.items() if k.startswith('idu.')}
        features, _ = encode_bag(images, idu_leaves, self.idu)
        return ops.add(ops.matmul(features, leaves['cls.weight']), leaves['cls.bias'])

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        labels = []
        for start in range(0, len(images), batch_size):
            labels.append(np.argmax(self.logits(images[start:start + batch_size]).data, axis=1))
        return np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)

    def accuracy(self, pool: InstancePool) -> float:
        """百分比准确率"""
        return 100.0 * float(np.mean(self.predict(pool.images) == pool.labels))


def train_instance_classifier(pool: InstancePool, idu: IduConfig,
                              config: Optional[SupervisedConfig] = None) -> InstanceClassifier:
    """
    用实例标签训练 LeNet 分类器（交叉熵，小批量 Adam）

    Args:
        pool: 训练实例池
        idu: IDU 结构
        config: 训练超参数
    """
    config = config or SupervisedConfig()
    rng = Rng(config.seed)
    init_rng = rng.substream('init')
    params = ParameterSet()
    params.merge('idu', init_idu(idu, init_rng.substream('idu')))
    params.merge('cls', {
        'weight': xavier_uniform(init_rng.substream('cls'), (idu.feature_dim, NUM_CLASSES), idu.feature_dim, NUM_CLASSES),
        'bias': np.zeros(NUM_CLASSES),
    })
    classifier = InstanceClassifier(idu, params)
    shuffle_rng = rng.substream('shuffle')
    state = AdamState()

    logger.info(f"🚀 开始监督训练: {len(pool)} 个实例, {config.epochs} 轮")
    for epoch in range(1, config.epochs + 1):
        order = np.asarray(shuffle_rng.permutation(len(pool)), dtype=np.int64)
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            one_hot = np.zeros((len(idx), NUM_CLASSES))
            one_hot[np.arange(len(idx)), pool.labels[idx]] = 1.0
            leaves = params.leaves(requires_grad=True)
            with Tape() as tape:
                log_probs = ops.log_softmax(classifier.logits(pool.images[idx], leaves), axis=1)
                loss = ops.neg(ops.mul(ops.sum(ops.mul(log_probs, Tensor(one_hot))), 1.0 / len(idx)))
            grads = backward(tape, loss)
            adam_step(params, {name: grads.of(t) for name, t in leaves.items()}, state, config)
            losses.append(loss.item())
        logger.info(f"📊 监督训练第 {epoch}/{config.epochs} 轮: 损失 {np.mean(losses):.4f}")
    return classifier
