#!/usr/bin/env python3
"""
训练模块
任务损失、Adam 优化器、训练循环与检查点
"""

from .losses import task_loss, task_loss_value
from .optim import AdamState, adam_step
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint, load_model
from .trainer import TrainConfig, History, EpochRecord, train, finetune
from .supervised import SupervisedConfig, InstanceClassifier, train_instance_classifier

__all__ = [
    'task_loss', 'task_loss_value', 'AdamState', 'adam_step',
    'Checkpoint', 'save_checkpoint', 'load_checkpoint', 'load_model',
    'TrainConfig', 'History', 'EpochRecord', 'train', 'finetune',
    'SupervisedConfig', 'InstanceClassifier', 'train_instance_classifier',
]
