#!/usr/bin/env python3
"""
模型模块
实例描述单元、包表示编码器、互信息判别器与组合模型
"""

from .parameters import ParameterSet
from .encoders import IduConfig, InstanceFeature, init_idu, encode_instance, encode_bag
from .pooling import (
    POOLING_KINDS,
    LstmParams,
    BagRepresentation,
    lstm_step,
    bilstm_pool,
    attention_pool,
    mean_pool,
    max_pool,
    state_trace,
    state_jump_statistic,
)
from .mi_loss import MiHeads, MiWeights, MiComponents, mi_global, mi_local, prior_matching, mi_total
from .mil_model import ModelSpec, MilModel, PredictionHead, Prediction, predict, round_count

__all__ = [
    'ParameterSet', 'IduConfig', 'InstanceFeature', 'init_idu', 'encode_instance', 'encode_bag',
    'POOLING_KINDS', 'LstmParams', 'BagRepresentation', 'lstm_step', 'bilstm_pool', 'attention_pool',
    'mean_pool', 'max_pool', 'state_trace', 'state_jump_statistic',
    'MiHeads', 'MiWeights', 'MiComponents', 'mi_global', 'mi_local', 'prior_matching', 'mi_total',
    'ModelSpec', 'MilModel', 'PredictionHead', 'Prediction', 'predict', 'round_count',
]
