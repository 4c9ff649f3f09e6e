#!/usr/bin/env python3
"""
配置管理模块
提供运行配置(RunConfig)的加载、验证、保存、覆盖与哈希功能
"""

import json
import hashlib
import logging
from pathlib import Path
from typing import Optional, Dict, Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

TaskName = Literal['single_digit', 'multi_digit', 'counting', 'outlier']
PoolingKind = Literal['bilstm', 'attention', 'gated_attention', 'mean', 'max']

# 各任务的默认场景参数（m、σ、包数量）
TASK_DEFAULTS: Dict[str, Dict[str, Any]] = {
    'single_digit': {'m': 10.0, 'sigma': 2.0, 'n_train_bags': 1000, 'n_val_bags': 200, 'n_test_bags': 1000},
    'multi_digit': {'m': 12.0, 'sigma': 2.0, 'n_train_bags': 1000, 'n_val_bags': 200, 'n_test_bags': 1000},
    'counting': {'m': 15.0, 'sigma': 0.0, 'n_train_bags': 1000, 'n_val_bags': 200, 'n_test_bags': 1000},
    'outlier': {'m': 6.0, 'sigma': 1.0, 'n_train_bags': 4000, 'n_val_bags': 500, 'n_test_bags': 1000},
}

# 不参与配置哈希的字段：路径、并发数与日志级别不改变实验本身
NON_EXPERIMENT_KEYS = frozenset({
    'data_dir', 'out_dir', 'train_bags_path', 'val_bags_path', 'test_bags_path',
    'eval_workers', 'log_level',
})


class RunConfig(BaseModel):
    """扁平的运行配置，未知键直接拒绝"""

    model_config = ConfigDict(extra='forbid', validate_assignment=True)

    task: TaskName = 'single_digit'
    pooling: PoolingKind = 'bilstm'
    seed: int = Field(0, ge=0)

    # 路径
    data_dir: str = 'data/pool'
    out_dir: str = 'runs'
    train_bags_path: Optional[str] = None
    val_bags_path: Optional[str] = None
    test_bags_path: Optional[str] = None

    # 场景参数（缺省时按任务填充）
    m: Optional[float] = None
    sigma: Optional[float] = None
    n_train_bags: Optional[int] = None
    n_val_bags: Optional[int] = None
    n_test_bags: Optional[int] = None
    k_outliers: int = Field(1, ge=1)

    # 模型维度
    input_size: int = 28
    conv1_channels: int = Field(20, ge=1)
    conv2_channels: int = Field(50, ge=1)
    fc1_units: int = Field(500, ge=1)
    feature_dim: int = Field(500, ge=1)
    hidden_dim: int = Field(500, ge=1)
    attention_dim: int = Field(128, ge=1)

    # 互信息正则
    mi_enabled: bool = True
    mi_alpha: float = Field(0.5, ge=0.0)
    mi_beta: float = Field(1.0, ge=0.0)
    mi_gamma: float = Field(0.1, ge=0.0)
    mi_batch_size: int = Field(32, ge=2)
    mi_hidden: int = Field(64, ge=1)

    # 训练
    lr: float = Field(5e-4, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    epochs: int = Field(50, ge=1)
    batch_bags: int = Field(1, ge=1)
    shuffle_instances_each_epoch: bool = True
    patience: int = Field(20, ge=1)

    # 运行时
    eval_workers: int = Field(1, ge=1)
    log_level: Literal['DEBUG', 'INFO', 'WARNING', 'ERROR'] = 'INFO'
    debug_numerics: bool = False

    @model_validator(mode='before')
    @classmethod
    def _fill_task_defaults(cls, values: Any) -> Any:
        if not isinstance(values, dict):
            return values
        task = values.get('task', 'single_digit')
        defaults = TASK_DEFAULTS.get(task)
        if defaults is None:
            return values
        filled = dict(values)
        for key, value in defaults.items():
            if filled.get(key) is None:
                filled[key] = value
        return filled

    @field_validator('input_size')
    @classmethod
    def _check_input_size(cls, value: int) -> int:
        if value not in (27, 28):
            raise ValueError("input_size 只支持 27 或 28")
        return value

    @model_validator(mode='after')
    def _check_ranges(self) -> 'RunConfig':
        if self.m is not None and self.m < 1:
            raise ValueError("m 必须 >= 1")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma 必须 >= 0")
        for key in ('n_train_bags', 'n_val_bags', 'n_test_bags'):
            value = getattr(self, key)
            if value is not None and value < 1:
                raise ValueError(f"{key} 必须 >= 1")
        if self.mi_enabled and max(self.mi_alpha, self.mi_beta, self.mi_gamma) <= 0:
            raise ValueError("启用互信息时 alpha/beta/gamma 至少有一个大于0")
        return self

    # ---- 派生配置 ----

    def scenario(self, split: str, n_bags: Optional[int] = None, seed_offset: int = 0):
        """构造指定划分的场景规格"""
        from ..datasets.bags import ScenarioSpec

        counts = {'train': self.n_train_bags, 'val': self.n_val_bags, 'test': self.n_test_bags}
        return ScenarioSpec.for_task(
            self.task,
            mean_cardinality=float(self.m),
            std_cardinality=float(self.sigma),
            n_bags=int(n_bags if n_bags is not None else counts[split]),
            seed=derive_seed(self.seed, f"bags/{split}") + seed_offset,
            k_outliers=self.k_outliers,
        )

    def idu_config(self):
        from ..models.encoders import IduConfig

        return IduConfig(
            conv1_channels=self.conv1_channels,
            conv2_channels=self.conv2_channels,
            fc1_units=self.fc1_units,
            feature_dim=self.feature_dim,
            input_size=self.input_size,
        )

    def model_spec(self):
        from ..models.mil_model import ModelSpec

        return ModelSpec(
            task=self.task,
            pooling=self.pooling,
            idu=self.idu_config(),
            hidden_dim=self.hidden_dim,
            attention_dim=self.attention_dim,
            mi_hidden=self.mi_hidden if self.mi_enabled else None,
        )

    def mi_weights(self):
        from ..models.mi_loss import MiWeights

        if not self.mi_enabled:
            return None
        return MiWeights(alpha=self.mi_alpha, beta=self.mi_beta, gamma=self.mi_gamma)

    def train_config(self):
        from ..training.trainer import TrainConfig

        return TrainConfig(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            batch_bags=self.batch_bags,
            seed=self.seed,
            shuffle_instances_each_epoch=self.shuffle_instances_each_epoch,
            mi=self.mi_weights(),
            mi_batch_size=self.mi_batch_size,
            patience=self.patience,
            eval_workers=self.eval_workers,
        )


def derive_seed(seed: int, label: str) -> int:
    """从运行种子派生带标签的子种子"""
    digest = hashlib.blake2b(f"{seed}:{label}".encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'little')


def get_default_config() -> RunConfig:
    """
    获取默认配置

    Returns:
        默认RunConfig
    """
    return RunConfig()


def validate_config(data: Dict[str, Any]) -> RunConfig:
    """
    验证配置字典

    Args:
        data: 原始配置字典

    Returns:
        验证后的RunConfig

    Raises:
        ConfigError: 出现未知键或取值非法
    """
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        messages = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"配置验证失败: {messages}") from e
    logger.debug("✅ 配置验证通过")
    return config


def load_config(config_path: Optional[Path] = None) -> RunConfig:
    """
    加载配置文件

    Args:
        config_path: 配置文件路径，如果为None则按优先级查找

    Returns:
        RunConfig

    Raises:
        ConfigError: 指定的文件不存在、不是合法JSON或验证失败
    """
    if config_path is None:
        search_paths = [
            Path.cwd() / "config.json",
            Path.home() / ".bagmil" / "config.json",
        ]
        for path in search_paths:
            if path.exists():
                config_path = path
                logger.info(f"🔍 找到配置文件: {config_path}")
                break
        else:
            logger.warning("⚠️ 未找到配置文件，使用默认配置")
            return get_default_config()

    config_path = Path(config_path)
    if not config_path.exists():
        raise ConfigError(f"配置文件不存在: {config_path}")

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"配置文件不是合法JSON: {config_path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是对象: {config_path}")

    config = validate_config(data)
    logger.info(f"✅ 已加载配置文件: {config_path}")
    return config


def save_config(config: RunConfig, config_path: Path) -> Path:
    """
    保存配置文件（仅保存显式字段，便于diff与归档）

    Args:
        config: 要保存的配置
        config_path: 目标路径

    Returns:
        写入的路径
    """
    config_path = Path(config_path)
    config_path.parent.mkdir(parents=True, exist_ok=True)
    with open(config_path, 'w', encoding='utf-8') as f:
        json.dump(config.model_dump(), f, ensure_ascii=False, indent=2, sort_keys=True)
    logger.info(f"💾 配置文件已保存: {config_path}")
    return config_path


def apply_overrides(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """
    用命令行参数覆盖配置键（值为None的键忽略）

    Args:
        config: 原配置
        overrides: 覆盖项

    Returns:
        新的RunConfig
    """
    data = config.model_dump()
    changed = {k: v for k, v in overrides.items() if v is not None}
    if 'task' in changed and changed['task'] != data['task']:
        # 任务变化时场景参数回到新任务的默认值，除非同时显式给出
        for key in TASK_DEFAULTS[changed['task']]:
            data[key] = None
    data.update(changed)
    for key, value in changed.items():
        logger.info(f"🔧 覆盖配置: {key}={value}")
    return validate_config(data)


def config_hash(config: RunConfig) -> str:
    """
    计算配置哈希（只覆盖影响实验结果的字段）

    Args:
        config: 运行配置

    Returns:
        SHA-256 十六进制字符串
    """
    payload = {k: v for k, v in config.model_dump().items() if k not in NON_EXPERIMENT_KEYS}
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
