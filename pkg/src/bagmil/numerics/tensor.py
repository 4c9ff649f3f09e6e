#!/usr/bin/env python3
"""
张量与反向模式自动微分
Tensor 创建后不可变；Tape 按创建顺序记录原语操作，backward 逆序累积梯度
"""

import os
import logging
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import ContractError, NumericAbortError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# 当前活动的计算带；工作线程默认为空，因此评估时不会记录
_ACTIVE_TAPE: ContextVar[Optional['Tape']] = ContextVar('bagmil_active_tape', default=None)

_DEBUG_NUMERICS = os.environ.get('BAGMIL_DEBUG_NUMERICS', '') == '1'


def set_debug_numerics(enabled: bool) -> None:
    """开启后每个原语输出都检查 NaN/Inf"""
    global _DEBUG_NUMERICS
    _DEBUG_NUMERICS = bool(enabled)
    logger.debug(f"数值调试模式: {'开启' if enabled else '关闭'}")


def debug_numerics_enabled() -> bool:
    return _DEBUG_NUMERICS


def _freeze(data: np.ndarray) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64, order='C')
    if arr.flags.writeable:
        arr.setflags(write=False)
    return arr


class Tensor:
    """
    n维 float64 张量

    Attributes:
        data: 只读的行优先 numpy 数组
        requires_grad: 是否需要梯度
    """

    __slots__ = ('data', 'requires_grad', 'name', '_tape', '_node_id')

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = _freeze(np.array(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape: Optional['Tape'] = None
        self._node_id: Optional[int] = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> 'Tensor':
        tensor = cls.__new__(cls)
        tensor.data = _freeze(data)
        tensor.requires_grad = False
        tensor.name = None
        tensor._tape = None
        tensor._node_id = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> 'Tensor':
        from . import ops
        return ops.transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() 只适用于单元素张量，当前形状 {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # 运算符转发到 ops 原语
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.take_slice(self, key)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis=axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis=axis)


@dataclass
class TapeNode:
    """计算带上的一个节点"""

    node_id: int
    op: str
    parents: Tuple[Optional[int], ...]
    backward: Optional[BackwardFn]
    shape: Tuple[int, ...]

    @property
    def is_leaf(self) -> bool:
        return self.backward is None


@dataclass
class Tape:
    """
    按拓扑顺序记录原语操作

    用法:
        with Tape() as tape:
            loss = ...
        grads = backward(tape, loss)
    """

    nodes: List[TapeNode] = field(default_factory=list)
    _token: object = None

    def __enter__(self) -> 'Tape':
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, tensor: Tensor) -> int:
        """确保张量在本计算带上有节点；叶子张量首次使用时登记"""
        if tensor._tape is self and tensor._node_id is not None:
            return tensor._node_id
        node_id = len(self.nodes)
        self.nodes.append(TapeNode(node_id, 'leaf', (), None, tensor.shape))
        tensor._tape = self
        tensor._node_id = node_id
        return node_id

    def _append(self, op: str, parents: Tuple[Optional[int], ...], backward: BackwardFn,
                shape: Tuple[int, ...]) -> int:
        node_id = len(self.nodes)
        self.nodes.append(TapeNode(node_id, op, parents, backward, shape))
        return node_id


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericAbortError(f"❌ 原语 {op} 产生非有限数值", {'op': op, 'shape': tuple(data.shape)})


def record(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward: BackwardFn) -> Tensor:
    """
    包装原语输出；当计算带活动且任一输入需要梯度时记录到计算带

    Args:
        op: 原语名称
        inputs: 输入张量
        out: 前向结果
        backward: 给定输出梯度，返回各输入梯度（不需要的位置可为None）
    """
    if _DEBUG_NUMERICS:
        check_finite(out, op)
    result = Tensor._wrap(out)
    tape = _ACTIVE_TAPE.get()
    if tape is None or not any(t.requires_grad for t in inputs):
        return result
    parents = tuple(tape.watch(t) if t.requires_grad else None for t in inputs)
    result.requires_grad = True
    result._tape = tape
    result._node_id = tape._append(op, parents, backward, result.shape)
    return result


class Gradients:
    """反向传播结果：按节点 id 保存的梯度缓冲"""

    def __init__(self, tape: Tape, buffers: Dict[int, np.ndarray]):
        self.tape = tape
        self.buffers = buffers

    def of(self, tensor: Tensor) -> np.ndarray:
        """取张量的梯度；不在计算带上或与损失无关时返回零"""
        if tensor._tape is self.tape and tensor._node_id is not None:
            grad = self.buffers.get(tensor._node_id)
            if grad is not None:
                return grad
        return np.zeros(tensor.shape, dtype=np.float64)

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        return self.of(tensor)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """
    反向累积梯度；扇出处梯度求和

    Args:
        tape: 记录了前向过程的计算带
        loss: 标量损失

    Returns:
        Gradients，计算带上每个需要梯度的叶子都有同形状的缓冲

    Raises:
        ContractError: 损失不是标量
    """
    if loss.data.size != 1:
        raise ContractError(f"backward 需要标量损失，当前形状 {loss.shape}")

    buffers: Dict[int, np.ndarray] = {}
    if loss._tape is tape and loss._node_id is not None:
        buffers[loss._node_id] = np.ones(loss.shape, dtype=np.float64)
        for node in reversed(tape.nodes[:loss._node_id + 1]):
            grad = buffers.get(node.node_id)
            if grad is None or node.backward is None:
                continue
            parent_grads = node.backward(grad)
            for parent_id, parent_grad in zip(node.parents, parent_grads):
                if parent_id is None or parent_grad is None:
                    continue
                existing = buffers.get(parent_id)
                buffers[parent_id] = parent_grad if existing is None else existing + parent_grad

    for node in tape.nodes:
        if node.is_leaf and node.node_id not in buffers:
            buffers[node.node_id] = np.zeros(node.shape, dtype=np.float64)
    return Gradients(tape, buffers)
