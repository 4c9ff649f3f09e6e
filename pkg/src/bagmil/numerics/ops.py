#!/usr/bin/env python3
"""
张量原语
每个原语计算前向结果并提供反向函数；只支持偏置加法形式的广播
"""

import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core.exceptions import ContractError, DimensionError
from .tensor import Tensor, record

logger = logging.getLogger(__name__)

TensorLike = Union[Tensor, float, int, np.ndarray]

ACTIVATIONS = ('relu', 'tanh', 'sigmoid', 'softplus')


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


# ---- 广播辅助 ----

def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> Tuple[int, ...]:
    """相同形状、标量、或一方等于另一方的尾部形状（偏置加法）"""
    if a == b:
        return a
    if len(b) == 0 or (len(b) < len(a) and a[len(a) - len(b):] == b):
        return a
    if len(a) == 0 or (len(a) < len(b) and b[len(b) - len(a):] == a):
        return b
    raise DimensionError(f"{op}: 形状不兼容 {a} 与 {b}（只支持偏置加法广播）")


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead))).reshape(shape) if lead > 0 else grad.sum().reshape(shape)


# ---- 逐元素 ----

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, 'add')
    sa, sb = a.shape, b.shape
    return record('add', (a, b), a.data + b.data,
                  lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, 'sub')
    sa, sb = a.shape, b.shape
    return record('sub', (a, b), a.data - b.data,
                  lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, 'mul')
    da, db = a.data, b.data
    return record('mul', (a, b), da * db,
                  lambda g: (_reduce_to(g * db, da.shape), _reduce_to(g * da, db.shape)))


def neg(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return record('neg', (x,), -x.data, lambda g: (-g,))


def exp(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return record('exp', (x,), out, lambda g: (g * out,))


def log(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise ContractError("log 的输入必须为正")
    data = x.data
    return record('log', (x,), np.log(data), lambda g: (g / data,))


def square(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    data = x.data
    return record('square', (x,), data * data, lambda g: (2.0 * g * data,))


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """分支形式的数值稳定 sigmoid"""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus_array(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def activation(x: TensorLike, mode: str) -> Tensor:
    """
    逐元素激活

    Args:
        x: 输入
        mode: relu | tanh | sigmoid | softplus
    """
    x = as_tensor(x)
    data = x.data
    if mode == 'relu':
        mask = data > 0
        return record('relu', (x,), np.where(mask, data, 0.0), lambda g: (g * mask,))
    if mode == 'tanh':
        out = np.tanh(data)
        return record('tanh', (x,), out, lambda g: (g * (1.0 - out * out),))
    if mode == 'sigmoid':
        out = sigmoid_array(data)
        return record('sigmoid', (x,), out, lambda g: (g * out * (1.0 - out),))
    if mode == 'softplus':
        return record('softplus', (x,), softplus_array(data), lambda g: (g * sigmoid_array(data),))
    raise ContractError(f"未知激活函数: {mode}（可选 {ACTIVATIONS}）")


def relu(x: TensorLike) -> Tensor:
    return activation(x, 'relu')


def tanh(x: TensorLike) -> Tensor:
    return activation(x, 'tanh')


def sigmoid(x: TensorLike) -> Tensor:
    return activation(x, 'sigmoid')


def softplus(x: TensorLike) -> Tensor:
    return activation(x, 'softplus')


# ---- 线性代数与形状 ----

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """矩阵乘法 [m×k]·[k×n] -> [m×n]"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: 形状不匹配 {a.shape} · {b.shape}")
    da, db = a.data, b.data
    return record('matmul', (a, b), da @ db, lambda g: (g @ db.T, da.T @ g))


def transpose(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose 只支持二维张量，当前形状 {x.shape}")
    return record('transpose', (x,), x.data.T, lambda g: (g.T,))


def reshape(x: TensorLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"reshape: 无法将 {original} 变为 {tuple(shape)}") from e
    return record('reshape', (x,), out, lambda g: (g.reshape(original),))


def permute(x: TensorLike, axes: Sequence[int]) -> Tensor:
    """轴重排"""
    x = as_tensor(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: 轴 {axes} 与形状 {x.shape} 不匹配")
    inverse = tuple(np.argsort(axes))
    return record('permute', (x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ContractError("concat 需要至少一个张量")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: 形状不兼容 {[p.shape for p in parts]}") from e
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return record('concat', parts, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_slice(x: TensorLike, key) -> Tensor:
    """基本切片（整数与切片），不支持花式索引"""
    x = as_tensor(x)
    shape = x.shape
    out = x.data[key]

    def _backward(g):
        full = np.zeros(shape, dtype=np.float64)
        full[key] += g
        return (full,)

    return record('slice', (x,), out, _backward)


def gather_rows(x: TensorLike, indices: Sequence[int]) -> Tensor:
    """按整数下标取行（可重复）"""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    shape = x.shape

    def _backward(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return (full,)

    return record('gather', (x,), x.data[idx], _backward)


# ---- 归约 ----

def _normalize_axis(axis: Optional[int], ndim: int) -> Optional[int]:
    if axis is None:
        return None
    return axis % ndim if ndim else axis


def sum(x: TensorLike, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    ax = _normalize_axis(axis, x.ndim)
    out = x.data.sum() if ax is None else x.data.sum(axis=ax)

    def _backward(g):
        if ax is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return record('sum', (x,), np.asarray(out), _backward)


def mean(x: TensorLike, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[_normalize_axis(axis, x.ndim)]
    return mul(sum(x, axis=axis), 1.0 / count)


def max_reduce(x: TensorLike, axis: int = 0) -> Tensor:
    """沿轴取最大值；梯度只流向第一个最大值位置"""
    x = as_tensor(x)
    ax = _normalize_axis(axis, x.ndim)
    data = x.data
    arg = np.argmax(data, axis=ax)
    out = np.take_along_axis(data, np.expand_dims(arg, ax), axis=ax).squeeze(ax)

    def _backward(g):
        full = np.zeros(data.shape, dtype=np.float64)
        np.put_along_axis(full, np.expand_dims(arg, ax), np.expand_dims(g, ax), axis=ax)
        return (full,)

    return record('max', (x,), out, _backward)


def softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    data = x.data
    shifted = data - data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record('softmax', (x,), out, _backward)


def log_softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    data = x.data
    shifted = data - data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def _backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return record('log_softmax', (x,), out, _backward)


# ---- 卷积与池化 ----

def conv_output_size(size: int, kernel: int, stride: int) -> int:
    """有效卷积输出尺寸；几何不能整除时报错"""
    if kernel > size:
        raise DimensionError(f"conv2d: 卷积核 {kernel} 大于输入 {size}")
    if (size - kernel) % stride != 0:
        raise DimensionError(f"conv2d: (输入{size} - 卷积核{kernel}) 不能被步长{stride}整除")
    return (size - kernel) // stride + 1


def conv2d(x: TensorLike, k: TensorLike, stride: int = 1) -> Tensor:
    """
    有效（无填充）二维互相关，不翻转卷积核

    Args:
        x: [C_in×H×W] 或 [N×C_in×H×W]
        k: [C_out×C_in×kh×kw]
        stride: 步长

    Returns:
        [C_out×H'×W'] 或 [N×C_out×H'×W']
    """
    x, k = as_tensor(x), as_tensor(k)
    if stride < 1:
        raise ContractError(f"conv2d: 步长必须 >= 1，当前 {stride}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or k.ndim != 4:
        raise DimensionError(f"conv2d: 输入形状 {x.shape} 或卷积核形状 {k.shape} 非法")
    xd = x.data if batched else x.data[None]
    n, c_in, h, w = xd.shape
    c_out, kc, kh, kw = k.shape
    if kc != c_in:
        raise DimensionError(f"conv2d: 输入通道 {c_in} 与卷积核通道 {kc} 不一致 ({x.shape} vs {k.shape})")
    ho = conv_output_size(h, kh, stride)
    wo = conv_output_size(w, kw, stride)

    # windows: [N, C, H', W', kh, kw]
    windows = sliding_window_view(xd, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c_in * kh * kw)
    kmat = k.data.reshape(c_out, c_in * kh * kw)
    out = (cols @ kmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    kdata = k.data

    def _backward(g):
        gb = g if batched else g[None]
        gmat = gb.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
        grad_k = (gmat.T @ cols).reshape(kdata.shape)
        grad_x = np.zeros((n, c_in, h, w), dtype=np.float64)
        for a in range(kh):
            for b in range(kw):
                contrib = np.einsum('noij,oc->ncij', gb, kdata[:, :, a, b])
                grad_x[:, :, a:a + stride * ho:stride, b:b + stride * wo:stride] += contrib
        return (grad_x if batched else grad_x[0], grad_k)

    result = np.ascontiguousarray(out) if batched else np.ascontiguousarray(out[0])
    return record('conv2d', (x, k), result, _backward)


def add_channel_bias(x: TensorLike, b: TensorLike) -> Tensor:
    """逐通道偏置：x [C×H×W] 或 [N×C×H×W]，b [C]"""
    x, b = as_tensor(x), as_tensor(b)
    channel_axis = x.ndim - 3
    if x.ndim not in (3, 4) or b.ndim != 1 or b.shape[0] != x.shape[channel_axis]:
        raise DimensionError(f"add_channel_bias: 形状不匹配 {x.shape} 与 {b.shape}")
    reduce_axes = tuple(i for i in range(x.ndim) if i != channel_axis)
    out = x.data + b.data[:, None, None]
    return record('channel_bias', (x, b), out, lambda g: (g, g.sum(axis=reduce_axes)))


def max_pool2d(x: TensorLike, size: int = 2) -> Tensor:
    """
    不重叠最大池化（floor 模式：末尾不足一个窗口的行列丢弃）

    Args:
        x: [C×H×W] 或 [N×C×H×W]
        size: 池化窗口边长
    """
    x = as_tensor(x)
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise DimensionError(f"max_pool2d: 输入形状 {x.shape} 非法")
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise DimensionError(f"max_pool2d: 输入 {h}×{w} 小于池化窗口 {size}")
    cropped = xd[:, :, :ho * size, :wo * size]
    blocks = cropped.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    arg = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def _backward(g):
        gb = g if batched else g[None]
        grad_blocks = np.zeros((n, c, ho, wo, size * size), dtype=np.float64)
        np.put_along_axis(grad_blocks, arg[..., None], gb[..., None], axis=-1)
        grad = grad_blocks.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * size, wo * size)
        full = np.zeros((n, c, h, w), dtype=np.float64)
        full[:, :, :ho * size, :wo * size] = grad
        return (full if batched else full[0],)

    return record('max_pool2d', (x,), out if batched else out[0], _backward)
