"""
cria/tensor.py — Плотные тензоры float64 с обратным автодифференцированием

Логика:
  1. Tensor хранит numpy-массив (только чтение) и, для листьев, буфер grad
  2. Каждая операция над тензорами, требующими градиента, пишет узел
     на ленту (Tape) текущего потока: входы, выход и замыкание VJP
  3. backward(loss) проходит ленту в обратном порядке ровно один раз
     и накапливает градиенты в листьях; лента после этого очищается

Лента — потоколокальная. Внутри no_grad() ничего не записывается.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import (
    DegenerateVarianceError, DimensionError, NoTapeError, OracleError, RankError,
)


# ─── Лента ───────────────────────────────────────────────

@dataclass(eq=False)
class Node:
    inputs: tuple
    output: 'Tensor'
    vjp: Callable[[np.ndarray], tuple]
    consumed: bool = False


@dataclass(eq=False)
class Tape:
    """Упорядоченная запись выполненных операций (топологический порядок)."""

    nodes: list = field(default_factory=list)

    def record(self, node: Node):
        self.nodes.append(node)

    def clear(self):
        for node in self.nodes:
            node.consumed = True
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


_local = threading.local()


def current_tape() -> Tape:
    tape = getattr(_local, 'tape', None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def _grad_enabled() -> bool:
    return getattr(_local, 'grad_enabled', True)


@contextmanager
def no_grad():
    """Отключает запись на ленту (оценка, конечные разности)."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


# ─── Тензор ──────────────────────────────────────────────

class Tensor:
    __slots__ = ('data', 'requires_grad', 'grad', '_node', 'name')

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> 'Tensor':
        # без копирования: массив создан операцией и больше никем не пишется
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._node = None
        t.name = None
        return t

    # ── свойства ──
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f'item() только для тензора из одного элемента, форма {self.shape}')
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        return Tensor._wrap(self.data)

    def assign(self, values: np.ndarray):
        """Замена значений листа (шаг оптимизатора, загрузка чекпоинта)."""
        values = np.array(values, dtype=np.float64)
        if values.shape != self.data.shape:
            raise DimensionError(f'assign: форма {values.shape} != {self.data.shape}')
        values.setflags(write=False)
        self.data = values

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f', name={self.name!r}' if self.name else ''
        return f'Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})'

    # ── операторы ──
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return take(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return tmean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)
    def swapaxes(self, a, b): return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.array(x, dtype=np.float64))


def _result(out: np.ndarray, inputs: tuple, vjp) -> Tensor:
    t = Tensor._wrap(out)
    if _grad_enabled() and any(i.requires_grad for i in inputs):
        t.requires_grad = True
        node = Node(inputs=inputs, output=t, vjp=vjp)
        t._node = node
        current_tape().record(node)
    return t


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f'Несовместимые формы для broadcast: {a} и {b}') from None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ─── Поэлементные операции ──────────────────────────────

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, (a, b), lambda g: (g / bd, -g * out / bd))


def scale(a, k: float) -> Tensor:
    a = as_tensor(a)
    k = float(k)
    return _result(a.data * k, (a,), lambda g: (g * k,))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def log1p(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(np.log1p(ad), (a,), lambda g: (g / (1.0 + ad),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def elu(a) -> Tensor:
    """ELU с alpha=1: x при x>0, иначе e^x − 1."""
    a = as_tensor(a)
    ad = a.data
    pos = ad > 0
    ex = np.exp(np.minimum(ad, 0.0))
    out = np.where(pos, ad, ex - 1.0)
    return _result(out, (a,), lambda g: (g * np.where(pos, 1.0, ex),))


def log_sigmoid(a) -> Tensor:
    """ln σ(x) = −(relu(−x) + ln(1 + e^{−|x|})), устойчиво при больших |x|."""
    a = as_tensor(a)
    return neg(add(relu(neg(a)), log1p(exp(neg(tabs(a))))))


_ELEMENTWISE = {
    'add': add, 'mul': mul, 'scale': scale, 'elu': elu,
    'exp': exp, 'neg': neg, 'abs': tabs, 'square': square,
}


def elementwise(op: str, *args) -> Tensor:
    """Диспетчер поэлементных операций по имени."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f'Неизвестная поэлементная операция: {op}') from None
    return fn(*args)


# ─── Линейная алгебра и формы ───────────────────────────

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f'matmul: несовместимые формы {a.shape} и {b.shape}')
    if a.ndim > 2 or b.ndim > 2:
        _broadcast_shape(a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _result(ad @ bd, (a, b), vjp)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _result(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def take(a, idx) -> Tensor:
    """Индексация numpy (срезы, fancy-индексы); градиент — через np.add.at."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in ts], axis=axis), ts, vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _result(np.stack([t.data for t in ts], axis=axis), ts, vjp)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    _broadcast_shape(a.shape, tuple(shape))
    return _result(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (g,))


# ─── Нормировки ──────────────────────────────────────────

def softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f'softmax: пустая последняя ось, форма {x.shape}')
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), vjp)


def log_softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f'log_softmax: пустая последняя ось, форма {x.shape}')
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Нормировка по последней оси: среднее 0, дисперсия 1, затем gain и bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1] if x.ndim else 0
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(
            f'layer_norm: gain {gain.shape} / bias {bias.shape} не совпадают с последней осью {x.shape}')
    if n < 2 and eps == 0:
        raise DegenerateVarianceError(f'layer_norm: длина оси {n} при eps=0')
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def vjp(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + bias.data, (x, gain, bias), vjp)


def l2_normalize(x, eps: float = 1e-12) -> Tensor:
    """Нормировка строк по евклидовой норме последней оси."""
    x = as_tensor(x)
    norm = sqrt(add(tsum(square(x), axis=-1, keepdims=True), eps))
    return div(x, norm)


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Инвертированный dropout: маска сэмплируется из rng и хранится в замыкании VJP."""
    x = as_tensor(x)
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(x, keep)


# ─── Обратный проход ────────────────────────────────────

def backward(loss: Tensor):
    """Накапливает d(loss)/d(leaf) во всех листьях с requires_grad; лента расходуется."""
    if loss.size != 1:
        raise RankError(f'backward: ожидается скаляр, получена форма {loss.shape}')
    node = loss._node
    if node is None or node.consumed:
        raise NoTapeError('backward: у тензора нет живой ленты (detached или уже использован)')
    tape = current_tape()
    try:
        stop = next(i for i in range(len(tape.nodes) - 1, -1, -1) if tape.nodes[i] is node)
    except StopIteration:
        raise NoTapeError('backward: узел лосса не найден на ленте текущего потока') from None

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for i in range(stop, -1, -1):
        nd = tape.nodes[i]
        g = grads.pop(id(nd.output), None)
        if g is None:
            continue
        for inp, gi in zip(nd.inputs, nd.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            gi = _unbroadcast(np.asarray(gi, dtype=np.float64), inp.shape)
            if inp._node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
    tape.clear()


# ─── Проверка конечными разностями ──────────────────────

@dataclass
class GradCheckResult:
    max_rel_error: float
    max_abs_error: float
    analytic: np.ndarray
    numeric: np.ndarray


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> GradCheckResult:
    """Сравнивает аналитический градиент f в x с центральными разностями."""
    base = np.array(as_tensor(x).data, dtype=np.float64)
    current_tape().clear()
    leaf = Tensor(base, requires_grad=True)
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise OracleError('grad_check: f вернула нечисловое значение')
    if out._node is None:
        analytic = np.zeros_like(base)
    else:
        backward(out)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    with no_grad():
        for i in range(base.size):
            plus = base.copy().reshape(-1)
            minus = base.copy().reshape(-1)
            plus[i] += h
            minus[i] -= h
            fp = float(f(Tensor(plus.reshape(base.shape))).data.sum())
            fm = float(f(Tensor(minus.reshape(base.shape))).data.sum())
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise OracleError(f'grad_check: нечисловое значение f при сдвиге координаты {i}')
            flat[i] = (fp - fm) / (2.0 * h)

    diff = np.abs(analytic - numeric)
    rel = diff / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return GradCheckResult(
        max_rel_error=float(rel.max(initial=0.0)),
        max_abs_error=float(diff.max(initial=0.0)),
        analytic=analytic, numeric=numeric,
    )


def finite_difference_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Максимум |аналит − центр. разность| / (|аналит| + |центр.| + 1e-12) по координатам."""
    return grad_check(f, x, h).max_rel_error
