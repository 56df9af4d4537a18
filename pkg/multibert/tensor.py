"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Inside a Tape block, every primitive op that touches a tensor with
requires_grad=True appends a node to that Tape; outside one nothing is
recorded and results carry no gradient. backward() replays the tape in
reverse, visiting each node once, and leaves dLoss/dTensor in .grad of the
leaf tensors (parameters).

    with Tape():
        loss = cross_entropy(logits, targets)
        backward(loss)

Inference code wraps itself in no_grad() so nothing is recorded.
"""
import contextlib
import contextvars
import zlib
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, EmptyLossError, ParameterError, ShapeError

DTYPE = np.float64
IGNORE_INDEX = -100

# GELU (tanh form) constant sqrt(2/pi)
_GELU_C = 0.7978845608028654


class Tensor:
    """A row-major float64 array plus gradient bookkeeping."""

    __slots__ = ('data', 'requires_grad', 'grad', 'name', '_is_leaf')

    def __init__(self, data, requires_grad=False, name=None, copy=True):
        arr = np.array(data, dtype=DTYPE) if copy else np.asarray(data, dtype=DTYPE)
        if any(dim < 0 for dim in arr.shape):
            raise ShapeError(f"negative dimension in shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._is_leaf = True

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ''
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)

    @property
    def is_leaf(self) -> bool:
        return self._is_leaf

    def numpy(self) -> np.ndarray:
        """Copy of the underlying array."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> 'Tensor':
        return Tensor(self.data, requires_grad=False, name=self.name)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


# ========== TAPE ==========

class _Node:
    __slots__ = ('out', 'parents', 'backward')

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of primitive ops; owned by one logical thread."""

    def __init__(self):
        self.nodes: List[_Node] = []
        self._token = None

    def __len__(self):
        return len(self.nodes)

    def record(self, out: Tensor, parents: Tuple[Tensor, ...], backward: Callable):
        self.nodes.append(_Node(out, parents, backward))

    def clear(self):
        self.nodes = []

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False


_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar('multibert_tape', default=None)
_RECORDING: contextvars.ContextVar = contextvars.ContextVar('multibert_recording', default=True)


def current_tape() -> Optional[Tape]:
    """The tape bound to this context, or None outside any `with Tape()` block."""
    return _ACTIVE_TAPE.get()


@contextlib.contextmanager
def no_grad():
    """Suppress tape recording (inference)."""
    token = _RECORDING.set(False)
    try:
        yield
    finally:
        _RECORDING.reset(token)


def is_recording() -> bool:
    return _RECORDING.get()


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward: Callable) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    needs_grad = tape is not None and _RECORDING.get() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs_grad, copy=False)
    if needs_grad:
        out._is_leaf = False
        tape.record(out, parents, backward)
    return out


def backward(loss: Tensor, tape: Optional[Tape] = None):
    """Populate .grad on every leaf reachable from a scalar loss, then clear the tape."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else current_tape()
    if not loss.requires_grad or loss.is_leaf:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        if tape is not None:
            tape.clear()
        return
    if tape is None:
        raise ContractError("backward needs the Tape the loss was recorded on")
    seed = np.ones_like(loss.data)

    grads: Dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, parent_grad in zip(node.parents, node.backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                if parent.grad is None:
                    parent.grad = np.array(parent_grad, dtype=DTYPE)
                else:
                    parent.grad = parent.grad + parent_grad
            else:
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
    tape.clear()


# ========== CONSTRUCTION ==========

def make_rng(seed: int, *labels) -> np.random.Generator:
    """Independent, reproducible stream for (seed, labels...)."""
    spawn_key = tuple(zlib.crc32(str(label).encode('utf-8')) for label in labels)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)))


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def normal(shape, std: float, rng: np.random.Generator, name=None, requires_grad=True) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=requires_grad, name=name, copy=False)


def zeros(shape, name=None, requires_grad=True) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad, name=name, copy=False)


def ones(shape, name=None, requires_grad=True) -> Tensor:
    return Tensor(np.ones(shape, dtype=DTYPE), requires_grad=requires_grad, name=name, copy=False)


def snapshot(tensors: Iterable[Tensor]) -> List[np.ndarray]:
    return [t.data.copy() for t in tensors]


def restore(tensors: Sequence[Tensor], arrays: Sequence[np.ndarray]):
    for t, arr in zip(tensors, arrays):
        t.data[...] = arr


# ========== ELEMENTWISE ==========

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast(op, a: Tensor, b: Tensor, opname: str) -> np.ndarray:
    try:
        return op(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{opname}: cannot broadcast shapes {a.shape} and {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _broadcast(np.add, a, b, 'add')

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result(data, (a, b), _backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _broadcast(np.subtract, a, b, 'sub')

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _result(data, (a, b), _backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _broadcast(np.multiply, a, b, 'mul')

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _result(data, (a, b), _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def _backward(g):
        return (g * factor,)
    return _result(x.data * factor, (x,), _backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    data = 0.5 * v * (1.0 + t)

    def _backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * d_inner
        return (g * local,)
    return _result(data, (x,), _backward)


# ========== LINEAR ALGEBRA ==========

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dims broadcast like numpy.matmul."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def _backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _result(data, (a, b), _backward)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"dot needs equal shapes, got {a.shape} and {b.shape}")
    return sum_(mul(a, b))


# ========== SHAPE ==========

def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}")

    def _backward(g):
        return (g.reshape(x.shape),)
    return _result(data, (x,), _backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        return (np.transpose(g, inverse),)
    return _result(np.transpose(x.data, axes), (x,), _backward)


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, axes)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _result(data, tuple(tensors), _backward)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"cannot broadcast {x.shape} to {shape}")

    def _backward(g):
        return (_unbroadcast(g, x.shape),)
    return _result(data, (x,), _backward)


def getitem(x: Tensor, index) -> Tensor:
    data = np.array(x.data[index], dtype=DTYPE)

    def _backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)
    return _result(data, (x,), _backward)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: rows of a 2-D table selected by an integer array."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D table, got {table.shape}")
    data = table.data[ids]

    def _backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)
    return _result(data, (table,), _backward)


# ========== REDUCTIONS ==========

def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)
    return _result(np.asarray(data, dtype=DTYPE), (x,), _backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ========== NORMALIZATION ==========

def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} is out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """
    Softmax along an axis, stabilized by max-subtraction.

    mask (broadcastable booleans) keeps True positions; masked positions get
    probability exactly 0.
    """
    axis = _check_axis(x, axis)
    values = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ContractError("softmax: a row has every position masked")
        values = np.where(mask, values, -np.inf)
    shifted = values - np.max(values, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def _backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)
    return _result(y, (x,), _backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    """Normalize the last dim to zero mean / unit variance, then apply gain and bias."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be > 0, got {eps}")
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({n},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    data = xhat * gain.data + bias.data

    def _backward(g):
        dxhat = g * gain.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgain = (g * xhat).reshape(-1, n).sum(axis=0)
        dbias = g.reshape(-1, n).sum(axis=0)
        return dx, dgain, dbias
    return _result(data, (x, gain, bias), _backward)


# ========== LOSS ==========

def cross_entropy(logits: Tensor, targets, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean negative log-softmax probability of the targets over non-ignored rows."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy needs [n x c] logits, got {logits.shape}")
    n, c = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != n:
        raise ShapeError(f"cross_entropy: {n} logit rows but {targets.shape[0]} targets")
    valid = targets != ignore_index
    rows = np.nonzero(valid)[0]
    if rows.size == 0:
        raise EmptyLossError("empty loss: every position is ignore_index")
    picked = targets[rows]
    if np.any(picked < 0) or np.any(picked >= c):
        raise ParameterError(f"cross_entropy targets must lie in [0, {c}) or equal {ignore_index}")

    shifted = logits.data - np.max(logits.data, axis=1, keepdims=True)
    log_probs = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    count = rows.size
    loss = -np.sum(log_probs[rows, picked]) / count

    def _backward(g):
        grad = np.exp(log_probs)
        grad[rows, picked] -= 1.0
        grad[~valid] = 0.0
        return (grad * (g / count),)
    return _result(np.asarray(loss, dtype=DTYPE), (logits,), _backward)


# ========== OPTIMIZER ==========

class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    def __init__(self):
        self.step = 0
        self.moments: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    def for_param(self, param: Tensor) -> Tuple[np.ndarray, np.ndarray]:
        key = id(param)
        if key not in self.moments:
            self.moments[key] = (np.zeros_like(param.data), np.zeros_like(param.data))
        return self.moments[key]


def adam_step(params: Sequence[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps_opt: float = 1e-8, state: Optional[AdamState] = None) -> AdamState:
    """One Adam update over params; gradients are cleared afterwards."""
    if state is None:
        state = AdamState()
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient on trainable tensor(s) {missing}; call backward first")
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for p in params:
        g = p.grad
        m, v = state.for_param(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps_opt)
        p.grad = None
    return state


class Adam:
    """Adam over a fixed parameter list (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: Sequence[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self):
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
