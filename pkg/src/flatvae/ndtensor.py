"""Dense float64 tensors with taped reverse-mode differentiation and Adam.

The rest of the package does all of its numerics through this module: a
``Tensor`` wraps a C-contiguous float64 array, and any op applied while a
``Tape`` is active records a node with a hand-written local gradient rule.
``Tape.backward`` replays the nodes in reverse and accumulates gradients
into the ``grad`` field of every ``requires_grad`` tensor it reaches.

Elementwise binary ops broadcast only when one operand's shape is a suffix
of the other's (a leading batch axis); anything richer is rejected so that
every gradient rule stays a one-liner.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DomainError, TrainingFault


class Tensor:
    """A dense float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the stored values."""
        return self.data.ravel()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- sugar -------------------------------------------------------------

    def __add__(self, other):
        return add_scalar(self, other) if _is_scalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if _is_scalar(other) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return scale(self, other) if _is_scalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> "Tensor":
        return tensor_sum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return tensor_mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


# -- tape ------------------------------------------------------------------


@dataclass
class TapeNode:
    """One recorded op: inputs, output, and a rule mapping d(out) to d(inputs)."""

    inputs: tuple
    output: Tensor
    grad_fn: "callable"


class Tape:
    """Ordered record of ops for one reverse sweep.

    A tape is single-owner: one training step opens one tape, runs backward
    once, and drops it. Forward passes outside any tape are never recorded.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into ``grad`` of every reachable tensor.

        ``root`` must be a single-element tensor. Each node is visited exactly
        once, in reverse recording order, so repeated subexpressions (fan-out)
        accumulate additively. Deterministic: identical tapes give identical
        gradients bit for bit.
        """
        if root.size != 1:
            raise ContractViolation(f"backward root must be scalar, shape is {root.shape}")
        if not self.nodes:
            raise ContractViolation("backward on an empty tape")
        seed = np.ones_like(root.data)
        root.grad = seed if root.grad is None else root.grad + seed
        for node in reversed(self.nodes):
            g_out = node.output.grad
            if g_out is None:
                continue
            for inp, g in zip(node.inputs, node.grad_fn(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make(data: np.ndarray, inputs: tuple, grad_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append(TapeNode(inputs, out, grad_fn))
    return out


# -- broadcasting (leading batch axes only) ---------------------------------


def _broadcast_pair(a: Tensor, b: Tensor) -> int:
    """Validate shapes for an elementwise op.

    Returns +1 if b broadcasts over leading axes of a, -1 for the reverse,
    0 for equal shapes. Any other combination is rejected.
    """
    if a.shape == b.shape:
        return 0
    if a.shape[len(a.shape) - len(b.shape):] == b.shape and len(a.shape) > len(b.shape):
        return 1
    if b.shape[len(b.shape) - len(a.shape):] == a.shape and len(b.shape) > len(a.shape):
        return -1
    raise ContractViolation(f"shapes {a.shape} and {b.shape} do not conform")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the leading axes it was broadcast across."""
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra))) if extra else g


# -- primitive ops -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_pair(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_pair(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), -_reduce_to(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_pair(a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)))


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(x.data * s, (x,), lambda g: (g * s,))


def add_scalar(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(x.data + s, (x,), lambda g: (g,))


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul needs conforming 2-D shapes, got {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _make(e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise DomainError("log of a non-positive value")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (g * (2.0 * xd),))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_nd(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated in its overflow-safe form."""
    xd = x.data
    out = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))
    return _make(out, (x,), lambda g: (g * _sigmoid_nd(xd),))


def _sigmoid_nd(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is 1 strictly inside, 0 outside."""
    mask = (x.data > lo) & (x.data < hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


def tensor_sum(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        shape = x.shape
        return _make(np.asarray(x.data.sum()), (x,),
                     lambda g: (np.broadcast_to(g, shape).copy(),))
    return _make(x.data.sum(axis=axis), (x,),
                 lambda g: (np.repeat(np.expand_dims(g, axis), x.shape[axis], axis=axis),))


def tensor_mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return scale(tensor_sum(x, axis), 1.0 / n)


def concat(tensors: "list[Tensor]", axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractViolation("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(np.ascontiguousarray(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis))
                     for i in range(len(sizes)))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _make(np.ascontiguousarray(x.data[idx]), (x,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def tile_rows(x: Tensor, k: int) -> Tensor:
    """Repeat each row k consecutive times: [B, ...] -> [B*k, ...]."""
    if x.data.ndim < 1 or k < 1:
        raise ContractViolation(f"tile_rows needs k >= 1 and a leading axis, got k={k}, shape={x.shape}")
    b = x.shape[0]
    return _make(np.repeat(x.data, k, axis=0), (x,),
                 lambda g: (g.reshape(b, k, *x.shape[1:]).sum(axis=1),))


def permute_rows(x: Tensor, perm: np.ndarray) -> Tensor:
    perm = np.asarray(perm, dtype=np.intp)
    if perm.shape != (x.shape[0],):
        raise ContractViolation(f"permutation length {perm.shape} does not match leading axis of {x.shape}")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return _make(x.data[perm], (x,), lambda g: (g[inv],))


def logsumexp(x: Tensor, axis: int) -> Tensor:
    """Max-shifted log-sum-exp along one axis."""
    m = x.data.max(axis=axis, keepdims=True)
    shifted = sub(x, Tensor(np.broadcast_to(m, x.shape).copy()))
    return add(log(tensor_sum(exp(shifted), axis=axis)), Tensor(np.squeeze(m, axis=axis)))


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moments and counters for one ordered parameter group."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: "list[Tensor]", learning_rate: float = 1e-4, **kw) -> "AdamState":
        state = cls(learning_rate=learning_rate, **kw)
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: "list[Tensor]", state: AdamState, names: "list[str] | None" = None) -> None:
    """One bias-corrected Adam update, in place; a missing grad counts as zero.

    Raises TrainingFault naming the parameter if its gradient is not finite.
    """
    if len(params) != len(state.first_moment):
        raise ContractViolation(
            f"Adam state holds {len(state.first_moment)} moment arrays for {len(params)} params")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            name = names[i] if names else f"param[{i}]"
            raise TrainingFault(f"non-finite gradient in {name}")
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
