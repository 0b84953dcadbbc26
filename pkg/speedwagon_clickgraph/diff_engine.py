"""Reverse-mode automatic differentiation over numpy arrays.

Every operation returns a :class:`Tensor` that remembers its parents and a
closure computing the parents' gradients from its own. Calling
:meth:`Tensor.backward` on a scalar walks the recorded operations in
reverse topological order.

Parameters live in a :class:`ParamStore`, which is also where the Adam
moments are kept.
"""
from __future__ import annotations

import dataclasses
import logging
import zlib
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from speedwagon_clickgraph.exceptions import ShapeError

__all__ = [
    "BCE_EPSILON",
    "Tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "matmul",
    "concat",
    "stack",
    "reshape",
    "tensor_sum",
    "mean",
    "softmax",
    "sigmoid",
    "tanh",
    "leaky_relu",
    "log",
    "exp",
    "clamp",
    "embedding_lookup",
    "dropout",
    "where",
    "masked_select",
    "GruParams",
    "gru_cell",
    "bce_loss",
    "ParamStore",
    "AdamState",
    "adam_step",
    "numerical_gradient",
    "check_gradients",
]

logger = logging.getLogger(__name__)

BCE_EPSILON = 1e-7

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
Operand = Union["Tensor", ArrayLike]
BackwardFunction = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A value in the computation together with its gradient."""

    __slots__ = (
        "value",
        "grad",
        "parents",
        "_backward",
        "requires_grad",
        "name",
    )

    def __init__(
        self,
        value: np.ndarray,
        parents: Sequence["Tensor"] = (),
        backward: Optional[BackwardFunction] = None,
        requires_grad: bool = False,
        name: Optional[str] = None
    ) -> None:
        self.value: np.ndarray = value
        self.grad: Optional[np.ndarray] = None
        self.parents: Tuple[Tensor, ...] = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(
            parent.requires_grad for parent in self.parents
        )
        self.name = name

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype}>"

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.value.dtype

    @property
    def ndim(self) -> int:
        return int(self.value.ndim)

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, gradient: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(x) into ``x.grad`` for every ancestor x.

        Raises:
            ValueError: if no gradient is given for a non-scalar tensor.
        """
        if gradient is None:
            if self.value.size != 1:
                raise ValueError(
                    f"backward() without a gradient needs a scalar, "
                    f"got shape {self.shape}"
                )
            gradient = np.ones_like(self.value)
        self.grad = np.asarray(gradient, dtype=self.dtype)
        for node in reversed(self._topological_order()):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, parent_grad in zip(node.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(parent_grad, dtype=parent.dtype)
                else:
                    parent.grad = parent.grad + parent_grad
            if node.parents and node is not self:
                # interior gradients are released once propagated
                node.grad = None

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __getitem__(self, index: object) -> "Tensor":
        return _index(self, index)


def constant(value: ArrayLike, dtype: np.dtype = np.float64) -> Tensor:
    """Wrap data as a tensor no gradient is tracked for."""
    return Tensor(np.asarray(value, dtype=dtype))


def _lift(operand: Operand, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(operand, Tensor):
        return operand
    dtype = like.dtype if like is not None else np.float64
    return constant(operand, dtype=dtype)


def _lift_pair(left: Operand, right: Operand) -> Tuple[Tensor, Tensor]:
    if isinstance(left, Tensor):
        return left, _lift(right, left)
    right_tensor = _lift(right)
    return _lift(left, right_tensor), right_tensor


def _unbroadcast(gradient: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while gradient.ndim > len(shape):
        gradient = gradient.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and gradient.shape[axis] != 1:
            gradient = gradient.sum(axis=axis, keepdims=True)
    return gradient


def _broadcast_shape(operation: str, left: Tensor, right: Tensor) -> None:
    try:
        np.broadcast_shapes(left.shape, right.shape)
    except ValueError as error:
        raise ShapeError(operation, left.shape, right.shape) from error


def add(left: Operand, right: Operand) -> Tensor:
    a, b = _lift_pair(left, right)
    _broadcast_shape("add", a, b)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.value + b.value, (a, b), backward)


def sub(left: Operand, right: Operand) -> Tensor:
    a, b = _lift_pair(left, right)
    _broadcast_shape("sub", a, b)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.value - b.value, (a, b), backward)


def mul(left: Operand, right: Operand) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _lift_pair(left, right)
    _broadcast_shape("mul", a, b)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        )

    return Tensor(a.value * b.value, (a, b), backward)


def matmul(left: Tensor, right: Tensor) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast.

    Raises:
        ShapeError: if the inner dimensions differ or either side has
            fewer than two axes.
    """
    a, b = _lift_pair(left, right)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        grad_a = np.matmul(g, np.swapaxes(b.value, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return Tensor(np.matmul(a.value, b.value), (a, b), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Join tensors along an existing axis.

    Raises:
        ShapeError: if the tensors differ on any other axis.
    """
    if not tensors:
        raise ValueError("concat requires at least one tensor")
    first = tensors[0]
    axis = axis % first.ndim
    for other in tensors[1:]:
        same_rank = other.ndim == first.ndim
        if not same_rank or any(
                size != other.shape[i]
                for i, size in enumerate(first.shape) if i != axis):
            raise ShapeError("concat", first.shape, other.shape)
    sizes = [tensor.shape[axis] for tensor in tensors]
    boundaries = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return np.split(g, boundaries, axis=axis)

    return Tensor(
        np.concatenate([tensor.value for tensor in tensors], axis=axis),
        tensors,
        backward
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join same-shape tensors along a new axis."""
    if not tensors:
        raise ValueError("stack requires at least one tensor")
    for other in tensors[1:]:
        if other.shape != tensors[0].shape:
            raise ShapeError("stack", tensors[0].shape, other.shape)
    value = np.stack([tensor.value for tensor in tensors], axis=axis)
    axis = axis % value.ndim

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return Tensor(value, tensors, backward)


def reshape(tensor: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        value = tensor.value.reshape(shape)
    except ValueError as error:
        raise ShapeError("reshape", tensor.shape, tuple(shape)) from error

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return (g.reshape(tensor.shape),)

    return Tensor(value, (tensor,), backward)


def _is_basic_index(index: object) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(
        part is Ellipsis or part is None or isinstance(part, (slice, int))
        for part in parts
    )


def _index(tensor: Tensor, index: object) -> Tensor:
    value = tensor.value[index]
    basic = _is_basic_index(index)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        full = np.zeros_like(tensor.value)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor(np.array(value), (tensor,), backward)


def tensor_sum(
    tensor: Tensor,
    axis: Optional[int] = None,
    keepdims: bool = False
) -> Tensor:
    value = tensor.value.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, tensor.shape).copy(),)

    return Tensor(np.asarray(value), (tensor,), backward)


def mean(
    tensor: Tensor,
    axis: Optional[int] = None,
    keepdims: bool = False
) -> Tensor:
    count = tensor.value.size if axis is None else tensor.shape[axis]
    return mul(tensor_sum(tensor, axis, keepdims), 1.0 / count)


def softmax(tensor: Tensor, axis: int = -1) -> Tensor:
    shifted = tensor.value - tensor.value.max(axis=axis, keepdims=True)
    exponent = np.exp(shifted)
    value = exponent / exponent.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        inner = (g * value).sum(axis=axis, keepdims=True)
        return (value * (g - inner),)

    return Tensor(value, (tensor,), backward)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    positive = x >= 0
    result = np.empty_like(x)
    result[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    result[~positive] = exp_x / (1.0 + exp_x)
    return result


def sigmoid(tensor: Tensor) -> Tensor:
    value = _stable_sigmoid(tensor.value)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return (g * value * (1.0 - value),)

    return Tensor(value, (tensor,), backward)


def tanh(tensor: Tensor) -> Tensor:
    value = np.tanh(tensor.value)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return (g * (1.0 - value * value),)

    return Tensor(value, (tensor,), backward)


def leaky_relu(tensor: Tensor, slope: float = 0.2) -> Tensor:
    positive = tensor.value > 0
    value = np.where(positive, tensor.value, slope * tensor.value)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return (np.where(positive, g, slope * g),)

    return Tensor(value.astype(tensor.dtype), (tensor,), backward)


def log(tensor: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return (g / tensor.value,)

    return Tensor(np.log(tensor.value), (tensor,), backward)


def exp(tensor: Tensor) -> Tensor:
    value = np.exp(tensor.value)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return (g * value,)

    return Tensor(value, (tensor,), backward)


def clamp(tensor: Tensor, low: float, high: float) -> Tensor:
    """Limit values to [low, high]; gradient flows only inside the range."""
    inside = (tensor.value >= low) & (tensor.value <= high)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        return (np.where(inside, g, 0.0),)

    return Tensor(
        np.clip(tensor.value, low, high).astype(tensor.dtype),
        (tensor,),
        backward
    )


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Rows of table for integer indices of any shape.

    Raises:
        IndexError: for indices outside the table.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= len(
            table.value)):
        raise IndexError(
            f"Embedding index out of range for table of {len(table.value)} "
            f"rows"
        )
    value = table.value[indices]

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        full = np.zeros_like(table.value)
        np.add.at(
            full,
            indices.reshape(-1),
            g.reshape(-1, *table.shape[1:])
        )
        return (full,)

    return Tensor(value, (table,), backward)


def dropout(
    tensor: Tensor,
    rate: float,
    train: bool,
    rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Inverted dropout; identity outside training and for rate 0.

    Raises:
        ValueError: for rates outside [0, 1).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be within [0, 1), got {rate}")
    if not train or rate == 0.0:
        return tensor
    rng = rng if rng is not None else np.random.default_rng()
    keep = (rng.random(tensor.shape) >= rate) / (1.0 - rate)
    return mul(tensor, keep.astype(tensor.dtype))


def where(mask: np.ndarray, chosen: Tensor, otherwise: Tensor) -> Tensor:
    """Select chosen where mask is true, otherwise the other operand."""
    weight = np.asarray(mask, dtype=chosen.dtype)
    return add(mul(chosen, weight), mul(otherwise, 1.0 - weight))


def masked_select(tensor: Tensor, mask: np.ndarray) -> Tensor:
    """Flat tensor of the entries where mask is true."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tensor.shape:
        raise ShapeError("masked_select", tensor.shape, mask.shape)

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        full = np.zeros_like(tensor.value)
        full[mask] = g
        return (full,)

    return Tensor(tensor.value[mask], (tensor,), backward)


@dataclasses.dataclass(frozen=True)
class GruParams:
    """Weights of one GRU layer.

    Gates are laid out as [update, reset, candidate] along the last axis
    of every weight.
    """

    input_weights: Tensor
    hidden_weights: Tensor
    bias: Tensor

    @property
    def hidden_size(self) -> int:
        return int(self.hidden_weights.shape[0])

    @property
    def input_size(self) -> int:
        return int(self.input_weights.shape[0])


def gru_cell(x: Tensor, hidden: Tensor, params: GruParams) -> Tensor:
    """One step of a gated recurrent unit.

    ``z = sigmoid(x Wz + h Uz + bz)``, ``r = sigmoid(x Wr + h Ur + br)``,
    ``n = tanh(x Wn + (r * h) Un + bn)`` and the new state is
    ``(1 - z) * n + z * h``.

    Args:
        x: input of shape (batch, input_size).
        hidden: previous state of shape (batch, hidden_size).
        params: layer weights.

    Raises:
        ShapeError: if x or hidden do not fit the weights.
    """
    size = params.hidden_size
    w_x = params.input_weights.value
    w_h = params.hidden_weights.value
    bias = params.bias.value
    if x.ndim != 2 or x.shape[1] != params.input_size:
        raise ShapeError("gru_cell", x.shape, params.input_weights.shape)
    if hidden.shape != (x.shape[0], size):
        raise ShapeError("gru_cell", hidden.shape, x.shape)

    h = hidden.value
    projected = x.value @ w_x + bias
    gates = projected[:, :2 * size] + h @ w_h[:, :2 * size]
    update = _stable_sigmoid(gates[:, :size])
    reset = _stable_sigmoid(gates[:, size:])
    reset_hidden = reset * h
    candidate = np.tanh(projected[:, 2 * size:] + reset_hidden @ w_h[
                                                                :, 2 * size:])
    value = (1.0 - update) * candidate + update * h

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        d_candidate = g * (1.0 - update)
        d_update = g * (h - candidate)
        d_hidden = g * update
        d_candidate_pre = d_candidate * (1.0 - candidate * candidate)
        d_w_h_candidate = reset_hidden.T @ d_candidate_pre
        d_reset_hidden = d_candidate_pre @ w_h[:, 2 * size:].T
        d_reset = d_reset_hidden * h
        d_hidden = d_hidden + d_reset_hidden * reset
        d_update_pre = d_update * update * (1.0 - update)
        d_reset_pre = d_reset * reset * (1.0 - reset)
        d_gates = np.concatenate([d_update_pre, d_reset_pre], axis=1)
        d_projected = np.concatenate([d_gates, d_candidate_pre], axis=1)
        d_hidden = d_hidden + d_gates @ w_h[:, :2 * size].T
        return (
            d_projected @ w_x.T,
            d_hidden,
            x.value.T @ d_projected,
            np.concatenate([h.T @ d_gates, d_w_h_candidate], axis=1),
            d_projected.sum(axis=0),
        )

    return Tensor(
        value,
        (
            x,
            hidden,
            params.input_weights,
            params.hidden_weights,
            params.bias,
        ),
        backward
    )


def bce_loss(
    probabilities: Tensor,
    clicks: np.ndarray,
    mask: Optional[np.ndarray] = None,
    epsilon: float = BCE_EPSILON
) -> Tensor:
    """Mean binary cross entropy over the entries selected by mask.

    Probabilities are clamped to [epsilon, 1 - epsilon] first.
    """
    clicks = np.asarray(clicks, dtype=probabilities.dtype)
    if clicks.shape != probabilities.shape:
        raise ShapeError("bce_loss", probabilities.shape, clicks.shape)
    weight = np.ones_like(clicks) if mask is None \
        else np.asarray(mask, dtype=probabilities.dtype)
    if weight.shape != clicks.shape:
        raise ShapeError("bce_loss", probabilities.shape, weight.shape)
    count = max(float(weight.sum()), 1.0)
    p = probabilities.value
    inside = (p >= epsilon) & (p <= 1.0 - epsilon)
    clipped = np.clip(p, epsilon, 1.0 - epsilon)
    value = -np.sum(
        weight * (clicks * np.log(clipped)
                  + (1.0 - clicks) * np.log(1.0 - clipped))
    ) / count

    def backward(g: np.ndarray) -> Sequence[np.ndarray]:
        local = -(clicks / clipped - (1.0 - clicks) / (1.0 - clipped))
        return (np.where(inside, g * weight * local / count, 0.0),)

    return Tensor(
        np.asarray(value, dtype=probabilities.dtype),
        (probabilities,),
        backward
    )


@dataclasses.dataclass
class AdamState:
    """First and second moment estimates of one parameter."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0


class ParamStore:
    """Named trainable tensors and their optimizer state.

    Float64 is used for gradient checking and float32 for training runs.
    Each parameter draws its initial value from a generator seeded by the
    store seed and the parameter name, so adding or removing a parameter
    leaves the others unchanged.
    """

    def __init__(
        self,
        dtype: Union[str, np.dtype] = np.float64,
        seed: int = 0
    ) -> None:
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self._parameters: Dict[str, Tensor] = {}
        self.adam: Dict[str, AdamState] = {}

    def add(self, name: str, value: ArrayLike) -> Tensor:
        """Register a parameter under a unique name.

        Raises:
            KeyError: if the name is already taken.
        """
        if name in self._parameters:
            raise KeyError(f"Parameter {name} already exists")
        tensor = Tensor(
            np.array(value, dtype=self.dtype),
            requires_grad=True,
            name=name
        )
        self._parameters[name] = tensor
        return tensor

    def rng_for(self, name: str) -> np.random.Generator:
        return np.random.default_rng(
            [self.seed, zlib.crc32(name.encode("utf-8"))]
        )

    def uniform(
        self,
        name: str,
        shape: Tuple[int, ...],
        fan_in: Optional[int] = None
    ) -> Tensor:
        """Parameter drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        fan_in = fan_in if fan_in is not None else shape[0]
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        values = self.rng_for(name).uniform(-bound, bound, size=shape)
        return self.add(name, values)

    def normal(
        self,
        name: str,
        shape: Tuple[int, ...],
        std: float = 0.01
    ) -> Tensor:
        values = self.rng_for(name).normal(0.0, std, size=shape)
        return self.add(name, values)

    def zeros(self, name: str, shape: Tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def gru(self, name: str, input_size: int, hidden_size: int) -> GruParams:
        """Register the three tensors of a GRU layer."""
        return GruParams(
            input_weights=self.uniform(
                f"{name}.input_weights",
                (input_size, 3 * hidden_size),
                fan_in=hidden_size
            ),
            hidden_weights=self.uniform(
                f"{name}.hidden_weights",
                (hidden_size, 3 * hidden_size),
                fan_in=hidden_size
            ),
            bias=self.uniform(
                f"{name}.bias", (3 * hidden_size,), fan_in=hidden_size
            ),
        )

    def __getitem__(self, name: str) -> Tensor:
        return self._parameters[name]

    def __contains__(self, name: object) -> bool:
        return name in self._parameters

    def __iter__(self) -> Iterator[str]:
        return iter(self._parameters)

    def __len__(self) -> int:
        return len(self._parameters)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._parameters.items())

    def names(self) -> List[str]:
        return list(self._parameters)

    @property
    def parameter_count(self) -> int:
        """Total number of scalar parameters."""
        return sum(t.value.size for t in self._parameters.values())

    def zero_grad(self) -> None:
        for tensor in self._parameters.values():
            tensor.grad = None

    def l2_penalty(self) -> Tensor:
        """Sum of squares of every parameter as a differentiable scalar."""
        terms = [
            tensor_sum(mul(tensor, tensor))
            for tensor in self._parameters.values()
        ]
        total = terms[0]
        for term in terms[1:]:
            total = add(total, term)
        return total

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copy of every parameter value keyed by name."""
        return {
            name: tensor.value.copy()
            for name, tensor in self._parameters.items()
        }

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameter values in place.

        Raises:
            KeyError: when names differ from the registered ones.
            ShapeError: when a shape differs.
        """
        missing = set(self._parameters) ^ set(state)
        if missing:
            raise KeyError(f"Parameter names differ: {sorted(missing)}")
        for name, value in state.items():
            tensor = self._parameters[name]
            value = np.asarray(value)
            if value.shape != tensor.shape:
                raise ShapeError(f"load {name}", tensor.shape, value.shape)
            tensor.value = value.astype(self.dtype)


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
    weight_decay: float = 0.0
) -> ParamStore:
    """Apply one Adam update to every parameter of the store.

    The L2 term ``weight_decay * ||theta||^2`` enters as the gradient
    addition ``2 * weight_decay * theta``. Parameters without a gradient
    are treated as having a zero data gradient.

    Raises:
        ValueError: if lr is not positive.
    """
    if lr <= 0:
        raise ValueError(f"Learning rate must be positive, got {lr}")
    for name, tensor in store.items():
        gradient = tensor.grad if tensor.grad is not None \
            else np.zeros_like(tensor.value)
        if weight_decay:
            gradient = gradient + 2.0 * weight_decay * tensor.value
        state = store.adam.get(name)
        if state is None:
            state = AdamState(
                np.zeros_like(tensor.value), np.zeros_like(tensor.value)
            )
            store.adam[name] = state
        state.step += 1
        state.first_moment = beta1 * state.first_moment \
            + (1.0 - beta1) * gradient
        state.second_moment = beta2 * state.second_moment \
            + (1.0 - beta2) * gradient * gradient
        first_hat = state.first_moment / (1.0 - beta1 ** state.step)
        second_hat = state.second_moment / (1.0 - beta2 ** state.step)
        tensor.value = (
            tensor.value - lr * first_hat / (np.sqrt(second_hat) + epsilon)
        ).astype(store.dtype)
    return store


def numerical_gradient(
    function: Callable[[], Tensor],
    tensor: Tensor,
    step: float = 1e-5
) -> np.ndarray:
    """Central finite-difference gradient of a scalar function.

    The tensor's value is perturbed in place and restored afterwards.
    """
    gradient = np.zeros_like(tensor.value, dtype=np.float64)
    flat = tensor.value.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        above = float(function().value)
        flat[i] = original - step
        below = float(function().value)
        flat[i] = original
        gradient.reshape(-1)[i] = (above - below) / (2.0 * step)
    return gradient


def check_gradients(
    function: Callable[[], Tensor],
    tensors: Union[Sequence[Tensor], Mapping[str, Tensor]],
    step: float = 1e-5,
    floor: float = 1e-3
) -> float:
    """Largest relative error between analytic and numerical gradients.

    Errors are measured as ``|analytic - numeric|`` divided by the largest
    of ``|analytic|``, ``|numeric|`` and floor.
    """
    targets = list(tensors.values()) if isinstance(tensors, Mapping) \
        else list(tensors)
    for target in targets:
        target.grad = None
    function().backward()
    analytic = [
        target.grad.copy() if target.grad is not None
        else np.zeros_like(target.value)
        for target in targets
    ]
    worst = 0.0
    for target, expected in zip(targets, analytic):
        numeric = numerical_gradient(function, target, step)
        scale = np.maximum(
            np.maximum(np.abs(expected), np.abs(numeric)), floor
        )
        if expected.size:
            worst = max(
                worst, float(np.max(np.abs(expected - numeric) / scale))
            )
    return worst
