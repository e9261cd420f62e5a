"""Dense float tensors with reverse-mode automatic differentiation.

Every differentiable operation builds a node in an implicit tape: the output
tensor keeps references to its parents together with a closure that maps the
output gradient to parent gradients.  The graph is rebuilt on every forward
pass and discarded after ``backward``.

Values are 64-bit floats by default (gradient checking needs the precision);
32-bit is supported for cheaper training and is the on-disk format.  Any
operation that produces a NaN or Inf raises immediately instead of letting it
propagate.
"""

from __future__ import annotations

import threading
import weakref
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)
DEFAULT_DTYPE = np.float64


class TensorLabError(Exception):
    """Base class for tensorlab failures."""


class DimensionError(TensorLabError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(TensorLabError):
    """An operation was configured with invalid parameters."""


class NonFiniteError(TensorLabError):
    """A NaN or Inf appeared in a tensor value."""


class GradCheckError(TensorLabError):
    """A finite-difference check could not be carried out."""


# ---------------------------------------------------------------------------
# allocation tracking (used by the attention benchmark and memory assertions)
# ---------------------------------------------------------------------------

class AllocationTracker:
    """Records tensor allocations made while the tracker is active.

    ``live_bytes`` follows CPython refcounting: a tensor counts until it is
    garbage collected.  ``tagged_entries`` groups element counts by the tag an
    operation attached to its output (e.g. attention matrices are tagged
    ``"attn"``), which is how the benchmark accounts for attention-buffer
    sizes without guessing.
    """

    def __init__(self) -> None:
        self.active = True
        self.total_bytes = 0
        self.live_bytes = 0
        self.peak_live_bytes = 0
        self.largest_single_bytes = 0
        self.tagged_entries: dict[str, list[int]] = {}

    def on_alloc(self, nbytes: int, entries: int, tag: Optional[str]) -> None:
        if not self.active:
            return
        self.total_bytes += nbytes
        self.live_bytes += nbytes
        self.peak_live_bytes = max(self.peak_live_bytes, self.live_bytes)
        self.largest_single_bytes = max(self.largest_single_bytes, nbytes)
        if tag is not None:
            self.tagged_entries.setdefault(tag, []).append(entries)

    def on_free(self, nbytes: int) -> None:
        if self.active:
            self.live_bytes -= nbytes

    def max_tagged_entries(self, tag: str) -> int:
        return max(self.tagged_entries.get(tag, [0]))


_tracking = threading.local()


def _trackers() -> list[AllocationTracker]:
    stack = getattr(_tracking, "stack", None)
    if stack is None:
        stack = []
        _tracking.stack = stack
    return stack


@contextmanager
def track_allocations() -> Iterator[AllocationTracker]:
    tracker = AllocationTracker()
    stack = _trackers()
    stack.append(tracker)
    try:
        yield tracker
    finally:
        stack.remove(tracker)
        tracker.active = False


_grad_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape construction; operations emit plain constants.

    Inference over large batches would otherwise retain every activation.
    """
    prev = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


# ---------------------------------------------------------------------------
# tensors
# ---------------------------------------------------------------------------

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An immutable dense array, optionally recording how it was computed.

    Tensors produced by operations must not be mutated; the optimizer mutates
    only ``Parameter.value`` buffers, and only between graph builds.
    """

    __slots__ = ("data", "parents", "_bwd", "requires_grad", "param", "tag",
                 "__weakref__")

    def __init__(self, data, dtype=None, *, parents: tuple = (),
                 bwd: Optional[BackwardFn] = None, requires_grad: bool = False,
                 param: Optional["Parameter"] = None, tag: Optional[str] = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if not np.isfinite(arr).all():
            raise NonFiniteError(
                f"non-finite values in tensor{'' if tag is None else ' ' + tag}"
                f" of shape {arr.shape}")
        self.data = arr
        self.parents = parents
        self._bwd = bwd
        self.requires_grad = requires_grad
        self.param = param
        self.tag = tag
        stack = _trackers()
        if stack:
            nbytes, entries = arr.nbytes, arr.size
            for tr in stack:
                tr.on_alloc(nbytes, entries, tag)
                weakref.finalize(self, tr.on_free, nbytes)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{grad})"

    # -- graph construction ---------------------------------------------------

    @staticmethod
    def from_op(data: np.ndarray, parents: Sequence["Tensor"],
                bwd: BackwardFn, tag: Optional[str] = None) -> "Tensor":
        """Wrap an operation result, folding out of the graph when no parent
        needs gradients (constants stay constants) or when gradients are
        globally disabled via :func:`no_grad`."""
        if grad_enabled() and any(p.requires_grad for p in parents):
            return Tensor(data, parents=tuple(parents), bwd=bwd,
                          requires_grad=True, tag=tag)
        return Tensor(data, tag=tag)

    # -- backward pass --------------------------------------------------------

    def backward(self, grad: Optional[np.ndarray] = None,
                 free_graph: bool = True) -> dict[int, np.ndarray]:
        """Reverse-mode sweep from this tensor.

        Accumulates into ``Parameter.grad`` for parameter leaves and returns a
        mapping from leaf tensor id to gradient (covering non-parameter leaves
        such as gradient-check inputs).  ``grad`` defaults to 1 and then
        requires a scalar tensor.
        """
        if grad is None:
            if self.data.shape != ():
                raise DimensionError(
                    "backward() without an explicit gradient needs a scalar; "
                    f"got shape {self.data.shape}")
            grad = np.ones((), dtype=self.data.dtype)
        grad = np.asarray(grad, dtype=self.data.dtype)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        leaf_grads: dict[int, np.ndarray] = {}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.param is not None:
                node.param.grad += g
            if node._bwd is None:
                if node.param is None:
                    leaf_grads[id(node)] = g
                continue
            parent_grads = node._bwd(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                if acc is None:
                    grads[id(p)] = pg
                else:
                    acc += pg
            if free_graph:
                node._bwd = None
                node.parents = ()
        return leaf_grads

    # -- convenience arithmetic (thin wrappers over ops) ----------------------

    def sum(self) -> "Tensor":
        from . import ops
        return ops.sum_all(self)

    def reshape(self, shape) -> "Tensor":
        from . import ops
        return ops.reshape(self, shape)

    def __add__(self, other) -> "Tensor":
        from . import ops
        return ops.add(self, other) if isinstance(other, Tensor) \
            else ops.add_scalar(self, float(other))

    def __sub__(self, other) -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other) -> "Tensor":
        from . import ops
        return ops.mul(self, other) if isinstance(other, Tensor) \
            else ops.scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        from . import ops
        return ops.matmul(self, other)

    def __neg__(self) -> "Tensor":
        from . import ops
        return ops.scale(self, -1.0)


class Parameter:
    """A named learnable value plus its gradient accumulator.

    ``tensor()`` creates a fresh graph leaf sharing the underlying buffer;
    call it once per forward pass so the tape never outlives an optimizer
    update.  ``no_decay`` marks parameters excluded from weight decay
    (the per-channel residual scales).
    """

    __slots__ = ("value", "grad", "name", "no_decay")

    def __init__(self, value, name: str, *, dtype=None, no_decay: bool = False):
        arr = np.array(value, dtype=dtype or DEFAULT_DTYPE)
        if arr.dtype not in FLOAT_DTYPES:
            raise ConfigError(f"parameter {name} must be float32/float64")
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite initial value for parameter {name}")
        self.value = arr
        self.grad = np.zeros_like(arr)
        self.name = name
        self.no_decay = no_decay

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def tensor(self) -> Tensor:
        return Tensor(self.value, requires_grad=True, param=self, tag=self.name)

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.value.shape})"
