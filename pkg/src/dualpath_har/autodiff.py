"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is intentionally small: exactly the primitives the dual-path
network needs, recorded on an explicit :class:`Tape` and replayed in
reverse. Everything is 64-bit and row-major; convolution is delegated
to :mod:`dualpath_har.kernels`, which picks the compiled core when it
is available.

Conventions
-----------
- Tensors are treated as immutable once created; only ``Parameter.data``
  is ever updated in place (by optimizers).
- Ops record onto the innermost active tape, if any. With no active
  tape they are plain forward computations (inference mode).
- ``Tape.backward`` *increments* ``Parameter.grad``; call
  :func:`zero_grads` between steps.
- Backward closures must not mutate the adjoint they receive.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateBatchError, LabelError, ShapeError

# Guard for row normalization; rows with a smaller L2 norm are divided
# by this constant instead.
NORM_EPS = 1e-12


def _as_array(values):
    # asarray keeps 0-d scalars 0-d (ascontiguousarray would promote
    # them to shape (1,)); order="C" still guarantees row-major data.
    return np.asarray(values, dtype=np.float64, order="C")


class Tensor:
    """A dense n-dimensional array of 64-bit reals, row-major."""

    __slots__ = ("data",)

    def __init__(self, values):
        self.data = _as_array(values)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, factor):
        return scale(self, factor)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """A leaf tensor with a persistent gradient accumulator and a stable id."""

    __slots__ = ("grad", "id")

    def __init__(self, values, name=""):
        super().__init__(values)
        self.grad = np.zeros_like(self.data)
        self.id = name

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter(id={self.id!r}, shape={self.data.shape})"


def zero_grads(params):
    for p in params:
        p.zero_grad()


class _TapeOp:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


_TAPE_STACK = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(output, inputs, backward_fn):
    tape = _active_tape()
    if tape is not None:
        tape._ops.append(_TapeOp(output, tuple(inputs), backward_fn))


class Tape:
    """Ordered record of executed primitives, replayable in reverse.

    Reverse accumulation walks the record back to front, so replaying
    it twice (without re-running forward) produces bit-identical
    gradient increments.
    """

    def __init__(self):
        self._ops = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False

    def __len__(self):
        return len(self._ops)

    def backward(self, loss):
        """Increment ``grad`` of every Parameter reachable from `loss`."""
        if not isinstance(loss, Tensor):
            raise ContractError(f"backward expects a Tensor loss, got {type(loss).__name__}")
        if loss.data.shape != ():
            raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")

        adjoints = {id(loss): np.ones((), dtype=np.float64)}
        touched_params = {}
        if isinstance(loss, Parameter):
            touched_params[id(loss)] = loss

        for op in reversed(self._ops):
            out_adj = adjoints.pop(id(op.output), None)
            if out_adj is None:
                continue
            for inp, adj in zip(op.inputs, op.backward(out_adj)):
                if adj is None:
                    continue
                key = id(inp)
                acc = adjoints.get(key)
                if acc is None:
                    # Copy: backward closures may alias their output
                    # adjoint or return the same buffer twice.
                    adjoints[key] = np.array(adj, dtype=np.float64)
                else:
                    acc += adj
                if key not in touched_params and isinstance(inp, Parameter):
                    touched_params[key] = inp

        for key, param in touched_params.items():
            adj = adjoints.get(key)
            if adj is not None:
                param.grad += adj


def backward(loss, tape):
    """Run reverse accumulation of `loss` over `tape`."""
    tape.backward(loss)


# ---------------------------------------------------------------------------
# elementwise / structural primitives
# ---------------------------------------------------------------------------

def add(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    out = Tensor(a.data + b.data)
    _record(out, (a, b), lambda g: (g, g))
    return out


def sub(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shapes {a.data.shape} and {b.data.shape} differ")
    out = Tensor(a.data - b.data)
    _record(out, (a, b), lambda g: (g, -g))
    return out


def scale(x, factor):
    factor = float(factor)
    out = Tensor(x.data * factor)
    _record(out, (x,), lambda g: (g * factor,))
    return out


def mean(x):
    out = Tensor(x.data.mean())
    n = x.data.size
    shape = x.data.shape

    def _backward(g):
        return (np.full(shape, float(g) / n),)

    _record(out, (x,), _backward)
    return out


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat: need at least one tensor")
    ndim = tensors[0].data.ndim
    if not 0 <= axis < ndim:
        raise ShapeError(f"concat: axis {axis} out of range for {ndim}-d tensors")
    ref = list(tensors[0].data.shape)
    for t in tensors[1:]:
        other = list(t.data.shape)
        if len(other) != ndim or any(
            other[d] != ref[d] for d in range(ndim) if d != axis
        ):
            raise ShapeError(
                f"concat: non-axis dims differ, {tuple(ref)} vs {tuple(other)} on axis {axis}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _backward(g):
        pieces = []
        index = [slice(None)] * ndim
        for i in range(len(sizes)):
            index[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    _record(out, tuple(tensors), _backward)
    return out


def transpose(x, axes):
    axes = tuple(axes)
    out = Tensor(x.data.transpose(axes))
    inverse = np.argsort(axes)

    def _backward(g):
        return (g.transpose(inverse),)

    _record(out, (x,), _backward)
    return out


def diagonal(x):
    if x.data.ndim != 2 or x.data.shape[0] != x.data.shape[1]:
        raise ShapeError(f"diagonal: expected a square matrix, got {x.data.shape}")
    n = x.data.shape[0]
    out = Tensor(np.diagonal(x.data))

    def _backward(g):
        full = np.zeros((n, n))
        full[np.arange(n), np.arange(n)] = g
        return (full,)

    _record(out, (x,), _backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d tensors, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def _backward(g):
        return (g @ b.data.T, a.data.T @ g)

    _record(out, (a, b), _backward)
    return out


def linear(x, weight, bias):
    """Affine map per row: x[N,d_in] @ weight[d_out,d_in].T + bias[d_out]."""
    if x.data.ndim != 2:
        raise ShapeError(f"linear: expected 2-d input, got {x.data.shape}")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(
            f"linear: input dim {x.data.shape} does not match weight {weight.data.shape}"
        )
    out = Tensor(x.data @ weight.data.T + bias.data)

    def _backward(g):
        return (g @ weight.data, g.T @ x.data, g.sum(axis=0))

    _record(out, (x, weight, bias), _backward)
    return out


# ---------------------------------------------------------------------------
# nonlinearities and reductions
# ---------------------------------------------------------------------------

def relu(x):
    # Subgradient at 0 is 0 (strict mask), so kinks never propagate.
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    _record(out, (x,), lambda g: (g * mask,))
    return out


def softmax(logits):
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax: expected [N,C] logits, got {logits.data.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    out = Tensor(probs)

    def _backward(g):
        inner = (g * probs).sum(axis=1, keepdims=True)
        return (probs * (g - inner),)

    _record(out, (logits,), _backward)
    return out


def logsumexp(x, axis):
    if x.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"logsumexp: expected a 2-d tensor and axis 0 or 1, got {x.data.shape}")
    high = x.data.max(axis=axis, keepdims=True)
    value = np.log(np.exp(x.data - high).sum(axis=axis)) + high.squeeze(axis)
    out = Tensor(value)

    def _backward(g):
        weights = np.exp(x.data - np.expand_dims(value, axis))
        return (weights * np.expand_dims(g, axis),)

    _record(out, (x,), _backward)
    return out


def global_avg_pool(x):
    """Mean over the temporal axis: [N,C,T] -> [N,C]."""
    if x.data.ndim != 3:
        raise ShapeError(f"global_avg_pool: expected [N,C,T], got {x.data.shape}")
    t_len = x.data.shape[2]
    if t_len < 1:
        raise ShapeError("global_avg_pool: temporal axis is empty")
    out = Tensor(x.data.mean(axis=2))

    def _backward(g):
        return (np.repeat(g[:, :, None] / t_len, t_len, axis=2),)

    _record(out, (x,), _backward)
    return out


def avg_pool1d(x, k):
    """Non-overlapping temporal average pooling with window == stride == k."""
    if x.data.ndim != 3:
        raise ShapeError(f"avg_pool1d: expected [N,C,T], got {x.data.shape}")
    n, c, t = x.data.shape
    if k < 1 or t // k < 1:
        raise ShapeError(f"avg_pool1d: window {k} too large for T={t}")
    t_out = t // k
    trimmed = x.data[:, :, :t_out * k].reshape(n, c, t_out, k)
    out = Tensor(trimmed.mean(axis=3))

    def _backward(g):
        dx = np.zeros((n, c, t))
        dx[:, :, :t_out * k] = np.repeat(g / k, k, axis=2)
        return (dx,)

    _record(out, (x,), _backward)
    return out


def l2_normalize(x):
    """Divide each row by max(row L2 norm, NORM_EPS).

    Rows at or below the guard are treated as constants by backward
    (zero gradient): the literal Jacobian there is 1/NORM_EPS-scale and
    would let a single dead row blow up the whole step.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"l2_normalize: expected [N,d], got {x.data.shape}")
    norms = np.sqrt((x.data ** 2).sum(axis=1))
    denom = np.maximum(norms, NORM_EPS)
    out = Tensor(x.data / denom[:, None])
    live = norms > NORM_EPS

    def _backward(g):
        dot = (x.data * g).sum(axis=1)
        correction = np.where(live, dot / denom ** 3, 0.0)
        dx = g / denom[:, None] - x.data * correction[:, None]
        return (np.where(live[:, None], dx, 0.0),)

    _record(out, (x,), _backward)
    return out


# ---------------------------------------------------------------------------
# convolution and batch normalization
# ---------------------------------------------------------------------------

def conv1d(x, kernel, bias, stride=1, padding=0):
    """1-D convolution with zero padding: [N,Ci,T] -> [N,Co,T'].

    T' = floor((T + 2*padding - K) / stride) + 1.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 3:
        raise ShapeError(
            f"conv1d: expected 3-d input and kernel, got {x.data.shape} and {kernel.data.shape}"
        )
    if x.data.shape[1] != kernel.data.shape[1]:
        raise ShapeError(
            f"conv1d: input channels {x.data.shape} do not match kernel {kernel.data.shape}"
        )
    if bias.data.shape != (kernel.data.shape[0],):
        raise ShapeError(
            f"conv1d: bias shape {bias.data.shape} does not match kernel {kernel.data.shape}"
        )
    stride = int(stride)
    padding = int(padding)
    if stride < 1:
        raise ShapeError(f"conv1d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv1d: padding must be >= 0, got {padding}")
    t_len = x.data.shape[2]
    k_len = kernel.data.shape[2]
    if k_len > t_len + 2 * padding:
        raise ShapeError(
            f"conv1d: kernel length {k_len} exceeds padded input length {t_len + 2 * padding}"
        )

    out = Tensor(kernels.conv1d_forward(x.data, kernel.data, bias.data, stride, padding))

    def _backward(g):
        g = np.ascontiguousarray(g)
        return kernels.conv1d_backward(g, x.data, kernel.data, stride, padding)

    _record(out, (x, kernel, bias), _backward)
    return out


class BatchNormState:
    """Running statistics for one batch-norm layer (EMA of batch stats)."""

    def __init__(self, num_channels, decay=0.9, eps=1e-5):
        self.running_mean = np.zeros(num_channels)
        self.running_var = np.ones(num_channels)
        self.decay = float(decay)
        self.eps = float(eps)


def batchnorm1d(x, gamma, beta, state, training):
    """Per-channel normalization over the batch and temporal axes.

    Train mode uses biased batch statistics and updates `state` in
    place via EMA; eval mode normalizes with the running statistics.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"batchnorm1d: expected [N,C,T], got {x.data.shape}")
    n, c, t = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"batchnorm1d: gamma/beta shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match {c} channels"
        )

    if training:
        m = n * t
        if m < 2:
            raise DegenerateBatchError(
                f"batchnorm1d: need at least 2 values per channel in train mode, got {m}"
            )
        batch_mean = x.data.mean(axis=(0, 2))
        batch_var = x.data.var(axis=(0, 2))  # biased estimator
        inv_std = 1.0 / np.sqrt(batch_var + state.eps)
        x_hat = (x.data - batch_mean[None, :, None]) * inv_std[None, :, None]

        d = state.decay
        state.running_mean *= d
        state.running_mean += (1.0 - d) * batch_mean
        state.running_var *= d
        state.running_var += (1.0 - d) * batch_var

        out = Tensor(gamma.data[None, :, None] * x_hat + beta.data[None, :, None])

        def _backward(g):
            dbeta = g.sum(axis=(0, 2))
            dgamma = (g * x_hat).sum(axis=(0, 2))
            coeff = (gamma.data * inv_std)[None, :, None]
            dx = coeff * (
                g
                - dbeta[None, :, None] / m
                - x_hat * dgamma[None, :, None] / m
            )
            return (dx, dgamma, dbeta)

    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        x_hat = (x.data - state.running_mean[None, :, None]) * inv_std[None, :, None]
        out = Tensor(gamma.data[None, :, None] * x_hat + beta.data[None, :, None])

        def _backward(g):
            dbeta = g.sum(axis=(0, 2))
            dgamma = (g * x_hat).sum(axis=(0, 2))
            dx = g * (gamma.data * inv_std)[None, :, None]
            return (dx, dgamma, dbeta)

    _record(out, (x, gamma, beta), _backward)
    return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: expected [N,C] logits, got {logits.data.shape}")
    n, c = logits.data.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} does not match batch {n}")
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        i = int(bad[0])
        raise LabelError(
            f"cross_entropy: label {int(labels[i])} at index {i} outside [0, {c})"
        )

    high = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - high
    lse = np.log(np.exp(shifted).sum(axis=1)) + high[:, 0]
    picked = logits.data[np.arange(n), labels]
    out = Tensor((lse - picked).mean())

    def _backward(g):
        probs = np.exp(logits.data - lse[:, None])
        probs[np.arange(n), labels] -= 1.0
        return (probs * (float(g) / n),)

    _record(out, (logits,), _backward)
    return out


def mse(a, b):
    """Mean of squared elementwise differences."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse: shapes {a.data.shape} and {b.data.shape} differ")
    diff = a.data - b.data
    out = Tensor((diff ** 2).mean())
    n = diff.size

    def _backward(g):
        d = diff * (2.0 * float(g) / n)
        return (d, -d)

    _record(out, (a, b), _backward)
    return out
