"""Small reverse-mode differentiation engine on top of numpy.

Only the operations needed by the character encoders, the BiLSTM and the
CRF are provided. Every op builds a :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients;
:func:`backward` walks the tape in reverse topological order.

Shapes follow a channels-first convention for sequences: a single word
is ``[C, T]`` and a batch of words is ``[N, C, T]``.
"""

from __future__ import annotations

import contextlib
import zlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True
_kink_log = None


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised whenever a NaN or Inf shows up in values or gradients."""


class EmptyWordError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class UninitializedStatsError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


@contextlib.contextmanager
def record_kinks():
    """Collect the discrete decisions (ReLU signs, max positions) made inside the block."""
    global _kink_log
    previous = _kink_log
    _kink_log = []
    try:
        yield _kink_log
    finally:
        _kink_log = previous


def _check_finite(values, what="value"):
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite {what} encountered")


class Tensor:
    """A numpy array that participates in the differentiation tape.

    Leaves (tensors without parents) accumulate gradients across calls to
    :func:`backward`; interior nodes are reset on every call.
    """

    __slots__ = ("values", "grad", "_parents", "_backward", "requires_grad", "name")

    def __init__(self, values, requires_grad=True, name=None, dtype=None):
        values = np.array(values, dtype=dtype or getattr(values, "dtype", None) or DEFAULT_DTYPE)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(DEFAULT_DTYPE)
        _check_finite(values)
        self.values = values
        self.grad = None
        self._parents = ()
        self._backward = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    def item(self):
        return float(self.values)

    def numpy(self):
        return self.values

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.values.shape})"

    def __getitem__(self, index):
        return getitem(self, index)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """Trainable leaf tensor with a dotted name such as ``intnet.block1.bottleneck.weight``."""

    __slots__ = ()

    def __init__(self, values, name, dtype=None):
        super().__init__(values, requires_grad=True, name=name, dtype=dtype)
        self.grad = np.zeros_like(self.values)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.values.shape})"


def make_node(values, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result. ``backward_fn(grad)`` must return one gradient per parent (or None)."""
    out = Tensor.__new__(Tensor)
    _check_finite(values)
    out.values = values
    out.grad = None
    out.name = None
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward_fn if track else None
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False, dtype=dtype)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.values.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    _check_finite(loss.values, "loss")
    order = _topological_order(loss)
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if not node._parents or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=parent.values.dtype, copy=True)
            else:
                parent.grad = parent.grad + g
    for node in order:
        if not node._parents and node.grad is not None:
            _check_finite(node.grad, "gradient")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_node(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_node(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return make_node(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    return make_node(a.values * c, (a,), lambda g: (g * c,))


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant array (masks); ``c`` must broadcast to ``a``."""
    c = np.asarray(c, dtype=a.dtype)
    np.broadcast_to(c, a.shape)
    return make_node(a.values * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c) -> Tensor:
    return make_node(a.values + c, (a,), lambda g: (g,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return make_node(np.asarray(a.values.sum()), (a,), lambda g: (np.broadcast_to(g, shape),))


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors in a single node."""
    first = tensors[0]
    for t in tensors[1:]:
        _same_shape(first, t, "add_n")
    total = np.sum([t.values for t in tensors], axis=0)
    return make_node(total, tuple(tensors), lambda g: (g,) * len(tensors))


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    active = x.values > 0
    if _kink_log is not None:
        _kink_log.append(active)
    return make_node(np.where(active, x.values, 0.0), (x,), lambda g: (g * active,))


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    # split on sign so exp never overflows
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.values)
    return make_node(t, (x,), lambda g: (g * (1.0 - t * t),))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------------------
# shape manipulation


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)

    def _back(g):
        out = np.zeros(shape, dtype=dtype)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make_node(np.array(x.values[index]), (x,), _back)


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather slices of ``x`` along ``axis`` (embedding lookup, sequence reversal)."""
    indices = np.asarray(indices, dtype=np.intp)
    shape, dtype = x.shape, x.dtype
    axis = axis % x.ndim

    def _back(g):
        out = np.zeros(shape, dtype=dtype)
        # move the gathered axis to the front so add.at can scatter rows
        g_front = np.moveaxis(g.reshape(shape[:axis] + (indices.size,) + shape[axis + 1:]), axis, 0)
        np.add.at(np.moveaxis(out, axis, 0), indices.ravel(), g_front)
        return (out,)

    return make_node(np.take(x.values, indices, axis=axis), (x,), _back)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_node(np.transpose(x.values, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.values.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(inputs: Sequence[Tensor], axis: int) -> Tensor:
    if len(inputs) == 0:
        raise DimensionError("concat of zero tensors")
    ndim = inputs[0].ndim
    axis = axis % ndim
    for t in inputs:
        if t.ndim != ndim or any(
            t.shape[d] != inputs[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise DimensionError(
                f"concat: incompatible shapes {[t.shape for t in inputs]} on axis {axis}"
            )
    sizes = [t.shape[axis] for t in inputs]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.values for t in inputs], axis=axis)
    return make_node(out, tuple(inputs), lambda g: tuple(np.split(g, splits, axis=axis)))


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    """Concatenate ``[C_i, T]`` (or ``[N, C_i, T]``) feature maps along channels."""
    times = {t.shape[-1] for t in inputs}
    if len(times) > 1:
        raise DimensionError(f"concat_channels: time lengths differ: {sorted(times)}")
    return concat(inputs, axis=-2)


def stack(inputs: Sequence[Tensor], axis: int = 0) -> Tensor:
    for t in inputs[1:]:
        _same_shape(inputs[0], t, "stack")
    out = np.stack([t.values for t in inputs], axis=axis)
    n = len(inputs)
    return make_node(
        out,
        tuple(inputs),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


# ---------------------------------------------------------------------------
# linear maps


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y = W x + b`` applied over the last axis of ``x``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"affine: bias {bias.shape} does not match weight {weight.shape}")
    xv, wv = x.values, weight.values
    out = xv @ wv.T
    if bias is not None:
        out = out + bias.values
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wv
        gw = g2.T @ xv.reshape(-1, xv.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_node(out, parents, _back)


def _same_padding(k):
    left = (k - 1) // 2
    return left, k - 1 - left


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-length 1-D cross-correlation.

    Parameters
    ----------
    x : Tensor, shape ``[C_in, T]`` or ``[N, C_in, T]``
    weight : Tensor, shape ``[C_out, C_in, k]``
    bias : Tensor, shape ``[C_out]``, optional

    The input is zero padded with ``(k-1)//2`` positions on the left and
    the remainder on the right, so even kernel widths keep length ``T``.
    """
    single = x.ndim == 2
    xv = x.values[None] if single else x.values
    if weight.ndim != 3 or xv.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} does not match weight {weight.shape}")
    n, c_in, t = xv.shape
    c_out, _, k = weight.shape
    left, right = _same_padding(k)
    xp = np.pad(xv, ((0, 0), (0, 0), (left, right)))
    # cols[n, t, c, j] = xp[n, c, t + j]
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2).transpose(0, 2, 1, 3)
    cols = cols.reshape(n * t, c_in * k)
    wmat = weight.values.reshape(c_out, c_in * k)
    out = (cols @ wmat.T).reshape(n, t, c_out).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.values[:, None]
    if single:
        out = out[0]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _back(g):
        g3 = g[None] if single else g
        g2 = g3.transpose(0, 2, 1).reshape(n * t, c_out)
        gw = (g2.T @ cols).reshape(c_out, c_in, k)
        gcols = (g2 @ wmat).reshape(n, t, c_in, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + t] += gcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, left:left + t]
        if single:
            gx = gx[0]
        if bias is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    return make_node(np.ascontiguousarray(out), parents, _back)


# ---------------------------------------------------------------------------
# normalisation, pooling, dropout


class RunningStats:
    """Per-channel running mean/variance for :func:`batch_norm`."""

    def __init__(self, channels, momentum=0.1, dtype=DEFAULT_DTYPE):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.initialized = False

    def update(self, mean, var):
        m = self.momentum
        self.mean = (1.0 - m) * self.mean + m * mean
        self.var = (1.0 - m) * self.var + m * var
        self.initialized = True


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    stats: RunningStats,
    mask: np.ndarray | None = None,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation of ``[N, C, T]`` (or ``[C, T]``) activations.

    In training mode statistics are taken over every valid (batch, time)
    position, where ``mask`` (shape ``[N, T]``) marks validity; the running
    statistics are updated. In eval mode the running statistics are used.
    """
    single = x.ndim == 2
    xv = x.values[None] if single else x.values
    c = xv.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    m = np.ones((xv.shape[0], xv.shape[2]), dtype=xv.dtype) if mask is None else np.asarray(mask, dtype=xv.dtype)
    if single and mask is not None and m.ndim == 1:
        m = m[None]
    m3 = m[:, None, :]
    gv, bv = gamma.values[None, :, None], beta.values[None, :, None]

    if training:
        count = m.sum()
        if count == 0:
            raise EmptyWordError("batch_norm over zero valid positions")
        mean = (xv * m3).sum(axis=(0, 2)) / count
        centered = xv - mean[None, :, None]
        var = ((centered * m3) ** 2).sum(axis=(0, 2)) / count
        stats.update(mean, var)
    else:
        if not stats.initialized:
            raise UninitializedStatsError("batch_norm in eval mode before any training-mode call")
        mean, var = stats.mean, stats.var
        centered = xv - mean[None, :, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std[None, :, None]
    out = gv * xhat + bv
    if single:
        out = out[0]

    def _back(g):
        g3 = g[None] if single else g
        ggamma = (g3 * xhat).sum(axis=(0, 2))
        gbeta = g3.sum(axis=(0, 2))
        gxhat = g3 * gv
        s = inv_std[None, :, None]
        gx = gxhat * s
        if training:
            # the statistics only see valid positions, but every output depends on them
            sum_g = gxhat.sum(axis=(0, 2))[None, :, None]
            sum_gx = (gxhat * xhat).sum(axis=(0, 2))[None, :, None]
            gx = gx - m3 / count * s * (sum_g + xhat * sum_gx)
        if single:
            gx = gx[0]
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), _back)


def max_over_time(x: Tensor, valid_length) -> Tensor:
    """Per-channel maximum over the first ``valid_length`` positions.

    ``x`` is ``[C, T]`` with an int length, or ``[N, C, T]`` with an array
    of ``N`` lengths. Ties send the gradient to the lowest index.
    """
    single = x.ndim == 2
    xv = x.values[None] if single else x.values
    lengths = np.atleast_1d(np.asarray(valid_length, dtype=np.intp))
    n, c, t = xv.shape
    if lengths.shape != (n,):
        raise DimensionError(f"max_over_time: {lengths.size} lengths for batch of {n}")
    if np.any(lengths < 1):
        raise EmptyWordError("max_over_time over an empty word")
    if np.any(lengths > t):
        raise DimensionError("max_over_time: valid_length exceeds time axis")
    valid = np.arange(t)[None, :] < lengths[:, None]
    masked = np.where(valid[:, None, :], xv, -np.inf)
    arg = masked.argmax(axis=2)
    if _kink_log is not None:
        _kink_log.append(arg)
    out = np.take_along_axis(xv, arg[:, :, None], axis=2)[:, :, 0]
    if single:
        out = out[0]

    def _back(g):
        g2 = g[None] if single else g
        gx = np.zeros_like(xv)
        np.put_along_axis(gx, arg[:, :, None], g2[:, :, None], axis=2)
        return (gx[0] if single else gx,)

    return make_node(out, (x,), _back)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` so eval is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul_const(x, keep)


# ---------------------------------------------------------------------------
# random streams


class RngState:
    """Seeded source of independent, reproducible random streams.

    Each named stream is a Philox counter-based generator keyed by
    ``(seed, crc32(stream name))``, so streams do not depend on the order
    in which they are requested.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def generator(self, stream: str) -> np.random.Generator:
        key = np.array([self.seed, zlib.crc32(stream.encode("utf-8"))], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngState(seed={self.seed})"


# ---------------------------------------------------------------------------
# verification harness


def _same_decisions(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    report: dict | None = None,
    skip_kinks: bool = True,
) -> float:
    """Compare backward() gradients with central differences.

    ``f`` rebuilds the scalar from the current parameter values each call
    and must be deterministic. Returns the worst
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.

    With ``max_coords`` only a random subset of each tensor is probed.
    With ``skip_kinks`` a coordinate is skipped when the ReLU sign pattern
    or a max-pool position differs at ``theta +- eps`` from ``theta``:
    the central difference then straddles a non-differentiable point.
    ``report`` (optional) receives ``per_parameter`` worst errors and the
    ``checked``/``skipped`` coordinate counts.
    """
    params = list(params)
    for p in params:
        p.grad = np.zeros_like(p.values)
    with record_kinks() as base:
        loss = f()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    per_param, checked, skipped = {}, 0, 0
    for idx, (p, ga) in enumerate(zip(params, analytic)):
        flat = p.values.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst_p = 0.0
        for i in coords:
            orig = flat[i]
            try:
                with no_grad(), record_kinks() as up_log:
                    flat[i] = orig + eps
                    up = f().item()
                with no_grad(), record_kinks() as down_log:
                    flat[i] = orig - eps
                    down = f().item()
            finally:
                flat[i] = orig
            if skip_kinks and not (_same_decisions(base, up_log) and _same_decisions(base, down_log)):
                skipped += 1
                continue
            checked += 1
            numeric = (up - down) / (2.0 * eps)
            a = ga.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst_p = max(worst_p, err)
        per_param[p.name or f"param{idx}"] = worst_p
        worst = max(worst, worst_p)
    if report is not None:
        report.update(per_parameter=per_param, checked=checked, skipped=skipped)
    return worst


# ---------------------------------------------------------------------------
# debug dump


def dump_tensor(x) -> str:
    """Text dump: ``shape d0 d1 ...`` header then one row of the last axis per line."""
    values = x.values if isinstance(x, Tensor) else np.asarray(x)
    lines = ["shape " + " ".join(str(d) for d in values.shape)]
    rows = values.reshape(-1, values.shape[-1]) if values.ndim else values.reshape(1, 1)
    for row in rows:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def load_tensor_dump(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split()
    if header[0] != "shape":
        raise ValueError("tensor dump must start with a 'shape' header")
    shape = tuple(int(d) for d in header[1:])
    data = [float(v) for ln in lines[1:] for v in ln.split()]
    return np.array(data, dtype=DEFAULT_DTYPE).reshape(shape)
