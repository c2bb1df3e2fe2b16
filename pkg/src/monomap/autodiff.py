"""Reverse-mode automatic differentiation over flat float64 buffers.

A small define-by-run engine: operations on ``Var`` handles record nodes on a
``Tape``; ``Tape.backward`` replays the nodes in exact reverse order and
accumulates gradients into the ``ParamStore`` that owns the trainable buffers.
Everything is float64 and single-threaded, and scatter/reduction orders are
fixed, so replaying the same tape twice yields bitwise-identical gradients.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Param",
    "ParamStore",
    "Tape",
    "Var",
    "absolute",
    "clip",
    "concat",
    "cumsum_exclusive",
    "exp",
    "gather",
    "log",
    "matmul",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "sigmoid",
    "weighted_gather",
]


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Param:
    """A named trainable buffer whose gradient always matches its shape."""

    __slots__ = ("name", "group", "value", "grad")

    def __init__(self, name: str, group: str, value) -> None:
        self.name = name
        self.group = group
        self.value = _f64(value).copy()
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, group={self.group!r}, shape={self.value.shape})"


class ParamStore:
    """Registry of parameter buffers partitioned into learning-rate groups.

    Every buffer belongs to exactly one group; Adam moment state lives here so
    it persists across steps.
    """

    def __init__(self) -> None:
        self.groups: dict[str, float] = {}
        self._params: dict[str, Param] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}

    def add_group(self, name: str, lr: float) -> None:
        if name in self.groups:
            raise ValueError(f"parameter group {name!r} already exists")
        if lr <= 0.0:
            raise ValueError(f"learning rate for group {name!r} must be positive")
        self.groups[name] = float(lr)

    def set_lr(self, group: str, lr: float) -> None:
        if group not in self.groups:
            raise ValueError(f"unknown parameter group {group!r}")
        self.groups[group] = float(lr)

    def add_param(self, name: str, value, group: str) -> Param:
        if group not in self.groups:
            raise ValueError(f"unknown parameter group {group!r}")
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        p = Param(name, group, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def params(self) -> list[Param]:
        return list(self._params.values())

    def group_params(self, group: str) -> list[Param]:
        return [p for p in self._params.values() if p.group == group]

    def num_values(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def adam_step(self, t: int, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> None:
        """Standard Adam update with bias correction; ``t`` is 1-based."""
        if t < 1:
            raise ValueError("adam_step: step index t must be >= 1 (bias correction)")
        for name, p in self._params.items():
            g = p.grad
            m = self._adam_m.get(name)
            if m is None:
                m = np.zeros_like(p.value)
                self._adam_m[name] = m
                self._adam_v[name] = np.zeros_like(p.value)
            v = self._adam_v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            p.value -= self.groups[p.group] * m_hat / (np.sqrt(v_hat) + eps)


class Var:
    """Handle to one forward value recorded on a tape."""

    __slots__ = ("_tape", "value", "grad")

    # let ndarray <op> Var defer to the reflected Var operators
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", value) -> None:
        self._tape = tape
        self.value = _f64(value)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"

    # arithmetic sugar; constants may appear on either side
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class Tape:
    """Ordered record of primitive ops for one forward evaluation.

    The tape is rebuilt for every optimization iteration; backward replays
    the nodes in exact reverse recording order. Backward of a tape with no
    recorded ops is a no-op.
    """

    __slots__ = ("_nodes", "_leaves")

    def __init__(self) -> None:
        self._nodes: list[tuple[Var, object]] = []
        self._leaves: dict[int, Var] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, param: Param) -> Var:
        """Var view of a parameter; backward accumulates into ``param.grad``."""
        var = self._leaves.get(id(param))
        if var is None:
            var = Var(self, param.value)

            def pull(g, _p=param):
                _p.grad += g

            self._nodes.append((var, pull))
            self._leaves[id(param)] = var
        return var

    def constant(self, value) -> Var:
        """A recorded Var with no inputs; useful as a differentiation root."""
        var = Var(self, value)
        self._nodes.append((var, _noop))
        return var

    def release(self) -> None:
        """Drop every recorded node, breaking the Tape<->Var reference cycle
        so buffers free immediately instead of waiting for the cycle
        collector. The tape must not be used afterwards."""
        self._nodes.clear()
        self._leaves.clear()

    def backward(self, out: Var) -> None:
        """Accumulate d(out)/d(param) into every reachable parameter's grad."""
        if not isinstance(out, Var) or out._tape is not self:
            raise ValueError("backward: output was not recorded on this tape")
        if out.value.size != 1:
            raise ValueError(
                f"backward: output must be scalar, got shape {out.value.shape}")
        for var, _ in self._nodes:
            var.grad = None
        out.grad = np.ones_like(out.value)
        for var, pull in reversed(self._nodes):
            g = var.grad
            if g is not None:
                pull(g)
                if pull is not _noop:
                    # consumed; free before older nodes run (constants keep
                    # theirs so callers can inspect input gradients)
                    var.grad = None


def _noop(_g) -> None:
    return None


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else _f64(x)


def _tape_of(*xs) -> Tape:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x._tape
            elif x._tape is not tape:
                raise ValueError("operands were recorded on different tapes")
    if tape is None:
        raise ValueError("at least one operand must be a Var")
    return tape


def _record(tape: Tape, value: np.ndarray, pull) -> Var:
    var = Var(tape, value)
    tape._nodes.append((var, pull))
    return var


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _acc(x, g: np.ndarray, own: bool = False) -> None:
    """Accumulate a gradient into a Var.

    ``own=True`` promises ``g`` is a freshly allocated array used nowhere else,
    which lets the first accumulation bind it instead of copying.
    """
    if not isinstance(x, Var):
        return
    gu = _unbroadcast(g, x.value.shape)
    if gu is not g:
        own = True
    if x.grad is None:
        x.grad = gu if own and gu.flags.writeable else gu.copy()
    else:
        x.grad += gu


def _binary(name, a, b, fwd):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    try:
        out = fwd(av, bv)
    except ValueError:
        raise ValueError(
            f"{name}: shapes {av.shape} and {bv.shape} are incompatible") from None
    return tape, av, bv, out


def add(a, b) -> Var:
    tape, _, _, out = _binary("add", a, b, np.add)

    def pull(g):
        _acc(a, g)
        _acc(b, g)

    return _record(tape, out, pull)


def sub(a, b) -> Var:
    tape, _, _, out = _binary("sub", a, b, np.subtract)

    def pull(g):
        _acc(a, g)
        _acc(b, -g, own=True)

    return _record(tape, out, pull)


def mul(a, b) -> Var:
    tape, av, bv, out = _binary("mul", a, b, np.multiply)

    def pull(g):
        _acc(a, g * bv, own=True)
        _acc(b, g * av, own=True)

    return _record(tape, out, pull)


def div(a, b) -> Var:
    tape, av, bv, out = _binary("div", a, b, np.divide)

    def pull(g):
        _acc(a, g / bv, own=True)
        _acc(b, -g * out / bv, own=True)

    return _record(tape, out, pull)


def neg(a) -> Var:
    tape = _tape_of(a)

    def pull(g):
        _acc(a, -g, own=True)

    return _record(tape, -_val(a), pull)


def _stable_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # BLAS kernels for very narrow outputs are not bitwise-stable under row
    # chunking; reduce column by column there so chunked forward evaluation
    # composes exactly with the single-pass result.
    if b.shape[1] < 8:
        cols = [np.sum(a * b[:, j], axis=1) for j in range(b.shape[1])]
        return np.stack(cols, axis=1)
    return a @ b


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    b_vec = bv.ndim == 1
    bm = bv[:, None] if b_vec else bv
    if av.ndim != 2 or bm.ndim != 2 or av.shape[1] != bm.shape[0]:
        raise ValueError(f"matmul: shapes {av.shape} and {bv.shape} are incompatible")
    out = _stable_matmul(av, bm)
    if b_vec:
        out = out[:, 0]

    def pull(g):
        gm = g[:, None] if b_vec else g
        _acc(a, gm @ bm.T, own=True)
        gb = av.T @ gm
        _acc(b, gb[:, 0] if b_vec else gb, own=True)

    return _record(tape, out, pull)


def gather(x, idx) -> Var:
    """Rows of ``x`` selected along axis 0 by an integer index array."""
    tape = _tape_of(x)
    xv = _val(x)
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= xv.shape[0]):
        raise ValueError(
            f"gather: index out of range for buffer with {xv.shape[0]} rows")
    out = xv[idx]
    n_rows = xv.shape[0]
    row_size = int(np.prod(xv.shape[1:], dtype=np.int64)) if xv.ndim > 1 else 1

    def pull(g):
        flat_idx = idx.ravel()
        if row_size == 1:
            acc = np.bincount(flat_idx, weights=g.ravel(), minlength=n_rows)
            acc = acc.reshape(xv.shape)
        else:
            cols = (flat_idx[:, None] * row_size + np.arange(row_size)).ravel()
            acc = np.bincount(cols, weights=g.reshape(-1, row_size).ravel(),
                              minlength=n_rows * row_size).reshape(xv.shape)
        _acc(x, acc, own=True)

    return _record(tape, out, pull)


def weighted_gather(x, idx, weights) -> Var:
    """Interpolation gather: out[m] = sum_j weights[m, j] * x[idx[m, j]].

    ``idx`` (M, J) and ``weights`` (M, J) are constants; gradient flows into
    the gathered buffer only, via a deterministic scatter-add. The workhorse
    behind every grid interpolation.
    """
    tape = _tape_of(x)
    xv = _val(x)
    idx = np.asarray(idx)
    w = _f64(weights)
    if idx.shape != w.shape or idx.ndim != 2:
        raise ValueError(
            f"weighted_gather: idx {idx.shape} and weights {w.shape} must be "
            "equal 2-D shapes")
    if idx.size and (idx.min() < 0 or idx.max() >= xv.shape[0]):
        raise ValueError(
            f"weighted_gather: index out of range for buffer with "
            f"{xv.shape[0]} rows")
    n_corners = idx.shape[1]
    if xv.ndim == 1:
        out = np.zeros(idx.shape[0])
        for j in range(n_corners):
            out += xv[idx[:, j]] * w[:, j]
    else:
        out = np.zeros((idx.shape[0],) + xv.shape[1:])
        for j in range(n_corners):
            out += xv[idx[:, j]] * w[:, j, None]
    n_rows = xv.shape[0]
    row_size = int(np.prod(xv.shape[1:], dtype=np.int64)) if xv.ndim > 1 else 1

    def pull(g):
        acc = np.zeros(n_rows * row_size)
        if row_size == 1:
            for j in range(n_corners):
                acc += np.bincount(idx[:, j], weights=g * w[:, j],
                                   minlength=n_rows)
        else:
            cols = np.arange(row_size)
            g2 = g.reshape(-1, row_size)
            for j in range(n_corners):
                flat = (idx[:, j, None] * row_size + cols).ravel()
                acc += np.bincount(flat, weights=(g2 * w[:, j, None]).ravel(),
                                   minlength=n_rows * row_size)
        _acc(x, acc.reshape(xv.shape), own=True)

    return _record(tape, out, pull)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Var:
    tape = _tape_of(x)
    xv = _val(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    axes = axis if axis is None or isinstance(axis, tuple) else (axis,)

    def pull(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        _acc(x, np.broadcast_to(g, xv.shape))

    return _record(tape, out, pull)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Var:
    xv = _val(x)
    n = xv.size if axis is None else np.prod(
        [xv.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    return reduce_sum(x, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def cumsum_exclusive(x, axis: int = -1) -> Var:
    """Exclusive prefix sum: out[i] = sum of x[..k..] for k < i along ``axis``."""
    tape = _tape_of(x)
    xv = _val(x)
    inclusive = np.cumsum(xv, axis=axis)
    out = np.zeros_like(xv)
    head = [slice(None)] * xv.ndim
    head[axis] = slice(1, None)
    tail = [slice(None)] * xv.ndim
    tail[axis] = slice(0, -1)
    out[tuple(head)] = inclusive[tuple(tail)]

    def pull(g):
        flipped = np.flip(g, axis=axis)
        acc = np.cumsum(flipped, axis=axis)
        rev = np.zeros_like(g)
        rev[tuple(head)] = acc[tuple(tail)]
        _acc(x, np.ascontiguousarray(np.flip(rev, axis=axis)), own=True)

    return _record(tape, out, pull)


def sigmoid(x) -> Var:
    tape = _tape_of(x)
    xv = _val(x)
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)

    def pull(g):
        _acc(x, g * out * (1.0 - out), own=True)

    return _record(tape, out, pull)


def relu(x) -> Var:
    tape = _tape_of(x)
    xv = _val(x)
    out = np.maximum(xv, 0.0)

    def pull(g):
        _acc(x, g * (xv > 0.0), own=True)

    return _record(tape, out, pull)


def exp(x) -> Var:
    tape = _tape_of(x)
    out = np.exp(_val(x))

    def pull(g):
        _acc(x, g * out, own=True)

    return _record(tape, out, pull)


def log(x) -> Var:
    tape = _tape_of(x)
    xv = _val(x)
    with np.errstate(divide="ignore"):
        out = np.log(xv)

    def pull(g):
        _acc(x, g / xv, own=True)

    return _record(tape, out, pull)


def absolute(x) -> Var:
    tape = _tape_of(x)
    xv = _val(x)

    def pull(g):
        _acc(x, g * np.sign(xv), own=True)

    return _record(tape, np.abs(xv), pull)


def clip(x, lo=None, hi=None) -> Var:
    """Clamp values; gradient passes only strictly inside the interval."""
    tape = _tape_of(x)
    xv = _val(x)
    out = np.clip(xv, lo, hi)
    inside = np.ones(xv.shape, dtype=bool)
    if lo is not None:
        inside &= xv > lo
    if hi is not None:
        inside &= xv < hi

    def pull(g):
        _acc(x, g * inside, own=True)

    return _record(tape, out, pull)


def concat(xs, axis: int = 0) -> Var:
    tape = _tape_of(*xs)
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def pull(g):
        # slices are disjoint views of g, which is dead after this pull
        for x, v, start, stop in zip(xs, vals, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * v.ndim
            sl[axis] = slice(start, stop)
            _acc(x, g[tuple(sl)], own=True)

    return _record(tape, out, pull)


def reshape(x, shape) -> Var:
    tape = _tape_of(x)
    xv = _val(x)

    def pull(g):
        # g belongs to this node alone and is dead after the pull
        _acc(x, g.reshape(xv.shape), own=True)

    return _record(tape, xv.reshape(shape), pull)


def finite_difference(fn, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat array.

    Independent of the tape machinery on purpose: used as the oracle that
    tape gradients are checked against.
    """
    x0 = _f64(x0).copy()
    grad = np.zeros_like(x0)
    flat = x0.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = float(fn(x0))
        flat[i] = keep - h
        fm = float(fn(x0))
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise relative error with an absolute floor for tiny values."""
    a = _f64(a)
    b = _f64(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def random_uniform(rng: np.random.Generator, lo: float, hi: float, shape) -> np.ndarray:
    """Seeded uniform draw in [lo, hi); thin wrapper to keep dtype fixed."""
    return rng.uniform(lo, hi, size=shape).astype(np.float64)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float64)
