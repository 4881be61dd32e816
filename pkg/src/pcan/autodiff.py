"""Minimal reverse-mode differentiation over dense numpy arrays.

Only the primitives the retrieval network needs are provided. Every op takes
``Tensor`` or plain arrays; an op whose inputs carry no tape returns an
unrecorded constant, so inference runs without any bookkeeping.

Example::

    tape = Tape(np.float64)
    w = tape.param("w", np.array(3.0))
    y = mul(w, w)
    grad(tape, y)["w"]        # -> array(6.)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class ContractError(ValueError):
    """Caller broke an API contract (e.g. non-scalar backward seed)."""


class CheckError(RuntimeError):
    """Finite-difference check could not be carried out."""


class Tensor:
    """Immutable array value, optionally recorded on a tape."""

    __slots__ = ("data", "tape", "parents", "backward", "name")

    def __init__(self, data, tape=None, parents=(), backward=None, name=None):
        data = np.asarray(data)
        data.flags.writeable = False
        self.data = data
        self.tape = tape
        self.parents = parents
        self.backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    # operator sugar for the few ops that read better infix
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive applications plus a named parameter registry.

    Nodes are appended in creation order, which is a valid topological order,
    so the backward pass simply walks the record in reverse.
    """

    def __init__(self, dtype=np.float32, check_finite=True):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}
        # activation patterns of non-smooth ops (relu masks, argmax indices)
        self.switches: list[np.ndarray] = []

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        t = Tensor(np.array(value, dtype=self.dtype), tape=self, name=name)
        self.params[name] = t
        return t

    def params_from(self, values: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.param(k, v) for k, v in values.items()}

    def record(self, t: Tensor) -> Tensor:
        self.nodes.append(t)
        return t

    def release(self) -> None:
        """Drop recorded activations and backward closures.

        Closures and tensors reference each other, so without this a finished
        tape waits for the cyclic collector while holding every activation.
        """
        for n in self.nodes:
            n.backward = None
            n.parents = ()
        self.nodes.clear()
        self.switches.clear()


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _needs(x):
    return isinstance(x, Tensor) and x.tape is not None


def _finite(out):
    # one reduction; a NaN/Inf anywhere (or an overflowing sum) fails the test
    return bool(np.isfinite(out.sum())) if out.dtype.kind == "f" else True


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            return x.tape
    return None


def _make(out, op, inputs, backward):
    """Wrap ``out`` and record it if any input is on a tape."""
    tape = _tape_of(*inputs)
    if tape is None:
        if not _finite(out):
            raise NonFiniteError(f"{op} produced non-finite values")
        return Tensor(out, name=op)
    if tape.check_finite and not _finite(out):
        raise NonFiniteError(f"{op} produced non-finite values (node {len(tape.nodes)})")
    parents = tuple(x if isinstance(x, Tensor) and x.tape is tape else None for x in inputs)
    return tape.record(Tensor(out, tape, parents, backward, op))


def _switch(inputs, pattern):
    tape = _tape_of(*inputs)
    if tape is not None:
        tape.switches.append(pattern)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    x, y = _data(a), _data(b)
    out = x + y

    def backward(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return _make(out, "add", (a, b), backward)


def sub(a, b):
    x, y = _data(a), _data(b)
    out = x - y

    def backward(g):
        return _unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)

    return _make(out, "sub", (a, b), backward)


def mul(a, b):
    x, y = _data(a), _data(b)
    out = x * y

    def backward(g):
        gx = _unbroadcast(g * y, x.shape) if _needs(a) else None
        gy = _unbroadcast(g * x, y.shape) if _needs(b) else None
        return gx, gy

    return _make(out, "mul", (a, b), backward)


def square(a):
    x = _data(a)

    def backward(g):
        return (2 * x * g,)

    return _make(x * x, "square", (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a, b):
    """Batched matrix product over the last two axes."""
    x, y = _data(a), _data(b)
    if x.shape[-1] != y.shape[-2 if y.ndim > 1 else 0]:
        raise DimensionError(f"matmul: {x.shape} @ {y.shape}")
    out = x @ y

    def backward(g):
        gx = _unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape) if _needs(a) else None
        gy = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape) if _needs(b) else None
        return gx, gy

    return _make(out, "matmul", (a, b), backward)


def apply_linear(x, W, b=None):
    """Shared fully connected layer: ``y[..., :] = x[..., :] @ W + b`` per row."""
    xd, Wd = _data(x), _data(W)
    if Wd.ndim != 2 or xd.shape[-1] != Wd.shape[0]:
        raise DimensionError(f"linear: input {xd.shape} vs weight {Wd.shape}")
    if b is not None and _data(b).shape != (Wd.shape[1],):
        raise DimensionError(f"linear: bias {_data(b).shape} vs weight {Wd.shape}")
    cin, cout = Wd.shape
    # one 2-D GEMM; stacked matmul over leading axes is far slower
    x2 = xd.reshape(-1, cin)
    out = x2 @ Wd
    if b is not None:
        out += _data(b)
    out = out.reshape(xd.shape[:-1] + (cout,))

    def backward(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ Wd.T).reshape(xd.shape) if _needs(x) else None
        gW = x2.T @ g2 if _needs(W) else None
        gb = g2.sum(axis=0) if _needs(b) else None
        return gx, gW, gb

    return _make(out, "linear", (x, W, b), backward)


def slice_rows(a, start, stop):
    """``a[start:stop]`` along axis 0."""
    x = _data(a)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[start:stop] = g
        return (gx,)

    return _make(x[start:stop], "slice_rows", (a,), backward)


def transpose(a):
    """Swap the last two axes."""
    x = _data(a)

    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(np.swapaxes(x, -1, -2), "transpose", (a,), backward)


def reshape(a, shape):
    x = _data(a)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(x.reshape(shape), "reshape", (a,), backward)


def concat(xs, axis=-1):
    arrays = [_data(x) for x in xs]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, "concat", tuple(xs), backward)


def gather(a, index):
    """Select rows along the point axis.

    ``a`` has shape ``[..., N, C]`` with leading batch dims ``B...``; ``index``
    has shape ``[B..., *rest]`` holding integers in ``[0, N)``. Output shape is
    ``[B..., *rest, C]``.
    """
    x = _data(a)
    index = np.asarray(index)
    nb = x.ndim - 2
    n, c = x.shape[-2], x.shape[-1]
    if index.shape[:nb] != x.shape[:nb]:
        raise DimensionError(f"gather: index batch {index.shape[:nb]} vs {x.shape[:nb]}")
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"gather: index out of range [0, {n})")
    nbatch = int(np.prod(x.shape[:nb], dtype=np.int64))
    offsets = (np.arange(nbatch) * n).reshape(x.shape[:nb] + (1,) * (index.ndim - nb))
    flat_idx = (index + offsets).ravel()
    out = x.reshape(-1, c)[flat_idx].reshape(index.shape + (c,))

    def backward(g):
        g2 = g.reshape(-1, c)
        gx = np.empty((nbatch * n, c), dtype=g.dtype)
        for j in range(c):
            gx[:, j] = np.bincount(flat_idx, weights=g2[:, j], minlength=nbatch * n)
        return (gx.reshape(x.shape),)

    return _make(out, "gather", (a,), backward)


def take(a, index):
    """Select entries along axis 0 (e.g. descriptor rows of a batch)."""
    x = _data(a)
    index = np.asarray(index)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(x[index], "take", (a,), backward)


# ---------------------------------------------------------------------------
# reductions

def sum_(a, axis=None, keepdims=False):
    x = _data(a)
    out = x.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, "sum", (a,), backward)


def mean(a, axis=None):
    x = _data(a)
    n = x.size if axis is None else x.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


def _extremum(a, axis, pick, op):
    x = _data(a)
    if x.shape[axis] == 0:
        raise DimensionError(f"{op}: empty reduction axis")
    idx = pick(x, axis=axis)  # first index on ties
    _switch((a,), idx)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(x, idx_k, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.put_along_axis(gx, idx_k, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, op, (a,), backward)


def max_(a, axis=-1):
    return _extremum(a, axis, np.argmax, "max")


def min_(a, axis=-1):
    return _extremum(a, axis, np.argmin, "min")


def set_max_pool(a):
    """Max over the group axis: ``[..., K, C] -> [..., C]``.

    The backward pass routes each gradient to the recorded argmax, lowest index
    on ties.
    """
    if _data(a).ndim < 2:
        raise DimensionError("set_max_pool needs a [..., K, C] input")
    return _extremum(a, -2, np.argmax, "set_max_pool")


# ---------------------------------------------------------------------------
# activations and normalisation

def relu(a):
    x = _data(a)
    mask = x > 0
    _switch((a,), mask)

    def backward(g):
        return (g * mask,)

    return _make(np.where(mask, x, x.dtype.type(0)), "relu", (a,), backward)


def sigmoid(a):
    x = _data(a)
    # two-branch form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    # keep scores strictly inside (0, 1) even where the float rounds to an end
    info = np.finfo(out.dtype)
    out = np.clip(out, info.tiny, 1 - info.epsneg)

    def backward(g):
        return (g * out * (1 - out),)

    return _make(out, "sigmoid", (a,), backward)


def softmax_rows(a):
    """Softmax over the last axis, computed with max subtraction."""
    x = _data(a)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, "softmax", (a,), backward)


def l2_normalize(a, axis=-1, zero_ok=True):
    """Scale slices along ``axis`` to unit L2 norm.

    All-zero slices stay zero when ``zero_ok``; otherwise they raise
    ``ZeroDivisionError``.
    """
    x = _data(a)
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    zero = norm == 0
    if zero.any() and not zero_ok:
        raise ZeroDivisionError("cannot L2-normalise an all-zero vector")
    safe = np.where(zero, 1, norm)
    out = x / safe

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(zero, 0, (g - out * dot) / safe),)

    return _make(out, "l2_normalize", (a,), backward)


# ---------------------------------------------------------------------------
# backward pass and gradient checking

def grad(tape: Tape, output: Tensor) -> dict[str, np.ndarray]:
    """d(output)/d(param) for every parameter registered on ``tape``."""
    if output.tape is not tape:
        raise ContractError("output was not recorded on this tape")
    if output.data.size != 1:
        raise ContractError(f"grad needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if parent is None or pg is None:
                continue
            if pg.dtype != parent.dtype:
                pg = pg.astype(parent.dtype)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {
        name: np.asarray(grads.get(id(t), np.zeros_like(t.data)), dtype=t.dtype).reshape(t.shape)
        for name, t in tape.params.items()
    }


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    n_checked: int
    n_excluded: int
    worst_index: tuple | None = None


@dataclass
class GradCheckReport:
    params: dict[str, ParamCheck] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params.values()), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance

    def by_group(self, depth: int = 2) -> dict[str, ParamCheck]:
        """Aggregate per dotted-name prefix (``attention.sag1``, ``vlad.proj``, ...)."""
        out: dict[str, ParamCheck] = {}
        for p in self.params.values():
            key = ".".join(p.name.split(".")[:depth])
            g = out.setdefault(key, ParamCheck(key, 0.0, 0, 0))
            g.n_checked += p.n_checked
            g.n_excluded += p.n_excluded
            if p.max_rel_err >= g.max_rel_err:
                g.max_rel_err, g.worst_index = p.max_rel_err, p.worst_index
        return out


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def finite_diff_check(
    fn: Callable[[Tape, dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    tolerance: float = 1e-5,
    step: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    dtype=np.float64,
    grad_hook: Callable[[dict[str, np.ndarray]], dict[str, np.ndarray]] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn(tape, p)`` must build a scalar from the parameter tensors ``p``.
    Entries whose +/- ``step`` evaluations change any relu mask or argmax
    pattern straddle a kink and are excluded (counted in ``n_excluded``).
    ``max_entries`` caps how many entries per parameter are probed (chosen
    with ``seed``). ``grad_hook`` may rewrite the analytic gradients before
    comparison; it exists so tests can inject a corrupted gradient.
    """
    base = {k: np.array(v, dtype=dtype) for k, v in params.items()}

    def evaluate(values):
        tape = Tape(dtype)
        out = fn(tape, tape.params_from(values))
        return tape, out

    tape, out = evaluate(base)
    _, out2 = evaluate(base)
    if out.data.tobytes() != out2.data.tobytes():
        raise CheckError("function is not deterministic across two evaluations")
    analytic = grad(tape, out)
    if grad_hook is not None:
        analytic = grad_hook(analytic)
    pattern = tape.switches

    def same_pattern(switches):
        return len(switches) == len(pattern) and all(
            np.array_equal(a, b) for a, b in zip(switches, pattern)
        )

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, value in base.items():
        flat_ids = np.arange(value.size)
        if max_entries is not None and value.size > max_entries:
            flat_ids = np.sort(rng.choice(value.size, size=max_entries, replace=False))
        worst, worst_idx, n_ok, n_excl = 0.0, None, 0, 0
        for fi in flat_ids:
            idx = np.unravel_index(fi, value.shape)
            vals = []
            kink = False
            for sign in (1.0, -1.0):
                probe = dict(base)
                shifted = value.copy()
                shifted[idx] += sign * step
                probe[name] = shifted
                t, o = evaluate(probe)
                kink = kink or not same_pattern(t.switches)
                vals.append(float(o.data))
            if kink:
                n_excl += 1
                continue
            numeric = (vals[0] - vals[1]) / (2 * step)
            err = float(relative_error(analytic[name][idx], numeric))
            n_ok += 1
            if err > worst:
                worst, worst_idx = err, tuple(int(i) for i in idx)
        report.params[name] = ParamCheck(name, worst, n_ok, n_excl, worst_idx)
    return report
