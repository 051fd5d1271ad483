"""Define-by-run reverse-mode differentiation over numpy arrays.

Every differentiable function in this module accepts either plain numpy
values or :class:`Var` objects. With plain values it simply computes the
result, so the same model code serves both the training path (recorded on a
:class:`Tape`) and gradient-free evaluation.

Complex gradients follow the convention ``g = dL/dRe(z) + 1j * dL/dIm(z)``;
gradients flowing into real inputs keep only the real part.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from . import _kernels

LEAKY_SLOPE = 0.1


class NonFiniteError(FloatingPointError):
    """Raised when a recorded value or a gradient stops being finite."""

    def __init__(self, node: int, op: str, stage: str):
        super().__init__(f"non-finite {stage} at tape node {node} ({op})")
        self.node = node
        self.op = op


@dataclass
class _Node:
    op: str
    inputs: tuple
    values: tuple
    fwd: Callable
    bwd: Callable
    out: object


class Var:
    """A value recorded on a tape."""

    __array_ufunc__ = None  # make numpy defer to our reflected operators
    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape: Tape, index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Nodes are appended in execution order, so walking the list backwards is a
    valid reverse topological order.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: list[_Node] = []
        self.params: dict[str, Var] = {}
        self.check_finite = check_finite

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise KeyError(f"parameter {name!r} registered twice")
        v = self._push(_Node("param", (), (), None, None, None), np.array(value, dtype=float))
        self.params[name] = v
        return v

    def watch(self, params: dict) -> dict[str, Var]:
        return {k: self.param(k, v) for k, v in params.items()}

    def _push(self, node: _Node, value) -> Var:
        idx = len(self.nodes)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(idx, node.op, "value")
        node.out = value
        self.nodes.append(node)
        return Var(value, self, idx)

    def record(self, op, inputs, values, fwd, bwd, out) -> Var:
        return self._push(_Node(op, tuple(inputs), tuple(values), fwd, bwd, None), out)

    def replay(self) -> bool:
        """Re-run every recorded primitive; True if all outputs match bit-for-bit."""
        for node in self.nodes:
            if node.fwd is None:
                continue
            again = node.fwd(*node.values)
            if not np.array_equal(np.asarray(again), np.asarray(node.out)):
                return False
        return True

    def backward(self, loss: Var) -> Gradient:
        if loss.tape is not self or np.size(loss.value) != 1:
            raise ValueError("loss must be a scalar recorded on this tape")
        grads: list = [None] * len(self.nodes)
        grads[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.bwd is None:
                continue
            if self.check_finite and not np.all(np.isfinite(g)):
                raise NonFiniteError(i, node.op, "gradient")
            pg = node.bwd(g, node.out, *node.values)
            for inp, gi in zip(node.inputs, pg):
                if gi is None or not isinstance(inp, Var):
                    continue
                gi = _fit(gi, inp.value)
                j = inp.index
                grads[j] = gi if grads[j] is None else grads[j] + gi
        out = {}
        for name, v in self.params.items():
            g = grads[v.index]
            out[name] = np.zeros_like(v.value) if g is None else np.asarray(g, dtype=float).reshape(v.value.shape)
        return Gradient(out)


@dataclass
class Gradient:
    """Loss gradient per registered parameter name."""

    values: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.values[name]

    def __iter__(self):
        return iter(self.values)

    def items(self):
        return self.values.items()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.values.values())


def backward(tape: Tape, loss: Var) -> Gradient:
    return tape.backward(loss)


def _fit(g, like):
    """Reduce a broadcast gradient to the shape (and realness) of ``like``."""
    g = np.asarray(g)
    if not np.iscomplexobj(like) and np.iscomplexobj(g):
        g = g.real
    shape = np.shape(like)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _tape_of(args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def apply(op: str, fwd: Callable, bwd: Callable, *args):
    """Run ``fwd`` on raw values; record it when any argument is a Var.

    ``bwd(g, out, *values)`` returns one gradient (or None) per argument.
    """
    values = tuple(a.value if isinstance(a, Var) else a for a in args)
    out = fwd(*values)
    tape = _tape_of(args)
    if tape is None:
        return out
    return tape.record(op, args, values, fwd, bwd, out)


def value(x):
    return x.value if isinstance(x, Var) else x


# --- elementwise arithmetic -------------------------------------------------


def add(a, b):
    return apply("add", np.add, lambda g, o, a, b: (g, g), a, b)


def sub(a, b):
    return apply("sub", np.subtract, lambda g, o, a, b: (g, -g), a, b)


def mul(a, b):
    return apply("mul", np.multiply, lambda g, o, a, b: (g * np.conj(b), g * np.conj(a)), a, b)


def div(a, b):
    return apply(
        "div",
        np.divide,
        lambda g, o, a, b: (g / np.conj(b), -g * np.conj(o / b)),
        a,
        b,
    )


def neg(a):
    return apply("neg", np.negative, lambda g, o, a: (-g,), a)


def power(a, k: float):
    return apply("pow", lambda a: np.power(a, k), lambda g, o, a: (g * k * np.power(a, k - 1),), a)


def exp(a):
    return apply("exp", np.exp, lambda g, o, a: (g * np.conj(o),), a)


def log(a):
    return apply("log", np.log, lambda g, o, a: (g / np.conj(a),), a)


def sqrt(a):
    def bwd(g, o, a):
        return (g * 0.5 / np.where(o > 0, o, np.inf),)

    return apply("sqrt", np.sqrt, bwd, a)


def sin(a):
    return apply("sin", np.sin, lambda g, o, a: (g * np.cos(a),), a)


def cos(a):
    return apply("cos", np.cos, lambda g, o, a: (-g * np.sin(a),), a)


def tanh(a):
    return apply("tanh", np.tanh, lambda g, o, a: (g * (1.0 - o * o),), a)


def sigmoid(a):
    return apply("sigmoid", expit, lambda g, o, a: (g * o * (1.0 - o),), a)


def leaky_relu(a, slope: float = LEAKY_SLOPE):
    return apply(
        "leaky_relu",
        lambda a: np.where(a > 0, a, slope * a),
        lambda g, o, a: (g * np.where(a > 0, 1.0, slope),),
        a,
    )


def clip(a, lo: float, hi: float):
    """Clamp to [lo, hi]; the gradient passes only where the input was inside."""
    return apply(
        "clip",
        lambda a: np.clip(a, lo, hi),
        lambda g, o, a: (g * ((a >= lo) & (a <= hi)),),
        a,
    )


def _abs_grad(g, o, a):
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(o > 0, a / np.where(o > 0, o, 1.0), 0.0)
    return (g * unit,)


def absolute(a):
    """|a| for real or complex input; the subgradient at 0 is 0."""
    return apply("abs", np.abs, _abs_grad, a)


# --- reductions and shape ---------------------------------------------------


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    def bwd(g, o, a):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, np.shape(a)),)

    return apply("sum", lambda a: np.sum(a, axis=axis, keepdims=keepdims), bwd, a)


def mean(a, axis=None, keepdims=False):
    n = np.size(value(a)) if axis is None else np.prod([np.shape(value(a))[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def matmul(a, b):
    def bwd(g, o, a, b):
        a2, b2 = np.asarray(a), np.asarray(b)
        if b2.ndim == 1:
            ga = np.multiply.outer(g, np.conj(b2))
            gb = np.tensordot(np.conj(a2), g, axes=(tuple(range(a2.ndim - 1)), tuple(range(g.ndim))))
            return ga, gb
        ga = g @ np.conj(np.swapaxes(b2, -1, -2))
        gb = np.conj(np.swapaxes(a2, -1, -2)) @ g
        return ga, gb

    return apply("matmul", np.matmul, bwd, a, b)


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, slice)) or p is Ellipsis for p in parts)


def getitem(a, idx):
    basic = _is_basic(idx)

    def bwd(g, o, a):
        out = np.zeros(np.shape(a), dtype=np.result_type(g, a))
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return apply("getitem", lambda a: a[idx], bwd, a)


def reshape(a, shape):
    return apply("reshape", lambda a: np.reshape(a, shape), lambda g, o, a: (np.reshape(g, np.shape(a)),), a)


def concatenate(parts, axis=-1):
    sizes = [np.shape(value(p))[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g, o, *vals):
        return tuple(np.split(g, bounds, axis=axis))

    return apply("concat", lambda *vals: np.concatenate(vals, axis=axis), bwd, *parts)


def real(a):
    return apply("real", np.real, lambda g, o, a: (np.real(g),), a)


# --- spectral ---------------------------------------------------------------


def _half_spectrum_weights(n: int) -> np.ndarray:
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def rfft(a, n: int):
    """Real FFT along the last axis with zero padding to length n."""

    def bwd(g, o, a):
        length = np.shape(a)[-1]
        h = g / _half_spectrum_weights(n)
        return (n * np.fft.irfft(h, n=n, axis=-1)[..., :length],)

    return apply("rfft", lambda a: np.fft.rfft(a, n=n, axis=-1), bwd, a)


def irfft(a, n: int):
    """Inverse real FFT along the last axis producing n samples."""

    def bwd(g, o, a):
        return (np.fft.rfft(g, n=n, axis=-1) * (_half_spectrum_weights(n) / n),)

    return apply("irfft", lambda a: np.fft.irfft(a, n=n, axis=-1), bwd, a)


def frames(a, size: int, hop: int):
    """Slice the last axis into overlapping frames -> (..., n_frames, size)."""
    length = np.shape(value(a))[-1]
    count = 1 + (length - size) // hop
    idx = np.arange(count)[:, None] * hop + np.arange(size)[None, :]

    def bwd(g, o, a):
        lead = np.shape(a)[:-1]
        if size % hop == 0:
            parts = size // hop
            blocks = np.zeros(lead + (count + parts - 1, hop))
            gb = g.reshape(lead + (count, parts, hop))
            for j in range(parts):
                blocks[..., j : j + count, :] += gb[..., j, :]
            out = np.zeros(np.shape(a))
            out[..., : blocks.shape[-2] * hop] = blocks.reshape(lead + (-1,))
            return (out,)
        out = np.zeros(np.shape(a)).reshape(-1, length)
        flat_g = g.reshape(-1, count * size)
        for row in range(out.shape[0]):
            np.add.at(out[row], idx.ravel(), flat_g[row])
        return (out.reshape(np.shape(a)),)

    return apply("frames", lambda a: a[..., idx], bwd, a)


# --- signal-processing primitives ---------------------------------------------


def biquad_response(b0, b1, b2, a1, a2, n: int):
    """H on the rfft grid of length n for one biquad (broadcastable coefficients)."""
    return biquad_cascade_response([(b0, b1, b2, a1, a2)], n)


def biquad_cascade_response(coeffs, n: int):
    """Product of biquad responses on the rfft grid of length n.

    ``coeffs`` is a list of (b0, b1, b2, a1, a2); entries of shape (..., 1)
    give a response of shape (..., n//2 + 1). Gradients are reduced over
    frequency inside the primitive.
    """
    zinv = np.exp(-2j * np.pi * np.arange(n // 2 + 1) / n)
    k = len(coeffs)
    flat = [c for sec in coeffs for c in sec]
    cache = {}

    def fwd(*vals):
        shape = np.broadcast_shapes(*(np.shape(v) for v in vals), (1,))
        c = np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape).reshape(-1) for v in vals])
        h, den, prod = _kernels.cascade_response(np.ascontiguousarray(c.reshape(k, 5, -1)), zinv)
        cache["h"] = (h, den, shape)
        return prod.reshape(shape[:-1] + (len(zinv),))

    def bwd(g, o, *vals):
        h, den, shape = cache["h"]
        g2 = np.ascontiguousarray(np.broadcast_to(g, o.shape).reshape(h.shape[1], -1), dtype=complex)
        gc = _kernels.cascade_response_grad(g2, h, den, zinv)
        return tuple(gc[i, j].reshape(shape) for i in range(k) for j in range(5))

    return apply("biquad_cascade_response", fwd, bwd, *flat)


def gru1_sequence(p, x, h0=None):
    """Hidden-size-1 GRU over each row of x (B, T); p holds the 9 scalars.

    The backward pass is full backpropagation through time.
    """
    xv = np.atleast_2d(value(x))
    h0 = np.zeros(xv.shape[0]) if h0 is None else np.asarray(h0, dtype=float)
    cache = {}

    def fwd(p, x):
        x2 = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
        hs, rs, zs, cs = _kernels.gru1_forward(np.asarray(p, dtype=float), x2, h0)
        cache["gates"] = (x2, hs, rs, zs, cs)
        return hs.reshape(np.shape(x))

    def bwd(g, o, p, x):
        x2, hs, rs, zs, cs = cache["gates"]
        g2 = np.ascontiguousarray(np.atleast_2d(g), dtype=float)
        gp, gx, _ = _kernels.gru1_backward(np.asarray(p, dtype=float), x2, h0, hs, rs, zs, cs, g2)
        return gp, gx.reshape(np.shape(x))

    return apply("gru1", fwd, bwd, p, x)


def gru_sequence(wx, wh, bias, u, h0=None):
    """Vector GRU over u (B, T, I); returns hidden states (B, T, H)."""
    uv = value(u)
    nh = np.shape(value(wh))[1]
    h0 = np.zeros((uv.shape[0], nh)) if h0 is None else np.asarray(h0, dtype=float)
    cache = {}

    def fwd(wx, wh, bias, u):
        u = np.ascontiguousarray(u, dtype=float)
        hs, gates = _kernels.gru_forward(
            np.ascontiguousarray(wx, dtype=float), np.ascontiguousarray(wh, dtype=float),
            np.asarray(bias, dtype=float), u, h0,
        )
        cache["state"] = (u, hs, gates)
        return hs

    def bwd(g, o, wx, wh, bias, u):
        u, hs, gates = cache["state"]
        return _kernels.gru_backward(
            np.ascontiguousarray(wx, dtype=float), np.ascontiguousarray(wh, dtype=float),
            np.asarray(bias, dtype=float), u, h0, hs, gates, np.ascontiguousarray(g, dtype=float),
        )[:4]

    return apply("gru", fwd, bwd, wx, wh, bias, u)


# --- finite-difference checking -------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    rtol: float
    atol: float
    max_abs_error: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e < self.rtol for e in self.max_rel_error.values())

    def worst(self) -> tuple[str, float]:
        return max(self.max_rel_error.items(), key=lambda kv: kv[1])

    def worst_abs(self) -> tuple[str, float]:
        return max(self.max_abs_error.items(), key=lambda kv: kv[1])


def grad_check(fragment, params: dict, inputs, rtol: float = 1e-4, atol: float = 1e-7, step: float = 1e-4,
               names=None) -> GradCheckReport:
    """Compare tape gradients of ``fragment(params, inputs)`` with central differences.

    ``fragment`` must return a scalar and be written with this module's
    functions so it runs both on Vars and on plain arrays. An element counts as
    an error only when its absolute discrepancy exceeds ``atol``; the report
    holds, per parameter, the largest relative discrepancy among those and the
    largest absolute discrepancy overall.
    """
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    tape = Tape()
    loss = fragment(tape.watch(params), inputs)
    grads = tape.backward(loss)
    report, report_abs = {}, {}
    for name in names or params:
        base = params[name]
        worst = worst_abs = 0.0
        for i in np.ndindex(base.shape):
            orig = base[i]
            base[i] = orig + step
            up = float(np.real(fragment(params, inputs)))
            base[i] = orig - step
            down = float(np.real(fragment(params, inputs)))
            base[i] = orig
            fd = (up - down) / (2.0 * step)
            ad = float(grads[name][i])
            diff = abs(ad - fd)
            worst_abs = max(worst_abs, diff)
            if diff >= atol:
                worst = max(worst, diff / max(abs(ad), abs(fd)))
        report[name] = worst
        report_abs[name] = worst_abs
    return GradCheckReport(report, rtol, atol, report_abs)
