"""Define-by-run reverse-mode automatic differentiation over dense numpy arrays.

A fresh graph is taped on every forward pass and torn down by ``backward``,
which visits each node exactly once in reverse topological order.  The op set
is exactly what the unrolled recurrent model needs: same-padded 1-D
convolution over the sequence axis, per-map shifts, pointwise arithmetic,
hard and soft nonlinearities, an embedding gather, an affine readout and a
fused softmax cross-entropy.  Everything runs single threaded per graph;
determinism follows from numpy's fixed reduction order.
"""

from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class DataError(ValueError):
    """Token or target values fall outside the declared vocabulary."""


class UsageError(RuntimeError):
    """API called out of order, e.g. backward without a forward graph."""


_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True
_kink_watch = None


@contextlib.contextmanager
def no_grad():
    """Disable graph taping; ops return plain constant tensors."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class KinkWatch:
    """Summarises which side of its kinks every watched pre-activation is on.

    Two forward passes have the same signature iff no unit moved across a
    kink between them (up to count collisions, vanishing at small steps).
    """

    def __init__(self):
        self.signature: list[int] = []

    def check(self, values: np.ndarray, center: float) -> None:
        self.signature.append(int(np.count_nonzero(values > center)))
        self.signature.append(int(np.count_nonzero(values < -center)))


@contextlib.contextmanager
def watch_kinks():
    """Record the kink-side signature of hard-nonlinearity and hinge inputs."""
    global _kink_watch
    prev = _kink_watch
    _kink_watch = watch = KinkWatch()
    try:
        yield watch
    finally:
        _kink_watch = prev


class Tensor:
    """A dense row-major array plus its place in the current graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A named leaf tensor that accumulates gradients across backward passes."""

    __slots__ = ("name", "clamp")

    def __init__(self, data, name: str, clamp: tuple[float, float] | None = None):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.clamp = clamp

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _acc(t: Tensor, g: np.ndarray, own: bool = False) -> None:
    # own=True means g is freshly allocated and may be adopted without copying.
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if own else g.copy()
    else:
        np.add(t.grad, g, out=t.grad)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every reachable parameter's .grad."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward is None and not loss._parents:
        raise UsageError("backward called before a differentiable forward pass")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
            node.grad = None  # adjoints of interior nodes are transient


# ---------------------------------------------------------------------------
# pointwise ops
# ---------------------------------------------------------------------------

def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    return _make(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def bw(g):
        _acc(a, g)
        _acc(b, -g, own=True)

    return _make(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def bw(g):
        _acc(a, g * b.data, own=True)
        _acc(b, g * a.data, own=True)

    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    def bw(g):
        _acc(a, g * s, own=True)

    return _make(a.data * s, (a,), bw)


def one_minus(a: Tensor) -> Tensor:
    def bw(g):
        _acc(a, -g, own=True)

    return _make(1.0 - a.data, (a,), bw)


def hard_tanh(a: Tensor) -> Tensor:
    """max(-1, min(1, x)); subgradient 0 on the saturated side of each kink."""
    if _kink_watch is not None:
        _kink_watch.check(a.data, 1.0)

    def bw(g):
        _acc(a, g * ((a.data > -1.0) & (a.data < 1.0)), own=True)

    return _make(np.clip(a.data, -1.0, 1.0), (a,), bw)


def hard_sigmoid(a: Tensor) -> Tensor:
    """max(0, min(1, (x+1)/2)); kinks sit at x = +-1, same as hard_tanh."""
    if _kink_watch is not None:
        _kink_watch.check(a.data, 1.0)

    def bw(g):
        m = (a.data > -1.0) & (a.data < 1.0)
        _acc(a, g * (0.5 * m), own=True)

    return _make(np.clip((a.data + 1.0) * 0.5, 0.0, 1.0), (a,), bw)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def bw(g):
        _acc(a, g * (1.0 - t * t), own=True)

    return _make(t, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        _acc(a, g * (s * (1.0 - s)), own=True)

    return _make(s, (a,), bw)


def gate_mix(u: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """Gated convex mix u*a + (1-u)*b, fused to one temp per pass.

    Computed literally as u*a plus (1-u)*b so u = 1 reproduces a exactly and
    u = 0 reproduces b exactly.
    """
    _check_same_shape(u, a, "gate_mix")
    _check_same_shape(u, b, "gate_mix")
    out = u.data * a.data
    out += (1.0 - u.data) * b.data

    def bw(g):
        if u.requires_grad:
            _acc(u, g * (a.data - b.data), own=True)
        if a.requires_grad:
            _acc(a, g * u.data, own=True)
        if b.requires_grad:
            _acc(b, g * (1.0 - u.data), own=True)

    return _make(out, (u, a, b), bw)


def sum_all(a: Tensor) -> Tensor:
    total = np.asarray(a.data.sum(dtype=np.float64), dtype=a.data.dtype)

    def bw(g):
        _acc(a, np.broadcast_to(g, a.data.shape) * np.ones(1, a.data.dtype), own=True)

    return _make(total, (a,), bw)


def sat_cost_sum(a: Tensor, s_limit: float) -> Tensor:
    """Sum of hinge penalties max(0, |x| - s_limit) over every element."""
    if _kink_watch is not None:
        _kink_watch.check(a.data, s_limit)
    excess = np.maximum(np.abs(a.data) - s_limit, 0.0)
    total = np.asarray(excess.sum(dtype=np.float64), dtype=a.data.dtype)

    def bw(g):
        m = np.abs(a.data) > s_limit
        _acc(a, g * (np.sign(a.data) * m), own=True)

    return _make(total, (a,), bw)


# ---------------------------------------------------------------------------
# sequence ops
# ---------------------------------------------------------------------------

def conv_columns(arr: np.ndarray, width: int) -> np.ndarray:
    """Gather zero-padded sliding windows: [..., n, c] -> [B, n, width*c]."""
    x3 = arr if arr.ndim == 3 else arr[None]
    batch, n, cin = x3.shape
    pad = width // 2
    cols = np.empty((batch, n, width * cin), dtype=arr.dtype)
    for d in range(width):
        block = cols[:, :, d * cin:(d + 1) * cin]
        off = d - pad
        lo, hi = max(0, -off), min(n, n - off)
        block[:, :lo] = 0.0
        block[:, lo:hi] = x3[:, lo + off:hi + off]
        block[:, hi:] = 0.0
    return cols


def conv1d_same(x: Tensor, kernel: Tensor, bias: Tensor,
                cols: np.ndarray | None = None) -> Tensor:
    """Same-padded 1-D convolution over the sequence axis.

    x is [n, c_in] or [batch, n, c_in]; kernel is [width, c_in, c_out] with
    odd width (offsets -width//2 .. +width//2); bias is [c_out].  Positions
    outside the sequence read as zero.  ``cols`` lets callers share one
    precomputed window gather between several convolutions of the same input.
    """
    kd = kernel.data
    if kd.ndim != 3 or kd.shape[0] % 2 == 0:
        raise ShapeError(f"conv1d_same: kernel must be [odd width, c_in, c_out], got {kd.shape}")
    width, cin, cout = kd.shape
    xd = x.data
    if xd.ndim not in (2, 3) or xd.shape[-1] != cin:
        raise ShapeError(f"conv1d_same: input {xd.shape} does not match kernel {kd.shape}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv1d_same: bias {bias.data.shape} does not match c_out {cout}")

    two_d = xd.ndim == 2
    if cols is None:
        cols = conv_columns(xd, width)
    batch, n, _ = cols.shape
    flat = cols.reshape(batch * n, width * cin)
    out = flat @ kd.reshape(width * cin, cout)
    out += bias.data
    out = out.reshape(batch, n, cout)
    if two_d:
        out = out[0]

    def bw(g):
        g2 = (g if not two_d else g[None]).reshape(batch * n, cout)
        if kernel.requires_grad:
            _acc(kernel, (flat.T @ g2).reshape(width, cin, cout), own=True)
        if bias.requires_grad:
            _acc(bias, g2.sum(axis=0), own=True)
        if x.requires_grad:
            dcols = (g2 @ kd.reshape(width * cin, cout).T).reshape(batch, n, width * cin)
            pad = width // 2
            dx = dcols[:, :, pad * cin:(pad + 1) * cin].copy()
            for d in range(width):
                off = d - pad  # cols block d read x[:, i+off]
                if off == 0:
                    continue
                lo, hi = max(0, -off), min(n, n - off)
                dx[:, lo + off:hi + off] += dcols[:, lo:hi, d * cin:(d + 1) * cin]
            _acc(x, dx[0] if two_d else dx, own=True)

    return _make(out, (x, kernel, bias), bw)


def depthwise_shift(x: Tensor, split: tuple[int, int, int]) -> Tensor:
    """Shift each map group by one position along the sequence axis.

    split = (stay, from_left, from_right) counts over contiguous map groups:
    stay maps keep position (filter [0,1,0]), from_left maps read their left
    neighbour (right shift, filter [1,0,0]) and from_right maps read their
    right neighbour (left shift, filter [0,0,1]).  Vacated ends become zero.
    """
    stay, from_left, from_right = split
    xd = x.data
    two_d = xd.ndim == 2
    x3 = xd[None] if two_d else xd
    m = x3.shape[2]
    if stay < 0 or from_left < 0 or from_right < 0 or stay + from_left + from_right != m:
        raise ShapeError(f"depthwise_shift: split {split} does not partition {m} maps")
    a, b = stay, stay + from_left

    out = x3.copy()
    out[:, 0, a:b] = 0.0
    out[:, 1:, a:b] = x3[:, :-1, a:b]
    out[:, -1, b:] = 0.0
    out[:, :-1, b:] = x3[:, 1:, b:]

    def bw(g):
        g3 = g[None] if two_d else g
        gx = g3.copy()
        gx[:, -1, a:b] = 0.0
        gx[:, :-1, a:b] = g3[:, 1:, a:b]
        gx[:, 0, b:] = 0.0
        gx[:, 1:, b:] = g3[:, :-1, b:]
        _acc(x, gx[0] if two_d else gx, own=True)

    return _make(out[0] if two_d else out, (x,), bw)


def affine_last(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias applied to the trailing axis: [..., m] -> [..., v]."""
    m, v = weight.data.shape
    if x.data.shape[-1] != m or bias.data.shape != (v,):
        raise ShapeError(
            f"affine_last: x {x.data.shape}, weight {weight.data.shape}, bias {bias.data.shape}")
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, m)
    out = (x2 @ weight.data + bias.data).reshape(lead + (v,))

    def bw(g):
        g2 = g.reshape(-1, v)
        if weight.requires_grad:
            _acc(weight, x2.T @ g2, own=True)
        if bias.requires_grad:
            _acc(bias, g2.sum(axis=0), own=True)
        if x.requires_grad:
            _acc(x, (g2 @ weight.data.T).reshape(x.data.shape), own=True)

    return _make(out, (x, weight, bias), bw)


def embed_rows(table: Tensor, tokens: np.ndarray) -> Tensor:
    """Gather rows of table: tokens [..., n] -> [..., n, m]."""
    tok = np.asarray(tokens)
    vocab = table.data.shape[0]
    if tok.size and (tok.min() < 0 or tok.max() >= vocab):
        raise DataError(f"token outside vocabulary [0, {vocab})")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, tok, g)
        _acc(table, gt, own=True)

    return _make(table.data[tok], (table,), bw)


def softmax_xent(logits: Tensor, targets: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy over positions plus a per-position correctness mask.

    Computed with max subtraction for stability; argmax ties break toward the
    lowest index.  Returns (scalar loss tensor, bool mask of correct argmaxes).
    """
    ld = logits.data
    vocab = ld.shape[-1]
    tok = np.asarray(targets)
    if tok.shape != ld.shape[:-1]:
        raise ShapeError(f"softmax_xent: targets {tok.shape} vs logits {ld.shape}")
    if tok.size and (tok.min() < 0 or tok.max() >= vocab):
        raise DataError(f"target token outside vocabulary [0, {vocab})")

    flat = ld.reshape(-1, vocab)
    count = flat.shape[0]
    z = flat - flat.max(axis=1, keepdims=True)
    ez = np.exp(z)
    se = ez.sum(axis=1, keepdims=True)
    tflat = tok.reshape(-1)
    rows = np.arange(count)
    logp = z[rows, tflat] - np.log(se[:, 0])
    loss = np.asarray(-logp.mean(dtype=np.float64), dtype=ld.dtype)
    correct = (np.argmax(flat, axis=1) == tflat).reshape(tok.shape)

    def bw(g):
        p = ez / se
        p[rows, tflat] -= 1.0
        p *= g / count
        _acc(logits, p.reshape(ld.shape).astype(ld.dtype, copy=False), own=True)

    return _make(loss, (logits,), bw), correct


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(build_loss, params, h: float = 1e-5, rng=None,
               max_coords: int = 8) -> float:
    """Compare analytic gradients against central finite differences.

    build_loss rebuilds the scalar loss from the params' current values and
    must be deterministic (freeze any dropout masks and loss weights).  A
    sampled coordinate is skipped when its two perturbed evaluations disagree
    on which side of a kink any hard-nonlinearity or hinge pre-activation
    lies, i.e. when the difference quotient straddles a non-smooth point.
    Returns the max of |analytic - fd| / max(|analytic|, |fd|, 1e-8) over the
    remaining coordinates.  Requires float64 parameters.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise UsageError(f"grad_check needs float64 parameters, {p.name} is {p.data.dtype}")
    if rng is None:
        rng = np.random.default_rng(0)

    for p in params:
        p.grad = None
    backward(build_loss())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def loss_value():
        with no_grad(), watch_kinks() as watch:
            value = float(build_loss().data)
        return value, watch.signature

    worst = 0.0
    for p, ag in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ag.reshape(-1)
        picks = rng.choice(flat.size, size=min(max_coords, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            lo_p, sig_p = loss_value()
            flat[i] = orig - h
            lo_m, sig_m = loss_value()
            flat[i] = orig
            if sig_p != sig_m:
                continue
            fd = (lo_p - lo_m) / (2.0 * h)
            err = abs(aflat[i] - fd) / max(abs(aflat[i]), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst
