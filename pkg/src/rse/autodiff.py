"""Dense-tensor engine with reverse-mode differentiation.

Exactly the operations the shuffle-exchange architecture needs, nothing
more: there is no general broadcasting engine, only the shapes the model
uses (matching tensors, a trailing feature vector against a batch of rows,
and python scalars). Values are numpy arrays; gradients are accumulated on
a `Tape` that replays recorded operations in exact reverse execution
order. Forward passes run without a tape (and without recording) when no
tape is active, which is how evaluation and benchmarks stay cheap.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DimensionError(ValueError):
    """Operand shapes are incompatible with the operation."""


class ValidationError(ValueError):
    """An argument violates an operation's precondition."""


class Tensor:
    """A dense array of real values plus its gradient buffer.

    `data` is always a numpy float array (float32 or float64). `grad` is
    populated by `Tape.backward` for every tensor with `requires_grad`,
    and always has the same shape as `data`.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic sugar used by the model code. Each delegates to the
    # module-level op so everything lands on the tape.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


_tapes = threading.local()


def _tape_stack():
    stack = getattr(_tapes, "stack", None)
    if stack is None:
        stack = []
        _tapes.stack = stack
    return stack


def active_tape():
    """The innermost tape on this thread, or None outside any tape."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed operations for one forward pass.

    Use as a context manager; operations executed inside record themselves
    when any input requires a gradient. `backward` replays the record in
    reverse, accumulating into each tensor's `grad`.
    """

    def __init__(self):
        self._entries = []  # (output, inputs, backward_fn)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._entries)

    def backward(self, root):
        """Populate grads of everything reachable from a scalar `root`."""
        if not isinstance(root, Tensor) or root.size != 1:
            raise ValidationError("backward root must be a scalar Tensor")
        if not any(out is root for out, _, _ in self._entries):
            raise ValidationError("root was not produced on this tape")
        root._accumulate(np.ones_like(root.data))
        for out, inputs, backward_fn in reversed(self._entries):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for tensor, g in zip(inputs, grads):
                if g is not None and tensor.requires_grad:
                    tensor._accumulate(g)


def _record(out, inputs, backward_fn):
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._entries.append((out, inputs, backward_fn))
    return out


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _binary_mode(a, b):
    """Classify the one allowed broadcast: equal shapes or a trailing vector."""
    if a.shape == b.shape:
        return "same"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "vec_b"
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return "vec_a"
    raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}")


def _reduce_to_vec(g, ndim_out):
    """Sum a full-shape gradient down to a trailing feature vector."""
    axes = tuple(range(g.ndim - 1)) if g.ndim > 1 else ()
    return g.sum(axis=axes) if axes else g


def add(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("add needs at least one Tensor")
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        out = Tensor(a.data + a.data.dtype.type(b))

        def bwd(g):
            return (g,)

        return _record(out, (a,), bwd)
    if not isinstance(a, Tensor) and np.isscalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    mode = _binary_mode(a.data, b.data)
    out = Tensor(a.data + b.data)

    def bwd(g):
        ga = g if mode != "vec_a" else _reduce_to_vec(g, a.ndim)
        gb = g if mode != "vec_b" else _reduce_to_vec(g, b.ndim)
        return (ga, gb)

    return _record(out, (a, b), bwd)


def sub(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return add(a, -b)
    if not isinstance(a, Tensor) and np.isscalar(a):
        a_val = a
        b = as_tensor(b)
        out = Tensor(a_val - b.data)

        def bwd(g):
            return (-g,)

        return _record(out, (b,), bwd)
    a, b = as_tensor(a), as_tensor(b)
    mode = _binary_mode(a.data, b.data)
    out = Tensor(a.data - b.data)

    def bwd(g):
        ga = g if mode != "vec_a" else _reduce_to_vec(g, a.ndim)
        gb = -g if mode != "vec_b" else -_reduce_to_vec(g, b.ndim)
        return (ga, gb)

    return _record(out, (a, b), bwd)


def mul(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        s = float(b)
        out = Tensor(a.data * a.data.dtype.type(s))

        def bwd(g):
            return (g * s,)

        return _record(out, (a,), bwd)
    if not isinstance(a, Tensor) and np.isscalar(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    mode = _binary_mode(a.data, b.data)
    out = Tensor(a.data * b.data)

    def bwd(g):
        ga = g * b.data
        gb = g * a.data
        if mode == "vec_a":
            ga = _reduce_to_vec(ga, a.ndim)
        elif mode == "vec_b":
            gb = _reduce_to_vec(gb, b.ndim)
        return (ga, gb)

    return _record(out, (a, b), bwd)


def affine(x, weight, bias=None):
    """y = x @ weight (+ bias) over the trailing feature axis.

    x: [..., p], weight: [p, q], bias: [q].
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2:
        raise DimensionError(f"weight must be 2-D, got {weight.shape}")
    p, q = weight.shape
    if x.shape[-1] != p:
        raise DimensionError(f"inner extents differ: x {x.shape} vs weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (q,):
            raise DimensionError(f"bias shape {bias.shape} != ({q},)")
    y = x.data @ weight.data
    if bias is not None:
        y = y + bias.data
    out = Tensor(y)

    def bwd(g):
        g2 = g.reshape(-1, q)
        x2 = x.data.reshape(-1, p)
        gx = (g @ weight.data.T) if x.requires_grad else None
        gw = (x2.T @ g2) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, inputs, bwd)


def layernorm_nogain(x, epsilon=1e-5):
    """Normalize the last axis to mean 0, population std 1; no gain or bias."""
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError("layernorm needs a non-empty last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(epsilon))
    y = (x.data - mu) * inv
    out = Tensor(y)

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _record(out, (x,), bwd)


def gelu(x):
    """x * Phi(x) with the exact normal CDF (erf form, not tanh)."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * x.data.dtype.type(_INV_SQRT2)))
    out = Tensor(x.data * cdf)

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * x.data.dtype.type(_INV_SQRT2PI)
        return (g * (cdf + x.data * pdf),)

    return _record(out, (x,), bwd)


def relu(x):
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0))

    def bwd(g):
        return (g * (x.data > 0),)

    return _record(out, (x,), bwd)


def sigmoid(x):
    """Elementwise 1 / (1 + exp(-x)), computed in the stable branch."""
    x = as_tensor(x)
    pos = x.data >= 0
    e = np.exp(np.where(pos, -x.data, x.data))
    s = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.data.dtype)
    out = Tensor(s)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return _record(out, (x,), bwd)


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)
    out = Tensor(t)

    def bwd(g):
        return (g * (1.0 - t * t),)

    return _record(out, (x,), bwd)


def _check_permutation(perm, n):
    perm = np.asarray(perm)
    if perm.shape != (n,) or not np.issubdtype(perm.dtype, np.integer):
        raise ValidationError(f"perm must be {n} integer indices")
    if perm.min() < 0 or perm.max() >= n or np.bincount(perm, minlength=n).max() != 1:
        raise ValidationError("perm is not a bijection on [0, n)")
    return perm


def permute_seq(x, perm):
    """Route sequence rows: out[perm[a]] = x[a] along the second-to-last axis.

    The gradient flows back through the inverse map (a scatter forward is a
    gather backward, so no explicit inverse is built).
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("permute_seq expects [..., n, m]")
    n = x.shape[-2]
    perm = _check_permutation(perm, n)
    y = np.empty_like(x.data)
    y[..., perm, :] = x.data
    out = Tensor(y)

    def bwd(g):
        return (g[..., perm, :],)

    return _record(out, (x,), bwd)


def conv1d_strided(x, kernel, stride, bias=None):
    """Strided cross-correlation over the sequence axis with "same" zero padding.

    x: [..., n, cin], kernel: [w, cin, cout], output: [..., ceil(n/stride), cout].
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3:
        raise DimensionError(f"kernel must be [w, cin, cout], got {kernel.shape}")
    if x.ndim < 2:
        raise DimensionError("input must be [..., n, cin]")
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    w, cin, cout = kernel.shape
    n = x.shape[-2]
    if x.shape[-1] != cin:
        raise DimensionError(f"channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"bias shape {bias.shape} != ({cout},)")
    out_len = -(-n // stride)
    total_pad = max((out_len - 1) * stride + w - n, 0)
    pad_l = total_pad // 2
    pad_r = total_pad - pad_l
    if w > n + total_pad:
        raise DimensionError(f"kernel width {w} exceeds padded input length {n + total_pad}")
    pad_spec = [(0, 0)] * (x.ndim - 2) + [(pad_l, pad_r), (0, 0)]
    xp = np.pad(x.data, pad_spec)
    # im2col: gather windows then one GEMM per pass
    starts = np.arange(out_len) * stride
    cols = np.stack([xp[..., starts + j, :] for j in range(w)], axis=-2)  # [..., out, w, cin]
    lead = cols.shape[:-2]
    y = cols.reshape(*lead, w * cin) @ kernel.data.reshape(w * cin, cout)
    if bias is not None:
        y = y + bias.data
    out = Tensor(y)

    def bwd(g):
        gcols = (g @ kernel.data.reshape(w * cin, cout).T).reshape(*lead, w, cin)
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(w):
                gxp[..., starts + j, :] += gcols[..., j, :]
            gx = gxp[..., pad_l : pad_l + n, :]
        gk = None
        if kernel.requires_grad:
            gk = (
                cols.reshape(-1, w * cin).T @ g.reshape(-1, cout)
            ).reshape(w, cin, cout)
        gb = g.reshape(-1, cout).sum(axis=0) if bias is not None and bias.requires_grad else None
        return (gx, gk) if bias is None else (gx, gk, gb)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _record(out, inputs, bwd)


def softmax_xent(logits, labels, mask):
    """Mask-weighted mean of -log softmax(logits)[label], one class per row.

    logits: [..., C]; labels and mask cover the leading axes. Masked-out
    rows contribute nothing to the value or the gradient.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=logits.data.dtype)
    C = logits.shape[-1]
    if labels.shape != logits.shape[:-1] or mask.shape != labels.shape:
        raise DimensionError(
            f"labels/mask {labels.shape}/{mask.shape} must match logit rows {logits.shape[:-1]}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError("labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValidationError(f"labels must lie in [0, {C})")
    total = mask.sum()
    if total <= 0:
        raise ValidationError("mask selects no positions")
    z2 = logits.data.reshape(-1, C)
    lab = labels.reshape(-1)
    m = mask.reshape(-1)
    zmax = z2.max(axis=-1, keepdims=True)
    ez = np.exp(z2 - zmax)
    logZ = np.log(ez.sum(axis=-1)) + zmax[:, 0]
    nll = logZ - z2[np.arange(z2.shape[0]), lab]
    out = Tensor(np.asarray((nll * m).sum() / total, dtype=logits.data.dtype))

    def bwd(g):
        p = ez / ez.sum(axis=-1, keepdims=True)
        p[np.arange(z2.shape[0]), lab] -= 1.0
        p *= (m / total)[:, None]
        return ((g * p).reshape(logits.shape),)

    return _record(out, (logits,), bwd)


def embedding_lookup(table, ids):
    """Gather rows of `table` by integer id; scatter-add on backward."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise DimensionError("table must be [vocab, features]")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValidationError("ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValidationError("ids out of vocabulary range")
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _record(out, (table,), bwd)


def reshape(x, shape):
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.shape),)

    return _record(out, (x,), bwd)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, tuple(tensors), bwd)


def slice_axis(x, axis, start, stop):
    x = as_tensor(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(x.data[idx].copy())

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _record(out, (x,), bwd)


def sum_all(x):
    x = as_tensor(x)
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype))

    def bwd(g):
        return (g * np.ones_like(x.data),)

    return _record(out, (x,), bwd)


def mean_all(x):
    x = as_tensor(x)
    out = Tensor(np.asarray(x.data.mean(), dtype=x.data.dtype))

    def bwd(g):
        return (g * np.full_like(x.data, 1.0 / x.size),)

    return _record(out, (x,), bwd)


def gradcheck(f, point, step=1e-4):
    """Max relative error between taped gradients and central differences.

    `f` maps the tensors in `point` to a scalar Tensor. Error per
    coordinate is |analytic - numeric| / (|analytic| + |numeric| + 1e-8);
    the max over all coordinates of all inputs is returned. Run in double
    precision; single precision has too little headroom for step 1e-4.
    """
    if isinstance(point, Tensor):
        point = [point]
    point = list(point)
    for t in point:
        t.requires_grad = True
        t.zero_grad()
    with Tape() as tape:
        loss = f(*point)
        tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in point]

    def eval_at():
        with Tape():
            return float(f(*point).data)

    worst = 0.0
    for t, a in zip(point, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = eval_at()
            flat[i] = keep - step
            down = eval_at()
            flat[i] = keep
            numeric = (up - down) / (2.0 * step)
            err = abs(aflat[i] - numeric) / (abs(aflat[i]) + abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst
