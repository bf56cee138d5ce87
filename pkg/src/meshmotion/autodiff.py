"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: every operation involving a tracked ``Tensor`` records itself
on that tensor's ``Tape``; ``backward`` replays the records in reverse to
accumulate gradients into the tape's registered leaves. Operations whose
inputs are all plain arrays fold to plain arrays, keeping graphs small.

All arithmetic runs in float64; a tape is confined to one logical thread of
execution and is rebuilt for every new evaluation.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "absolute",
    "add",
    "backward",
    "bilinear",
    "clamp_min",
    "cos",
    "cosine_similarity",
    "cosine_similarity_rows",
    "div",
    "dot",
    "embed",
    "finite_diff_check",
    "gather_rows",
    "matmul",
    "mul",
    "neg",
    "normalize",
    "reshape",
    "scatter_rows",
    "sin",
    "skew3",
    "slice_of",
    "sqrt",
    "sub",
    "tanh",
    "tensor_mean",
    "tensor_sum",
    "transpose",
]


def _asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A node in the recorded graph: value plus accumulated gradient."""

    __slots__ = ("tape", "data", "grad", "_parents", "_vjp", "is_leaf", "name")

    # make ndarray <op> Tensor dispatch to our reflected operators
    __array_ufunc__ = None

    def __init__(self, tape, data, parents=(), vjp=None, is_leaf=False, name=None):
        self.tape = tape
        self.data = _asarray(data)
        self.grad = None
        self._parents = parents
        self._vjp = vjp
        self.is_leaf = is_leaf
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # arithmetic sugar; right-variants cover ndarray-first expressions
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

    def __getitem__(self, key):
        return slice_of(self, key)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Ordered record of operations plus the leaf parameter registry."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self.leaves: list[Tensor] = []

    def leaf(self, data, name=None) -> Tensor:
        t = Tensor(self, data, is_leaf=True, name=name)
        self.leaves.append(t)
        self._nodes.append(t)
        return t

    def constant(self, data) -> Tensor:
        """Wrap data as an untracked tensor (no gradient flows into it)."""
        return Tensor(self, data)

    def _record(self, data, parents, vjp) -> Tensor:
        out = Tensor(self, data, parents=parents, vjp=vjp)
        self._nodes.append(out)
        return out


def _tape_of(*args):
    for a in args:
        if isinstance(a, Tensor):
            return a.tape
    return None


def _data(x):
    return x.data if isinstance(x, Tensor) else _asarray(x)


def _record_op(data, inputs, vjps):
    """Record an op whose i-th vjp maps the output gradient to input i's gradient.

    ``inputs``/``vjps`` are parallel; entries for untracked inputs are skipped.
    Returns a plain array when no input is tracked.
    """
    tape = _tape_of(*inputs)
    if tape is None:
        return data
    parents = []
    kept = []
    for x, fn in zip(inputs, vjps):
        if isinstance(x, Tensor) and fn is not None:
            parents.append(x)
            kept.append(fn)
    return tape._record(data, tuple(parents), tuple(kept))


def _sum_to_shape(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    ad, bd = _data(a), _data(b)
    out = ad + bd
    return _record_op(
        out,
        (a, b),
        (lambda g: _sum_to_shape(g, ad.shape), lambda g: _sum_to_shape(g, bd.shape)),
    )


def sub(a, b):
    ad, bd = _data(a), _data(b)
    out = ad - bd
    return _record_op(
        out,
        (a, b),
        (lambda g: _sum_to_shape(g, ad.shape), lambda g: _sum_to_shape(-g, bd.shape)),
    )


def mul(a, b):
    ad, bd = _data(a), _data(b)
    out = ad * bd
    return _record_op(
        out,
        (a, b),
        (
            lambda g: _sum_to_shape(g * bd, ad.shape),
            lambda g: _sum_to_shape(g * ad, bd.shape),
        ),
    )


def div(a, b):
    ad, bd = _data(a), _data(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def vjp_a(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return _sum_to_shape(g / bd, ad.shape)

    def vjp_b(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return _sum_to_shape(-g * ad / (bd * bd), bd.shape)

    return _record_op(out, (a, b), (vjp_a, vjp_b))


def neg(a):
    return _record_op(-_data(a), (a,), (lambda g: -g,))


def absolute(a):
    """Elementwise |x|; the subgradient at 0 is defined as 0."""
    ad = _data(a)
    sign = np.sign(ad)
    return _record_op(np.abs(ad), (a,), (lambda g: g * sign,))


def sqrt(a):
    """Elementwise square root; the subgradient at 0 is defined as 0."""
    ad = _data(a)
    out = np.sqrt(ad)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(out == 0.0, 0.0, g / (2.0 * out))

    return _record_op(out, (a,), (vjp,))


def sin(a):
    ad = _data(a)
    return _record_op(np.sin(ad), (a,), (lambda g: g * np.cos(ad),))


def cos(a):
    ad = _data(a)
    return _record_op(np.cos(ad), (a,), (lambda g: -g * np.sin(ad),))


def tanh(a):
    ad = _data(a)
    out = np.tanh(ad)
    return _record_op(out, (a,), (lambda g: g * (1.0 - out * out),))


def clamp_min(a, floor: float):
    """max(x, floor); gradient passes where x >= floor."""
    ad = _data(a)
    mask = ad >= floor
    return _record_op(np.maximum(ad, floor), (a,), (lambda g: g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape ops


def tensor_sum(a, axis=None, keepdims=False):
    ad = _data(a)
    out = ad.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is None:
            return np.broadcast_to(g, ad.shape).copy()
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % ad.ndim for ax in axes)
            shape = [1 if i in axes else s for i, s in enumerate(ad.shape)]
            g = g.reshape(shape)
        return np.broadcast_to(g, ad.shape).copy()

    return _record_op(out, (a,), (vjp,))


def tensor_mean(a, axis=None, keepdims=False):
    ad = _data(a)
    if axis is None:
        count = ad.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= ad.shape[ax % ad.ndim]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    ad = _data(a)
    return _record_op(ad.reshape(shape), (a,), (lambda g: g.reshape(ad.shape),))


def transpose(a):
    ad = _data(a)
    return _record_op(ad.T, (a,), (lambda g: g.T,))


def slice_of(a, key):
    """Basic indexing (ints/slices); gradient embeds back into the full shape."""
    ad = _data(a)

    def vjp(g):
        full = np.zeros_like(ad)
        full[key] = g
        return full

    return _record_op(ad[key].copy(), (a,), (vjp,))


def embed(a, shape, key):
    """Place ``a`` into a zero array of ``shape`` at basic index ``key``."""
    ad = _data(a)
    out = np.zeros(shape, dtype=np.float64)
    out[key] = ad
    return _record_op(out, (a,), (lambda g: g[key].copy(),))


def gather_rows(a, idx):
    """Select rows by an integer index array; gradient scatter-adds."""
    ad = _data(a)
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        full = np.zeros_like(ad)
        np.add.at(full, idx, g)
        return full

    return _record_op(ad[idx], (a,), (vjp,))


def scatter_rows(base, idx, rows):
    """Copy of ``base`` with ``base[idx] = rows``; ``idx`` must be unique."""
    bd, rd = _data(base), _data(rows)
    idx = np.asarray(idx, dtype=np.int64)
    out = bd.copy()
    out[idx] = rd

    def vjp_base(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb

    return _record_op(out, (base, rows), (vjp_base, lambda g: g[idx].copy()))


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    if ad.ndim != 2 or bd.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {ad.shape} @ {bd.shape}")
    return _record_op(ad @ bd, (a, b), (lambda g: g @ bd.T, lambda g: ad.T @ g))


# ---------------------------------------------------------------------------
# geometry-flavoured composites


def skew3(r):
    """3-vector to skew-symmetric cross-product matrix (linear)."""
    rd = _data(r)
    out = np.array(
        [
            [0.0, -rd[2], rd[1]],
            [rd[2], 0.0, -rd[0]],
            [-rd[1], rd[0], 0.0],
        ]
    )

    def vjp(g):
        return np.array(
            [g[2, 1] - g[1, 2], g[0, 2] - g[2, 0], g[1, 0] - g[0, 1]]
        )

    return _record_op(out, (r,), (vjp,))


def dot(a, b):
    return tensor_sum(mul(a, b))


def normalize(a, eps: float = 1e-30):
    """x / max(||x||, eps) over the full array."""
    nrm = sqrt(tensor_sum(mul(a, a)))
    return div(a, clamp_min(nrm, eps))


def cosine_similarity(a, b, eps: float = 1e-30):
    """Whole-array cosine similarity (flattened) -> scalar."""
    num = tensor_sum(mul(a, b))
    na = sqrt(tensor_sum(mul(a, a)))
    nb = sqrt(tensor_sum(mul(b, b)))
    return div(num, clamp_min(mul(na, nb), eps))


def cosine_similarity_rows(a, b, eps: float = 1e-30):
    """Row-wise cosine similarity of two (K, D) arrays -> (K,)."""
    num = tensor_sum(mul(a, b), axis=-1)
    na = sqrt(tensor_sum(mul(a, a), axis=-1))
    nb = sqrt(tensor_sum(mul(b, b), axis=-1))
    return div(num, clamp_min(mul(na, nb), eps))


def bilinear(map_hwd, locs):
    """Differentiable bilinear sampling of an (H, W, D) map at (K, 2) locations.

    Matches ``mesh.bilinear_sample``: texel (i, j) lives at (x=j, y=i) and
    out-of-bounds locations clamp to the border (zero location-gradient there).
    """
    md = _data(map_hwd)
    ld = _data(locs)
    h, w, d = md.shape
    x = np.clip(ld[:, 0], 0.0, w - 1.0)
    y = np.clip(ld[:, 1], 0.0, h - 1.0)
    inside_x = (ld[:, 0] >= 0.0) & (ld[:, 0] <= w - 1.0)
    inside_y = (ld[:, 1] >= 0.0) & (ld[:, 1] <= h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    m00 = md[y0, x0]
    m01 = md[y0, x1]
    m10 = md[y1, x0]
    m11 = md[y1, x1]
    top = (1.0 - fx) * m00 + fx * m01
    bot = (1.0 - fx) * m10 + fx * m11
    out = (1.0 - fy) * top + fy * bot

    def vjp_map(g):
        full = np.zeros_like(md)
        np.add.at(full, (y0, x0), (1.0 - fx) * (1.0 - fy) * g)
        np.add.at(full, (y0, x1), fx * (1.0 - fy) * g)
        np.add.at(full, (y1, x0), (1.0 - fx) * fy * g)
        np.add.at(full, (y1, x1), fx * fy * g)
        return full

    def vjp_locs(g):
        dx = ((1.0 - fy) * (m01 - m00) + fy * (m11 - m10)) * g
        dy = ((1.0 - fx) * (m10 - m00) + fx * (m11 - m01)) * g
        gl = np.zeros_like(ld)
        gl[:, 0] = dx.sum(axis=-1) * inside_x
        gl[:, 1] = dy.sum(axis=-1) * inside_y
        return gl

    return _record_op(out, (map_hwd, locs), (vjp_map, vjp_locs))


# ---------------------------------------------------------------------------
# backward sweep and the finite-difference oracle


def backward(tape: Tape, loss: Tensor) -> dict:
    """Gradients of a scalar loss w.r.t. every registered leaf.

    Unused leaves get zero gradients. Raises on non-scalar losses and on
    non-finite values encountered in the loss or the leaf gradients.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise ValueError("loss must be a Tensor recorded on this tape")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("non-finite loss value")

    for node in tape._nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.data)

    for node in reversed(tape._nodes):
        if node.grad is None or node._vjp is None:
            continue
        g = node.grad
        for parent, fn in zip(node._parents, node._vjp):
            contrib = fn(g)
            if parent.grad is None:
                parent.grad = np.array(contrib, dtype=np.float64, copy=True)
            else:
                parent.grad += contrib

    grads = {}
    for leaf in tape.leaves:
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient for leaf {leaf.name or '<unnamed>'}"
            )
        grads[leaf] = g
    return grads


def _eval_scalar(f, point_data: np.ndarray) -> float:
    tape = Tape()
    out = f(tape.leaf(point_data))
    return float(_data(out))


def finite_diff_check(f, point, h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps one Tensor to a scalar. Errors are normalized by the largest
    gradient magnitude seen (floored at 1e-12), so zero-gradient functions
    report exactly 0.
    """
    point_data = _data(point).copy()
    tape = Tape()
    leaf = tape.leaf(point_data)
    loss = f(leaf)
    analytic = backward(tape, loss)[leaf]

    numeric = np.zeros_like(point_data)
    flat = point_data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _eval_scalar(f, point_data)
        flat[i] = orig - h
        fm = _eval_scalar(f, point_data)
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * h)

    diff = np.abs(analytic - numeric).max()
    if diff == 0.0:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(diff / scale)
