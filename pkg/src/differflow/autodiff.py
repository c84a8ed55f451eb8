"""Reverse-mode automatic differentiation over dense numpy tensors.

Values are recorded on a tape as they are computed; :func:`backward` walks
the tape in reverse topological order and accumulates gradients into every
node it reaches, leaves included.  Arithmetic defaults to float32; building
leaves from float64 arrays switches the whole downstream computation to the
high-precision mode used by the numerical test oracles.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_FINITE_CHECKS = False


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN or Inf while finite checks were enabled."""


def set_finite_checks(enabled: bool) -> bool:
    """Toggle eager NaN/Inf detection after every primitive. Returns the old value."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return previous


def _check(data: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values after {op}")


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """A node of the computation tape: a dense array plus gradient plumbing.

    Construct leaves directly (`Tensor(data)`); every primitive below returns
    a new node wired to its parents.  `grad` is populated by `backward`.
    """

    __slots__ = ("data", "grad", "name", "_parents", "_grad_fn")

    def __init__(self, data, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None

    @classmethod
    def _op(cls, data: np.ndarray, parents: tuple["Tensor", ...], grad_fn, op: str) -> "Tensor":
        _check(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._parents = parents
        out._grad_fn = grad_fn
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), name=self.name)

    def backward(self, seed=None) -> None:
        backward(self, seed)

    def sum(self, axis=None) -> "Tensor":
        return reduce_sum(self, axis)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, name={self.name!r})"


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _match_dtypes(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ValueError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce `grad` back to `shape` by summing over broadcast axes."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "dtype", None) or DEFAULT_DTYPE)
    b = _wrap(b, a.dtype)
    _match_dtypes(a, b, "add")
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._op(data, (a, b), grad_fn, "add")


def mul(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "dtype", None) or DEFAULT_DTYPE)
    b = _wrap(b, a.dtype)
    _match_dtypes(a, b, "mul")
    data = a.data * b.data

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._op(data, (a, b), grad_fn, "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor._op(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def grad_fn(g):
        return (g * out_data,)

    return Tensor._op(out_data, (a,), grad_fn, "exp")


def arctan(a: Tensor) -> Tensor:
    def grad_fn(g):
        return (g / (1.0 + a.data * a.data),)

    return Tensor._op(np.arctan(a.data), (a,), grad_fn, "arctan")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask,)

    return Tensor._op(np.where(mask, a.data, 0), (a,), grad_fn, "relu")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _match_dtypes(a, b, "matmul")
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._op(data, (a, b), grad_fn, "matmul")


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)
        expanded = np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, a.shape).astype(a.dtype, copy=False),)

    return Tensor._op(np.asarray(data), (a,), grad_fn, "sum")


def sq_l2(a: Tensor) -> Tensor:
    """Squared L2 norm of all elements, as a scalar."""
    data = np.asarray((a.data * a.data).sum())

    def grad_fn(g):
        return (2.0 * a.data * g,)

    return Tensor._op(data, (a,), grad_fn, "sq_l2")


def permute(a: Tensor, indices) -> Tensor:
    """Reorder the last axis by a fixed index permutation."""
    idx = np.asarray(indices)
    if idx.shape != (a.shape[-1],):
        raise ValueError(f"permutation of length {idx.shape} does not match last axis {a.shape[-1]}")
    inv = np.argsort(idx)

    def grad_fn(g):
        return (g[..., inv],)

    return Tensor._op(a.data[..., idx], (a,), grad_fn, "permute")


def split(a: Tensor, parts: int) -> list[Tensor]:
    """Split the last axis into `parts` equal pieces."""
    size = a.shape[-1]
    if size % parts != 0:
        raise ValueError(f"cannot split axis of size {size} into {parts} equal parts")
    step = size // parts
    out = []
    for i in range(parts):
        lo = i * step

        def grad_fn(g, lo=lo):
            full = np.zeros(a.shape, dtype=a.dtype)
            full[..., lo:lo + step] = g
            return (full,)

        out.append(Tensor._op(a.data[..., lo:lo + step], (a,), grad_fn, "split"))
    return out


def concat(tensors: list[Tensor]) -> Tensor:
    if not tensors:
        raise ValueError("concat of zero tensors")
    for t in tensors[1:]:
        _match_dtypes(tensors[0], t, "concat")
    data = np.concatenate([t.data for t in tensors], axis=-1)
    sizes = [t.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(g[..., offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return Tensor._op(data, tuple(tensors), grad_fn, "concat")


def reshape(a: Tensor, shape) -> Tensor:
    def grad_fn(g):
        return (g.reshape(a.shape),)

    return Tensor._op(a.data.reshape(shape), (a,), grad_fn, "reshape")


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D convolution of a (C_in, H, W) image with (C_out, C_in, kh, kw) kernels."""
    _match_dtypes(x, w, "conv2d")
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError(f"conv2d expects (C,H,W) and (O,C,kh,kw), got {x.shape} and {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[0]} vs kernel {w.shape[1]}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    c_out, c_in, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d kernel {kh}x{kw} does not fit padded input {hp}x{wp}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, c_in * kh * kw)
    wmat = w.data.reshape(c_out, -1)
    out = (cols @ wmat.T).T.reshape(c_out, ho, wo)
    if b is not None:
        _match_dtypes(x, b, "conv2d")
        out = out + b.data[:, None, None]

    def grad_fn(g):
        gmat = g.reshape(c_out, -1)
        gw = (gmat @ cols).reshape(w.shape)
        gcols = gmat.T @ wmat
        gwin = gcols.reshape(ho, wo, c_in, kh, kw).transpose(2, 0, 1, 3, 4)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + sh * ho:sh, j:j + sw * wo:sw] += gwin[:, :, :, i, j]
        gx = gxp[:, ph:ph + x.shape[1], pw:pw + x.shape[2]]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._op(out, parents, grad_fn, "conv2d")


def maxpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """Max pooling over (C, H, W); windows that overrun the border are dropped."""
    if x.ndim != 3:
        raise ValueError(f"maxpool2d expects (C,H,W), got {x.shape}")
    s = k if stride is None else stride
    c, h, w = x.shape
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"maxpool2d window {k} does not fit input {h}x{w}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(1, 2))[:, ::s, ::s]
    flat = win.reshape(c, ho, wo, k * k)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        ci, hi, wi = np.indices((c, ho, wo))
        rows = hi * s + idx // k
        cols = wi * s + idx % k
        np.add.at(gx, (ci, rows, cols), g)
        return (gx,)

    return Tensor._op(np.ascontiguousarray(out), (x,), grad_fn, "maxpool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Average over the spatial axes of (C, H, W), giving (C,)."""
    if x.ndim != 3:
        raise ValueError(f"global_avg_pool expects (C,H,W), got {x.shape}")
    _, h, w = x.shape
    data = x.data.mean(axis=(1, 2))

    def grad_fn(g):
        return (np.broadcast_to(g[:, None, None] / (h * w), x.shape).astype(x.dtype, copy=False),)

    return Tensor._op(data, (x,), grad_fn, "global_avg_pool")


def _resize_taps(n_in: int, n_out: int, dtype):
    """Bilinear tap indices/weights, half-pixel centers, edges clamped."""
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(pos).astype(np.intp)
    frac = (pos - lo).astype(dtype)
    i0 = np.clip(lo, 0, n_in - 1)
    i1 = np.clip(lo + 1, 0, n_in - 1)
    return i0, i1, frac


def resize2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of (C, H, W) spatial axes; exact transpose as gradient."""
    if x.ndim != 3:
        raise ValueError(f"resize2d expects (C,H,W), got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("resize2d target size must be positive")
    c, h, w = x.shape
    r0, r1, rf = _resize_taps(h, out_h, x.dtype)
    c0, c1, cf = _resize_taps(w, out_w, x.dtype)
    rows = x.data[:, r0, :] * (1 - rf)[None, :, None] + x.data[:, r1, :] * rf[None, :, None]
    data = rows[:, :, c0] * (1 - cf)[None, None, :] + rows[:, :, c1] * cf[None, None, :]

    def grad_fn(g):
        grows = np.zeros((c, out_h, w), dtype=x.dtype)
        np.add.at(grows, (slice(None), slice(None), c0), g * (1 - cf)[None, None, :])
        np.add.at(grows, (slice(None), slice(None), c1), g * cf[None, None, :])
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), r0, slice(None)), grows * (1 - rf)[None, :, None])
        np.add.at(gx, (slice(None), r1, slice(None)), grows * rf[None, :, None])
        return (gx,)

    return Tensor._op(np.ascontiguousarray(data), (x,), grad_fn, "resize2d")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            stack.append((parent, False))
    return order


def backward(root: Tensor, seed=None) -> None:
    """Accumulate d(seed . root)/d(node) into `.grad` of every reachable node."""
    if seed is None:
        seed_arr = np.ones_like(root.data)
    else:
        seed_arr = np.asarray(seed, dtype=root.dtype)
        if seed_arr.shape != root.shape:
            raise ValueError(f"seed shape {seed_arr.shape} does not match output {root.shape}")
    tape = _topo_order(root)
    for node in tape:
        node.grad = None
    root.grad = seed_arr
    for node in reversed(tape):
        if node._grad_fn is None or node.grad is None:
            continue
        grads = node._grad_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            _check(g, "backward")
            if parent.grad is None:
                parent.grad = g.astype(parent.dtype, copy=True)
            else:
                parent.grad += g


class Graph:
    """Define-once computation over named inputs and parameters.

    `build(inputs, params)` wires primitives into a single output tensor; the
    topology must not depend on the data.  `evaluate` runs it on concrete
    arrays, `backward` returns gradients for every named leaf of the last run.
    """

    def __init__(self, build, parameters: dict | None = None):
        self._build = build
        self.parameters = {
            name: value if isinstance(value, Tensor) else Tensor(value, name=name)
            for name, value in (parameters or {}).items()
        }
        self._inputs: dict[str, Tensor] | None = None
        self._output: Tensor | None = None

    def evaluate(self, **inputs) -> Tensor:
        leaves = {
            name: value if isinstance(value, Tensor) else Tensor(value, name=name)
            for name, value in inputs.items()
        }
        self._inputs = leaves
        self._output = self._build(leaves, self.parameters)
        return self._output

    def backward(self, seed=None) -> dict[str, np.ndarray]:
        if self._output is None:
            raise RuntimeError("backward before evaluate")
        backward(self._output, seed)
        grads = {}
        for name, leaf in {**self.parameters, **(self._inputs or {})}.items():
            grads[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        return grads
