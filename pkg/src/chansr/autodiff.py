"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays in a fixed global dtype (float32 by default,
float64 selectable for gradient verification). Each op records its parents
and a backward closure; ``backward`` on a scalar loss walks the graph in
reverse topological order and accumulates gradients.

Gradient conventions:
* leaf tensors created with ``requires_grad=True`` start with a zero grad
  buffer, so a parameter not reached by the loss keeps an all-zero gradient;
* repeated ``backward`` calls accumulate on leaves; intermediate grads are
  reset at the start of every call;
* ReLU derivative at exactly 0 is 0; max pooling routes its gradient to the
  first maximal element in row-major order.

Shape conventions: image-like ops accept [C,H,W] or batched [B,C,H,W];
``mse_loss`` always treats axis 0 as the batch axis.
"""

import contextlib

import numpy as np

from . import kernels

_default_dtype = np.float32
_grad_enabled = True
_check_finite = False


def set_default_dtype(dtype) -> None:
    """Set the dtype for newly created tensors: 'f32'/'f64' or a numpy dtype."""
    global _default_dtype
    named = {"f32": np.float32, "f64": np.float64}
    if isinstance(dtype, str):
        if dtype not in named:
            raise ValueError(f"unknown dtype {dtype!r}, expected 'f32' or 'f64'")
        _default_dtype = named[dtype]
        return
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError("default dtype must be float32 or float64")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


def set_check_finite(flag: bool) -> None:
    """When enabled, every op output is checked for NaN/Inf (FloatingPointError)."""
    global _check_finite
    _check_finite = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        self.requires_grad = bool(requires_grad)
        # zero-init so an unreached parameter reports a zero gradient, not None
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    # operator sugar; named module functions below carry the semantics
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __mul__(self, other):
        return mul_elementwise(self, _wrap(other, self))

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul_elementwise(_wrap(other, self), _wrap(-1.0, self)))

    def __rsub__(self, other):
        return add(_wrap(other, self), mul_elementwise(self, _wrap(-1.0, self)))

    def __neg__(self):
        return mul_elementwise(self, _wrap(-1.0, self))

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype), dtype=like.data.dtype)


def _check_same_dtype(*tensors: Tensor) -> None:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise TypeError(f"dtype mismatch: {dt.name} vs {t.data.dtype.name}")


def _make(data, parents, backward_fn) -> Tensor:
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in op output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = requires
    out._parents = tuple(parents) if requires else ()
    out._backward = backward_fn if requires else None
    return out


def _acc(t: Tensor, g) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}") from e
    out = _make(data, (a, b), None)

    def _bw():
        if a.requires_grad:
            _acc(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(out.grad, b.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}") from e
    out = _make(data, (a, b), None)

    def _bw():
        if a.requires_grad:
            _acc(a, _unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(out.grad * a.data, b.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # strict: derivative at 0 is 0
    out = _make(np.where(mask, x.data, x.data.dtype.type(0)), (x,), None)

    def _bw():
        if x.requires_grad:
            _acc(x, out.grad * mask)

    out._backward = _bw if out.requires_grad else None
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    out = _make(s, (x,), None)

    def _bw():
        if x.requires_grad:
            _acc(x, out.grad * s * (1.0 - s))

    out._backward = _bw if out.requires_grad else None
    return out


def tensor_sum(x: Tensor) -> Tensor:
    out = _make(x.data.sum(dtype=x.data.dtype).reshape(()), (x,), None)

    def _bw():
        if x.requires_grad:
            _acc(x, np.broadcast_to(out.grad, x.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def tensor_mean(x: Tensor) -> Tensor:
    n = x.data.dtype.type(x.data.size)
    out = _make((x.data.sum(dtype=x.data.dtype) / n).reshape(()), (x,), None)

    def _bw():
        if x.requires_grad:
            _acc(x, np.broadcast_to(out.grad / n, x.shape))

    out._backward = _bw if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# image-shaped ops ([C,H,W] or [B,C,H,W])
# ---------------------------------------------------------------------------

def _lift4d(data):
    if data.ndim == 3:
        return data[None], True
    if data.ndim == 4:
        return data, False
    raise ValueError(f"expected 3-D or 4-D tensor, got shape {data.shape}")


def conv2d(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Same-padded stride-1 cross-correlation: [.,C_in,H,W] -> [.,C_out,H,W]."""
    _check_same_dtype(x, w, bias)
    xd, squeezed = _lift4d(x.data)
    y = kernels.conv2d_forward(xd, w.data, bias.data)
    out = _make(y[0] if squeezed else y, (x, w, bias), None)

    def _bw():
        dy = out.grad[None] if squeezed else out.grad
        dx, dw, db = kernels.conv2d_backward(xd, w.data, np.ascontiguousarray(dy), need_dx=x.requires_grad)
        if x.requires_grad:
            _acc(x, dx[0] if squeezed else dx)
        if w.requires_grad:
            _acc(w, dw)
        if bias.requires_grad:
            _acc(bias, db)

    out._backward = _bw if out.requires_grad else None
    return out


def conv2d_transpose(x: Tensor, w: Tensor, bias: Tensor, stride) -> Tensor:
    """Fractionally strided convolution: [.,C_in,h,w] -> [.,C_out,(h-1)sH+kH,(w-1)sW+kW]."""
    _check_same_dtype(x, w, bias)
    stride = (int(stride[0]), int(stride[1]))
    xd, squeezed = _lift4d(x.data)
    y = kernels.deconv2d_forward(xd, w.data, bias.data, stride)
    out = _make(y[0] if squeezed else y, (x, w, bias), None)

    def _bw():
        dy = out.grad[None] if squeezed else out.grad
        dx, dw, db = kernels.deconv2d_backward(xd, w.data, np.ascontiguousarray(dy), stride, need_dx=x.requires_grad)
        if x.requires_grad:
            _acc(x, dx[0] if squeezed else dx)
        if w.requires_grad:
            _acc(w, dw)
        if bias.requires_grad:
            _acc(bias, db)

    out._backward = _bw if out.requires_grad else None
    return out


def crop2d(x: Tensor, height: int, width: int) -> Tensor:
    """Top-left crop of the two trailing spatial axes."""
    if x.data.shape[-2] < height or x.data.shape[-1] < width:
        raise ValueError(f"crop target ({height},{width}) exceeds input {x.shape}")
    out = _make(np.ascontiguousarray(x.data[..., :height, :width]), (x,), None)

    def _bw():
        if x.requires_grad:
            g = np.zeros_like(x.data)
            g[..., :height, :width] = out.grad
            _acc(x, g)

    out._backward = _bw if out.requires_grad else None
    return out


def pool_spatial(x: Tensor, kind: str) -> Tensor:
    """Reduce [.,C,H,W] over H and W to [.,C]; kind 'max' or 'avg'."""
    xd, _ = _lift4d(x.data)
    B, C, H, W = xd.shape
    flat = xd.reshape(B, C, H * W)
    squeezed = x.data.ndim == 3
    if kind == "avg":
        data = flat.mean(axis=2)
        out = _make(data[0] if squeezed else data, (x,), None)

        def _bw():
            if x.requires_grad:
                g = out.grad.reshape(B, C)[:, :, None, None] / x.data.dtype.type(H * W)
                g = np.broadcast_to(g, xd.shape)
                _acc(x, g[0] if squeezed else g)

    elif kind == "max":
        idx = flat.argmax(axis=2)  # first maximum in row-major order
        data = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]
        out = _make(data[0] if squeezed else data, (x,), None)

        def _bw():
            if x.requires_grad:
                g = np.zeros((B, C, H * W), dtype=x.data.dtype)
                np.put_along_axis(g, idx[:, :, None], out.grad.reshape(B, C, 1), axis=2)
                g = g.reshape(xd.shape)
                _acc(x, g[0] if squeezed else g)

    else:
        raise ValueError(f"pool kind must be 'max' or 'avg', got {kind!r}")
    out._backward = _bw if out.requires_grad else None
    return out


def pool_channel(x: Tensor, kind: str) -> Tensor:
    """Reduce [.,C,H,W] over the channel axis to [.,1,H,W]; kind 'max' or 'avg'."""
    xd, _ = _lift4d(x.data)
    B, C, H, W = xd.shape
    squeezed = x.data.ndim == 3
    if kind == "avg":
        data = xd.mean(axis=1, keepdims=True)
        out = _make(data[0] if squeezed else data, (x,), None)

        def _bw():
            if x.requires_grad:
                g = np.broadcast_to(out.grad.reshape(B, 1, H, W) / x.data.dtype.type(C), xd.shape)
                _acc(x, g[0] if squeezed else g)

    elif kind == "max":
        idx = xd.argmax(axis=1, keepdims=True)  # first maximum along channels
        data = np.take_along_axis(xd, idx, axis=1)
        out = _make(data[0] if squeezed else data, (x,), None)

        def _bw():
            if x.requires_grad:
                g = np.zeros_like(xd)
                np.put_along_axis(g, idx, out.grad.reshape(B, 1, H, W), axis=1)
                _acc(x, g[0] if squeezed else g)

    else:
        raise ValueError(f"pool kind must be 'max' or 'avg', got {kind!r}")
    out._backward = _bw if out.requires_grad else None
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis (third from the end)."""
    _check_same_dtype(a, b)
    if a.data.ndim != b.data.ndim or a.data.ndim not in (3, 4):
        raise ValueError(f"concat_channels: bad ranks {a.shape}, {b.shape}")
    axis = a.data.ndim - 3
    ca = a.data.shape[axis]
    out = _make(np.concatenate([a.data, b.data], axis=axis), (a, b), None)

    def _bw():
        ga, gb = np.split(out.grad, [ca], axis=axis)
        if a.requires_grad:
            _acc(a, ga)
        if b.requires_grad:
            _acc(b, gb)

    out._backward = _bw if out.requires_grad else None
    return out


def scale_channels(x: Tensor, g: Tensor) -> Tensor:
    """Multiply each channel of [.,C,H,W] by its gate in g of shape [.,C]."""
    _check_same_dtype(x, g)
    if g.data.ndim != x.data.ndim - 2 or g.data.shape != x.data.shape[:-2]:
        raise ValueError(f"scale_channels: gate shape {g.shape} does not match input {x.shape}")
    ge = g.data[..., None, None]
    out = _make(x.data * ge, (x, g), None)

    def _bw():
        if x.requires_grad:
            _acc(x, out.grad * ge)
        if g.requires_grad:
            _acc(g, (out.grad * x.data).sum(axis=(-2, -1)))

    out._backward = _bw if out.requires_grad else None
    return out


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over batch (axis 0) of the per-sample sum of squared differences."""
    _check_same_dtype(pred, target)
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    B = pred.data.shape[0]
    diff = pred.data - target.data
    dt = pred.data.dtype
    loss = (diff * diff).sum(dtype=dt) / dt.type(B)
    out = _make(np.asarray(loss, dtype=dt).reshape(()), (pred, target), None)

    def _bw():
        scale = out.grad * dt.type(2) / dt.type(B)
        if pred.requires_grad:
            _acc(pred, scale * diff)
        if target.requires_grad:
            _acc(target, -scale * diff)

    out._backward = _bw if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order  # parents before children; root last


def backward(loss: Tensor) -> None:
    """Populate grads of every reachable requires_grad tensor with ∂loss/∂t."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        if node._parents:  # leaves keep their grads (accumulation across calls)
            node.grad = None
    _acc(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
