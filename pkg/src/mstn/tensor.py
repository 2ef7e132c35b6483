"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable op builds a :class:`Tensor` whose ``_backward`` closure
maps the upstream gradient to one gradient per parent.  ``backward`` walks the
graph once in reverse topological order and accumulates into ``.grad`` of
every tensor that requires it.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ConfigError",
    "tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sum_all",
    "conv2d",
    "conv_transpose2d",
    "global_avg_pool",
    "fully_connected",
    "softmax_pair",
    "l1_loss",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """An op was configured with geometry that yields no valid output."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: Sequence["Tensor"] = (),
        _backward: Optional[Callable] = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


def _result(data, parents, backward_fn, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum over axes that were broadcast to produce grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{name}: cannot combine shapes {a.shape} and {b.shape}") from exc


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
        "sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting (used for per-channel gating)."""
    _check_broadcast(a, b, "mul")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return _result(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sum_all(a: Tensor) -> Tensor:
    return _result(
        np.asarray(a.data.sum()),
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).copy(),),
        "sum",
    )


# ---------------------------------------------------------------------------
# convolution kernels on raw arrays


def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Padded input (N,C,Hp,Wp) -> columns (N*Ho*Wo, C*k*k)."""
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def _col2im(cols: np.ndarray, shape_padded: tuple, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back into a padded image."""
    n, c, hp, wp = shape_padded
    cols = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape_padded, dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            out[:, :, di : di + stride * (ho - 1) + 1 : stride, dj : dj + stride * (wo - 1) + 1 : stride] += cols[
                :, :, di, dj
            ]
    return out


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    n, _, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho, wo = _out_size(h, k, stride, padding), _out_size(wd, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _im2col(xp, k, stride, ho, wo)
    out = cols @ w.reshape(cout, -1).T
    return out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2), cols


def _conv_input_grad(g: np.ndarray, w: np.ndarray, in_hw: tuple, stride: int, padding: int) -> np.ndarray:
    """Gradient of conv2d w.r.t. its input; also the forward of the transposed conv."""
    n, cout, ho, wo = g.shape
    _, cin, k, _ = w.shape
    h, wd = in_hw
    gcols = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout) @ w.reshape(cout, -1)
    full = _col2im(gcols, (n, cin, h + 2 * padding, wd + 2 * padding), k, stride, ho, wo)
    return full[:, :, padding : padding + h, padding : padding + wd]


def _conv_weight_grad(g: np.ndarray, cols: np.ndarray, w_shape: tuple) -> np.ndarray:
    cout = w_shape[0]
    return (g.transpose(0, 2, 3, 1).reshape(-1, cout).T @ cols).reshape(w_shape)


def _check_conv(x: Tensor, w: Tensor, stride: int, padding: int, cin_axis: int, name: str) -> None:
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"{name}: expected 4-D input and weight, got {x.shape} and {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"{name}: kernel must be square, got {w.shape[2]}x{w.shape[3]}")
    if x.shape[1] != w.shape[cin_axis]:
        raise ShapeError(
            f"{name}: input has {x.shape[1]} channels but weight expects {w.shape[cin_axis]} (weight shape {w.shape})"
        )
    if stride < 1 or w.shape[2] < 1 or padding < 0:
        raise ConfigError(f"{name}: need k>=1, stride>=1, padding>=0 (k={w.shape[2]}, s={stride}, p={padding})")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N,Cin,H,W) with ``w`` (Cout,Cin,k,k)."""
    _check_conv(x, w, stride, padding, 1, "conv2d")
    k = w.shape[2]
    h, wd = x.shape[2:]
    ho, wo = _out_size(h, k, stride, padding), _out_size(wd, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ConfigError(f"conv2d: output size {ho}x{wo} from input {h}x{wd}, k={k}, s={stride}, p={padding}")
    out, cols = _conv_fwd(x.data, w.data, stride, padding)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)

    def _bw(g):
        gx = _conv_input_grad(g, w.data, (h, wd), stride, padding) if x.requires_grad else None
        gw = _conv_weight_grad(g, cols, w.shape) if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if b.requires_grad else None)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, _bw, "conv2d")


def conv_transpose2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`; ``w`` is laid out (Cin,Cout,k,k)."""
    _check_conv(x, w, stride, padding, 0, "conv_transpose2d")
    k = w.shape[2]
    h, wd = x.shape[2:]
    ho, wo = (h - 1) * stride - 2 * padding + k, (wd - 1) * stride - 2 * padding + k
    if ho < 1 or wo < 1:
        raise ConfigError(
            f"conv_transpose2d: output size {ho}x{wo} from input {h}x{wd}, k={k}, s={stride}, p={padding}"
        )
    out = _conv_input_grad(x.data, w.data, (ho, wo), stride, padding)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)

    def _bw(g):
        need_w = w.requires_grad
        if x.requires_grad or need_w:
            gx, gcols = _conv_fwd(g, w.data, stride, padding)
        grads = [gx if x.requires_grad else None, None]
        if need_w:
            # forward was x -> col2im(x @ W); dW = x^T @ cols(g)
            cin = w.shape[0]
            grads[1] = (x.data.transpose(0, 2, 3, 1).reshape(-1, cin).T @ gcols).reshape(w.shape)
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if b.requires_grad else None)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, _bw, "conv_transpose2d")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected (N,C,H,W), got {x.shape}")
    h, w = x.shape[2:]
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return _result(
        out,
        (x,),
        lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),),
        "global_avg_pool",
    )


def fully_connected(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Matrix product over the channel axis: (N,C,1,1) with w (D,C) -> (N,D,1,1)."""
    if x.data.ndim != 4 or x.shape[2:] != (1, 1):
        raise ShapeError(f"fully_connected: expected (N,C,1,1) input, got {x.shape}")
    if w.data.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"fully_connected: weight {w.shape} does not accept {x.shape[1]} channels")
    n, c = x.shape[:2]
    flat = x.data.reshape(n, c)
    out = flat @ w.data.T
    if b is not None:
        out = out + b.data
    d = w.shape[0]

    def _bw(g):
        g2 = g.reshape(n, d)
        grads = [(g2 @ w.data).reshape(x.shape), g2.T @ flat]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _result(out.reshape(n, d, 1, 1), parents, _bw, "fully_connected")


def softmax_pair(la: Tensor, lb: Tensor) -> tuple[Tensor, Tensor]:
    """Two-way softmax taken elementwise across a pair of logit tensors."""
    if la.shape != lb.shape:
        raise ShapeError(f"softmax_pair: logit shapes differ {la.shape} vs {lb.shape}")
    m = np.maximum(la.data, lb.data)
    ea, eb = np.exp(la.data - m), np.exp(lb.data - m)
    tot = ea + eb
    a = ea / tot
    b = eb / tot

    # da/dla = a*b, da/dlb = -a*b; b = 1 - a
    def _bw_a(g):
        t = g * a * b
        return t, -t

    def _bw_b(g):
        t = g * a * b
        return -t, t

    return _result(a, (la, lb), _bw_a, "softmax_a"), _result(b, (la, lb), _bw_b, "softmax_b")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; the subgradient at zero is zero."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shapes differ {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    sign = np.sign(diff)

    def _bw(g):
        gd = sign * (g / n)
        return gd, -gd

    return _result(np.asarray(np.abs(diff).mean()), (pred, target), _bw, "l1_loss")


# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every leaf with ``requires_grad``."""
    if root.data.size != 1:
        raise ValueError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
