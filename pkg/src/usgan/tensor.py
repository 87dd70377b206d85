"""Dense n-d tensors with reverse-mode automatic differentiation.

Every operation needed by the generator/discriminator/classifier networks
is defined here: elementwise arithmetic, matmul, conv2d and its transpose,
max-pooling, activations, reductions, concatenation and batch norm.
Tensors wrap a NumPy array; the graph is built eagerly whenever an input
requires gradients.

Broadcasting is deliberately limited to scalar-vs-tensor (plus the named
bias helpers); anything else must be reshaped explicitly.
"""

from __future__ import annotations

import numpy as np

from . import kernels

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A numeric array with optional gradient and graph linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bw", "op_kind")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._bw = None
        self.op_kind = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data, parents, bw, op_kind):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._bw = bw
            out.op_kind = op_kind
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self.op_kind})"

    def detach(self):
        """A view of the same data cut loose from the graph."""
        out = Tensor(self.data)
        return out

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data.reshape(-1)[0])

    # -- autodiff -------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable tensor
        with ``requires_grad``.  ``self`` must hold a single element.
        Repeated calls accumulate unless grads are zeroed in between."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar tensor, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        flowing = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad = node.grad + g
            if node._bw is None:
                continue
            for parent, pg in zip(node._parents, node._bw(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flowing.get(id(parent))
                flowing[id(parent)] = pg if acc is None else acc + pg

    # -- elementwise ----------------------------------------------------------

    def _coerce(self, other, opname):
        if isinstance(other, Tensor):
            if other.shape != self.shape and other.size != 1:
                raise ShapeError(
                    f"{opname}: shapes {self.shape} and {other.shape} differ "
                    "(only scalar-vs-tensor broadcasting is supported)"
                )
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        b = self._coerce(other, "add")

        def bw(g):
            return g, g.sum().reshape(b.shape) if b.size == 1 else g

        return Tensor._result(self.data + b.data, (self, b), bw, "add")

    __radd__ = __add__

    def __sub__(self, other):
        b = self._coerce(other, "sub")

        def bw(g):
            return g, (-g).sum().reshape(b.shape) if b.size == 1 else -g

        return Tensor._result(self.data - b.data, (self, b), bw, "sub")

    def __mul__(self, other):
        b = self._coerce(other, "mul")

        def bw(g):
            ga = g * b.data
            gb = g * self.data
            if b.size == 1:
                gb = gb.sum().reshape(b.shape)
            return ga, gb

        return Tensor._result(self.data * b.data, (self, b), bw, "mul")

    __rmul__ = __mul__

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def scale(self, s):
        """Multiply by a python scalar."""
        return self * float(s)

    def log(self):
        """Natural log with the argument floored at ``LOG_FLOOR``.

        Gradient is 1/x where x is above the floor and 0 below it."""
        clamped = np.maximum(self.data, LOG_FLOOR)

        def bw(g):
            return (np.where(self.data >= LOG_FLOOR, g / clamped, 0.0),)

        return Tensor._result(np.log(clamped), (self,), bw, "log")

    def clamp(self, floor=None, ceil=None):
        out = np.clip(self.data, floor, ceil)
        mask = np.ones_like(self.data)
        if floor is not None:
            mask = mask * (self.data > floor)
        if ceil is not None:
            mask = mask * (self.data < ceil)

        def bw(g):
            return (g * mask,)

        return Tensor._result(out, (self,), bw, "clamp")

    # -- shape plumbing -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape

        def bw(g):
            return (g.reshape(old),)

        return Tensor._result(self.data.reshape(shape), (self,), bw, "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def bw(g):
            return (np.ascontiguousarray(g.transpose(inv)),)

        return Tensor._result(
            np.ascontiguousarray(self.data.transpose(axes)), (self,), bw, "transpose"
        )

    # -- linear algebra -------------------------------------------------------

    def matmul(self, other):
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ShapeError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

        def bw(g):
            return g @ b.data.T, a.data.T @ g

        return Tensor._result(a.data @ b.data, (a, b), bw, "matmul")

    __matmul__ = matmul

    def bmm(self, other):
        """Batched 3-d matmul, (B,m,k) @ (B,k,n)."""
        a, b = self, other
        if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[2] != b.shape[1]:
            raise ShapeError(f"bmm shapes incompatible: {a.shape} @ {b.shape}")

        def bw(g):
            return g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g

        return Tensor._result(a.data @ b.data, (a, b), bw, "bmm")

    # -- reductions -----------------------------------------------------------

    def _reduce(self, kind, axes, keepdims):
        if axes is None:
            axes = tuple(range(self.data.ndim))
        elif isinstance(axes, int):
            axes = (axes,)
        else:
            axes = tuple(axes)
        for ax in axes:
            if not -self.data.ndim <= ax < self.data.ndim:
                raise ShapeError(f"reduce axis {ax} invalid for shape {self.shape}")
        n = int(np.prod([self.shape[a] for a in axes])) if axes else 1
        out = self.data.sum(axis=axes, keepdims=keepdims)
        if kind == "mean":
            out = out / n

        def bw(g):
            gg = g if keepdims else np.expand_dims(g, axes)
            gg = np.broadcast_to(gg, self.shape).astype(self.dtype)
            return (gg / n if kind == "mean" else gg.copy(),)

        return Tensor._result(out, (self,), bw, kind)

    def sum(self, axes=None, keepdims=False):
        return self._reduce("sum", axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return self._reduce("mean", axes, keepdims)

    # -- activations ----------------------------------------------------------

    def relu(self):
        mask = self.data > 0
        return Tensor._result(
            np.where(mask, self.data, 0), (self,), lambda g: (g * mask,), "relu"
        )

    def leaky_relu(self, alpha=0.2):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"leaky_relu slope must be in (0,1), got {alpha}")
        factor = np.where(self.data > 0, 1.0, alpha).astype(self.dtype)
        return Tensor._result(
            self.data * factor, (self,), lambda g: (g * factor,), "leaky_relu"
        )

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor._result(y, (self,), lambda g: (g * (1 - y * y),), "tanh")

    def sigmoid(self):
        y = np.where(
            self.data >= 0,
            1.0 / (1.0 + np.exp(-np.abs(self.data))),
            np.exp(-np.abs(self.data)) / (1.0 + np.exp(-np.abs(self.data))),
        ).astype(self.dtype)
        return Tensor._result(y, (self,), lambda g: (g * y * (1 - y),), "sigmoid")

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)

        def bw(g):
            return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

        return Tensor._result(y, (self,), bw, "softmax")

    # -- bias helpers (named broadcasts) --------------------------------------

    def add_bias(self, bias):
        """Add a (n,)-vector to every row of a (B,n) tensor."""
        if self.data.ndim != 2 or bias.shape != (self.shape[1],):
            raise ShapeError(f"add_bias: {self.shape} + {bias.shape}")

        def bw(g):
            return g, g.sum(axis=0)

        return Tensor._result(self.data + bias.data, (self, bias), bw, "add_bias")

    def add_channel_bias(self, bias):
        """Add a (C,)-vector across channel axis 1 of a (B,C,H,W) tensor."""
        if self.data.ndim != 4 or bias.shape != (self.shape[1],):
            raise ShapeError(f"add_channel_bias: {self.shape} + {bias.shape}")

        def bw(g):
            return g, g.sum(axis=(0, 2, 3))

        return Tensor._result(
            self.data + bias.data[None, :, None, None], (self, bias), bw, "channel_bias"
        )


# -- free functions -----------------------------------------------------------


def concat(parts, axis):
    """Concatenate tensors along ``axis``; all other extents must match."""
    if not parts:
        raise ShapeError("concat of an empty list")
    ref = parts[0].shape
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != axis
        ):
            raise ShapeError(f"concat: off-axis extents differ, {ref} vs {p.shape}")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(parts))
        )

    return Tensor._result(
        np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw, "concat"
    )


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-d cross-correlation of (B,Cin,H,W) with (Cout,Cin,kh,kw)."""
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channels: input {x.shape} vs weight {weight.shape}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than padded input {h}x{w} (pad {padding})"
        )
    oh = kernels.out_extent(h, kh, stride, padding)
    ow = kernels.out_extent(w, kw, stride, padding)
    cols = kernels.im2col(x.data, kh, kw, stride, padding)  # (B, L, Cin*kh*kw)
    wmat = weight.data.reshape(cout, -1)
    out = (cols @ wmat.T).transpose(0, 2, 1).reshape(b, cout, oh, ow)

    def bw(g):
        gmat = np.ascontiguousarray(
            g.reshape(b, cout, oh * ow).transpose(0, 2, 1)
        )  # (B, L, Cout)
        gx = kernels.col2im(gmat @ wmat, x.shape, kh, kw, stride, padding)
        gw = np.einsum("blo,blk->ok", gmat, cols).reshape(weight.shape)
        return gx, gw

    out_t = Tensor._result(out, (x, weight), bw, "conv2d")
    if bias is not None:
        out_t = out_t.add_channel_bias(bias)
    return out_t


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution: the adjoint of conv2d in its input,
    with weight laid out (Cin,Cout,kh,kw).

    Output extent is (H-1)*stride - 2*padding + kh."""
    b, cin, h, w = x.shape
    cin_w, cout, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(
            f"conv_transpose2d channels: input {x.shape} vs weight {weight.shape}"
        )
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (w - 1) * stride - 2 * padding + kw
    if oh <= 0 or ow <= 0:
        raise ShapeError(
            f"conv_transpose2d output extent {oh}x{ow} not positive for input "
            f"{h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    wmat = weight.data.reshape(cin, cout * kh * kw)
    xrows = np.ascontiguousarray(
        x.data.reshape(b, cin, h * w).transpose(0, 2, 1)
    )  # (B, L, Cin)
    cols = xrows @ wmat  # (B, L, Cout*kh*kw)
    out = kernels.col2im(cols, (b, cout, oh, ow), kh, kw, stride, padding)

    def bw(g):
        gcols = kernels.im2col(g, kh, kw, stride, padding)  # (B, L, Cout*kh*kw)
        gx = (gcols @ wmat.T).transpose(0, 2, 1).reshape(x.shape)
        gw = np.einsum("blc,blk->ck", xrows, gcols).reshape(weight.shape)
        return gx, gw

    out_t = Tensor._result(out, (x, weight), bw, "conv_transpose2d")
    if bias is not None:
        out_t = out_t.add_channel_bias(bias)
    return out_t


def maxpool2d(x, kernel, stride=None):
    """Windowed maximum; gradient flows to the first argmax per window."""
    stride = stride or kernel
    b, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"maxpool2d kernel {kernel} exceeds input {h}x{w}")
    oh = kernels.out_extent(h, kernel, stride, 0)
    ow = kernels.out_extent(w, kernel, stride, 0)
    cols = kernels.im2col(x.data, kernel, kernel, stride, 0)
    win = cols.reshape(b, oh * ow, c, kernel * kernel)
    idx = win.argmax(axis=3)  # first occurrence on ties
    out = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    out = out.transpose(0, 2, 1).reshape(b, c, oh, ow)

    def bw(g):
        gwin = np.zeros_like(win)
        gflat = g.reshape(b, c, oh * ow).transpose(0, 2, 1)[..., None]
        np.put_along_axis(gwin, idx[..., None], gflat, axis=3)
        return (
            kernels.col2im(
                gwin.reshape(b, oh * ow, c * kernel * kernel),
                x.shape,
                kernel,
                kernel,
                stride,
                0,
            ),
        )

    return Tensor._result(out, (x,), bw, "maxpool2d")


def batchnorm2d(
    x,
    scale,
    shift,
    running_mean,
    running_var,
    training,
    eps=1e-5,
    momentum=0.1,
):
    """Per-channel batch normalization over a (B,C,H,W) tensor.

    Train mode normalizes by batch statistics and updates the running
    buffers (NumPy arrays, mutated in place) with an exponential moving
    average; eval mode normalizes by the running statistics.
    """
    b, c, h, w = x.shape
    n = b * h * w
    if training and n < 2:
        raise ValueError(f"batchnorm2d train mode needs B*H*W >= 2, got {n}")
    gamma = scale.data[None, :, None, None]
    beta = shift.data[None, :, None, None]
    if training:
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        unbiased = var.reshape(c) * (n / max(n - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean[None, :, None, None]
        var = running_var[None, :, None, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma * xhat + beta

    def bw(g):
        g_gamma = (g * xhat).sum(axis=(0, 2, 3))
        g_beta = g.sum(axis=(0, 2, 3))
        gxh = g * gamma
        if training:
            gx = (
                inv_std
                / n
                * (
                    n * gxh
                    - gxh.sum(axis=(0, 2, 3), keepdims=True)
                    - xhat * (gxh * xhat).sum(axis=(0, 2, 3), keepdims=True)
                )
            )
        else:
            gx = gxh * inv_std
        return gx.astype(x.dtype), g_gamma, g_beta

    return Tensor._result(out.astype(x.dtype), (x, scale, shift), bw, "batchnorm2d")


def linear(x, weight, bias=None):
    """Affine map of (B,in) rows by a (in,out) weight."""
    out = x.matmul(weight)
    if bias is not None:
        out = out.add_bias(bias)
    return out


def sample_latent(batch, nz, rng):
    """Standard-normal latent vectors of shape (batch, nz)."""
    if nz <= 0:
        raise ValueError(f"latent size must be positive, got {nz}")
    return Tensor(rng.standard_normal((batch, nz)).astype(np.float32))
