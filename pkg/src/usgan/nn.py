"""Learnable layers: convolutions with optional spectral normalization,
batch norm, self-attention, and the parameter container they live in.

Initialization follows the DCGAN convention: conv weights N(0, 0.02^2),
batch-norm scales N(1, 0.02^2), biases/shifts zero, attention gamma
exactly zero.  Each parameter draws from its own RNG stream derived from
(seed, parameter name), so adding or removing a layer never perturbs the
weights of the others.
"""

from __future__ import annotations

import numpy as np

from . import seeds
from .tensor import (
    ShapeError,
    Tensor,
    batchnorm2d,
    conv2d,
    conv_transpose2d,
    linear,
    maxpool2d,
)

WEIGHT_STD = 0.02


class ParameterTree:
    """Ordered name -> Tensor maps for learnable parameters and buffers.

    Buffers (batch-norm running stats, spectral-norm u-vectors) are plain
    NumPy arrays and never touched by the optimizer.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add_param(self, name, value):
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate parameter name: {name}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self.params[name] = t
        return t

    def add_buffer(self, name, value):
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate buffer name: {name}")
        self.buffers[name] = np.asarray(value)
        return self.buffers[name]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self):
        """All tensors by name (parameters then buffers), for checkpointing."""
        out = {name: p.data for name, p in self.params.items()}
        out.update(self.buffers)
        return out

    def load_state(self, arrays):
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise ShapeError(
                    f"checkpoint entry {name}: shape {arrays[name].shape} "
                    f"!= expected {p.data.shape}"
                )
            p.data = arrays[name].astype(p.data.dtype)
        for name in self.buffers:
            if name not in arrays:
                raise KeyError(f"checkpoint missing buffer {name}")
            if arrays[name].shape != self.buffers[name].shape:
                raise ShapeError(
                    f"checkpoint entry {name}: shape {arrays[name].shape} "
                    f"!= expected {self.buffers[name].shape}"
                )
            self.buffers[name][...] = arrays[name]


def param_rng(seed, name):
    """Deterministic per-parameter generator derived from (seed, name)."""
    return seeds.rng(seed, name)


def normal_init(shape, std, seed, name, mean=0.0):
    rng = param_rng(seed, name)
    return (mean + std * rng.standard_normal(shape)).astype(np.float32)


# -- spectral normalization ---------------------------------------------------


def spectral_norm_power_iteration(wmat, u, n_power_iterations=1):
    """Estimate the largest singular value of a 2-d matrix by power
    iteration: v <- normalize(W^T u), u <- normalize(W v).

    Returns (sigma, u, v, degenerate).  A zero matrix yields the floor
    sigma 1e-12 with the degenerate flag set.
    """
    if wmat.ndim != 2 or u.shape != (wmat.shape[0],):
        raise ShapeError(
            f"power iteration: weight {wmat.shape} vs u {u.shape}"
        )
    eps = 1e-12
    v = None
    for _ in range(n_power_iterations):
        v = wmat.T @ u
        v = v / max(np.linalg.norm(v), eps)
        u = wmat @ v
        u = u / max(np.linalg.norm(u), eps)
    if v is None:
        v = wmat.T @ u
        v = v / max(np.linalg.norm(v), eps)
    sigma = float(u @ wmat @ v)
    degenerate = sigma <= eps
    if degenerate:
        sigma = eps
    return sigma, u, v, degenerate


def spectral_norm_apply(weight, u, n_power_iterations=1, update_u=True):
    """Divide ``weight`` by its estimated top singular value.

    sigma is a constant in the backward pass; no gradient flows through
    the power iteration.  ``u`` is mutated in place when ``update_u``.
    """
    wmat = weight.data.reshape(weight.shape[0], -1)
    if update_u:
        sigma, new_u, _, _ = spectral_norm_power_iteration(
            wmat, u, n_power_iterations
        )
        u[...] = new_u
    else:
        eps = 1e-12
        v = wmat.T @ u
        v = v / max(np.linalg.norm(v), eps)
        sigma = max(float(u @ wmat @ v), eps)
    return weight * (1.0 / sigma)


# -- layers ---------------------------------------------------------------


class Layer:
    """Base class; layers register parameters under ``<prefix>/<name>``."""

    def init(self, tree: ParameterTree, prefix: str, seed: int):
        raise NotImplementedError

    def forward(self, tree, prefix, x, training):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, cin, cout, k, stride=1, padding=0, bias=True, sn=False):
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.padding = stride, padding
        self.use_bias, self.sn = bias, sn

    def init(self, tree, prefix, seed):
        name = f"{prefix}/weight"
        tree.add_param(
            name, normal_init((self.cout, self.cin, self.k, self.k), WEIGHT_STD, seed, name)
        )
        if self.use_bias:
            tree.add_param(f"{prefix}/bias", np.zeros(self.cout, np.float32))
        if self.sn:
            rng = param_rng(seed, f"{prefix}/sn_u")
            u = rng.standard_normal(self.cout)
            tree.add_buffer(f"{prefix}/sn_u", (u / np.linalg.norm(u)).astype(np.float32))

    def forward(self, tree, prefix, x, training):
        w = tree.params[f"{prefix}/weight"]
        if self.sn:
            w = spectral_norm_apply(w, tree.buffers[f"{prefix}/sn_u"], update_u=training)
        b = tree.params.get(f"{prefix}/bias") if self.use_bias else None
        return conv2d(x, w, b, self.stride, self.padding)


class ConvTranspose2d(Layer):
    def __init__(self, cin, cout, k, stride=1, padding=0, bias=True, sn=False):
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.padding = stride, padding
        self.use_bias, self.sn = bias, sn

    def init(self, tree, prefix, seed):
        name = f"{prefix}/weight"
        tree.add_param(
            name, normal_init((self.cin, self.cout, self.k, self.k), WEIGHT_STD, seed, name)
        )
        if self.use_bias:
            tree.add_param(f"{prefix}/bias", np.zeros(self.cout, np.float32))
        if self.sn:
            rng = param_rng(seed, f"{prefix}/sn_u")
            u = rng.standard_normal(self.cin)
            tree.add_buffer(f"{prefix}/sn_u", (u / np.linalg.norm(u)).astype(np.float32))

    def forward(self, tree, prefix, x, training):
        w = tree.params[f"{prefix}/weight"]
        if self.sn:
            # reshape dim 0 is Cin for the transposed layout
            w = spectral_norm_apply(w, tree.buffers[f"{prefix}/sn_u"], update_u=training)
        b = tree.params.get(f"{prefix}/bias") if self.use_bias else None
        return conv_transpose2d(x, w, b, self.stride, self.padding)


class BatchNorm2d(Layer):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.channels, self.eps, self.momentum = channels, eps, momentum

    def init(self, tree, prefix, seed):
        name = f"{prefix}/scale"
        tree.add_param(name, normal_init(self.channels, WEIGHT_STD, seed, name, mean=1.0))
        tree.add_param(f"{prefix}/shift", np.zeros(self.channels, np.float32))
        tree.add_buffer(f"{prefix}/running_mean", np.zeros(self.channels, np.float32))
        tree.add_buffer(f"{prefix}/running_var", np.ones(self.channels, np.float32))

    def forward(self, tree, prefix, x, training):
        return batchnorm2d(
            x,
            tree.params[f"{prefix}/scale"],
            tree.params[f"{prefix}/shift"],
            tree.buffers[f"{prefix}/running_mean"],
            tree.buffers[f"{prefix}/running_var"],
            training,
            self.eps,
            self.momentum,
        )


class Linear(Layer):
    def __init__(self, nin, nout, sn=False):
        self.nin, self.nout, self.sn = nin, nout, sn

    def init(self, tree, prefix, seed):
        name = f"{prefix}/weight"
        tree.add_param(name, normal_init((self.nin, self.nout), WEIGHT_STD, seed, name))
        tree.add_param(f"{prefix}/bias", np.zeros(self.nout, np.float32))
        if self.sn:
            rng = param_rng(seed, f"{prefix}/sn_u")
            u = rng.standard_normal(self.nin)
            tree.add_buffer(f"{prefix}/sn_u", (u / np.linalg.norm(u)).astype(np.float32))

    def forward(self, tree, prefix, x, training):
        w = tree.params[f"{prefix}/weight"]
        if self.sn:
            w = spectral_norm_apply(w, tree.buffers[f"{prefix}/sn_u"], update_u=training)
        return linear(x, w, tree.params[f"{prefix}/bias"])


class SelfAttention(Layer):
    """Residual global attention over all spatial positions, gated by a
    learnable scalar gamma initialized to zero (so the block starts as an
    exact no-op)."""

    def __init__(self, channels):
        self.channels = channels
        self.inner = max(1, channels // 8)

    def init(self, tree, prefix, seed):
        c, ci = self.channels, self.inner
        for nm, shape in (
            ("wf", (ci, c, 1, 1)),
            ("wg", (ci, c, 1, 1)),
            ("wh", (c, c, 1, 1)),
            ("wv", (c, c, 1, 1)),
        ):
            name = f"{prefix}/{nm}"
            tree.add_param(name, normal_init(shape, WEIGHT_STD, seed, name))
        tree.add_param(f"{prefix}/gamma", np.zeros((1,), np.float32))

    def forward(self, tree, prefix, x, training):
        b, c, h, w = x.shape
        n = h * w
        f = conv2d(x, tree.params[f"{prefix}/wf"])  # (B, Ci, H, W), queries
        g = conv2d(x, tree.params[f"{prefix}/wg"])  # keys
        hh = conv2d(x, tree.params[f"{prefix}/wh"])  # values
        fq = f.reshape(b, self.inner, n).transpose(0, 2, 1)  # (B, N, Ci)
        gk = g.reshape(b, self.inner, n)  # (B, Ci, N)
        attn = fq.bmm(gk).softmax(axis=2)  # (B, N_query, N_key), rows sum to 1
        hv = hh.reshape(b, c, n)  # (B, C, N)
        o = hv.bmm(attn.transpose(0, 2, 1))  # (B, C, N_query)
        o = conv2d(o.reshape(b, c, h, w), tree.params[f"{prefix}/wv"])
        gamma = tree.params[f"{prefix}/gamma"]
        # y = gamma * o + x; exact residual no-op while gamma == 0
        return o * gamma + x


class Activation(Layer):
    def __init__(self, kind, alpha=0.2):
        self.kind, self.alpha = kind, alpha

    def init(self, tree, prefix, seed):
        pass

    def forward(self, tree, prefix, x, training):
        if self.kind == "relu":
            return x.relu()
        if self.kind == "leaky_relu":
            return x.leaky_relu(self.alpha)
        if self.kind == "tanh":
            return x.tanh()
        if self.kind == "sigmoid":
            return x.sigmoid()
        raise ValueError(f"unknown activation {self.kind}")


class MaxPool2d(Layer):
    def __init__(self, kernel, stride=None):
        self.kernel, self.stride = kernel, stride or kernel

    def init(self, tree, prefix, seed):
        pass

    def forward(self, tree, prefix, x, training):
        return maxpool2d(x, self.kernel, self.stride)


class Reshape(Layer):
    def __init__(self, shape):
        self.shape = shape  # without the batch extent

    def init(self, tree, prefix, seed):
        pass

    def forward(self, tree, prefix, x, training):
        return x.reshape((x.shape[0],) + tuple(self.shape))


class Sequential:
    """A named chain of layers over one ParameterTree."""

    def __init__(self, name, layers):
        self.name = name
        self.layers = list(layers)  # (layer_name, Layer) pairs

    def init_parameters(self, seed):
        tree = ParameterTree()
        for lname, layer in self.layers:
            layer.init(tree, f"{self.name}/{lname}", seed)
        return tree

    def forward(self, tree, x, training):
        for lname, layer in self.layers:
            x = layer.forward(tree, f"{self.name}/{lname}", x, training)
        return x
