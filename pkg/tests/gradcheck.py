"""Central finite-difference gradient checking (float64)."""

import numpy as np

from usgan.tensor import Tensor


def numeric_grad(fn, tensors, which, eps=1e-5):
    """d fn / d tensors[which] by central differences; fn returns a scalar Tensor."""
    target = tensors[which]
    flat = target.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(*tensors).item()
        flat[i] = orig - eps
        lo = fn(*tensors).item()
        flat[i] = orig
        grad[i] = (hi - lo) / (2 * eps)
    return grad.reshape(target.data.shape)


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return np.linalg.norm(a - b) / denom


def check_gradients(fn, arrays, tol=1e-4, eps=1e-5):
    """Assert analytic grads of scalar fn(*tensors) match finite differences.

    ``arrays``: list of float64 NumPy arrays treated as differentiable
    inputs."""
    tensors = [Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    loss.backward()
    for i, t in enumerate(tensors):
        num = numeric_grad(fn, tensors, i, eps)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        err = rel_err(ana, num)
        assert err < tol, f"input {i}: gradient rel err {err:.3e} >= {tol}"
