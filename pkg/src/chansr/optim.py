"""Adam optimizer with bias correction, plus global-norm gradient clipping."""

import numpy as np


class Adam:
    """Standard Adam over a list of parameter tensors.

    Update: m <- b1*m + (1-b1)*g; v <- b2*v + (1-b2)*g^2;
    p <- p - lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments.
    Gradients are cleared (set to None) after each step; a subsequent step
    without a fresh backward pass raises.
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        if not self.params:
            raise ValueError("Adam needs at least one parameter")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        # moments kept in float64 regardless of parameter dtype
        self.m = [np.zeros(p.data.shape, np.float64) for p in self.params]
        self.v = [np.zeros(p.data.shape, np.float64) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {i} has no gradient; run backward before step")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad.astype(np.float64, copy=False)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(params, state: Adam) -> None:
    """Apply one Adam update to `params` using `state` (must be the same list)."""
    if list(params) != state.params:
        raise ValueError("adam_step: params do not match the optimizer state")
    state.step()


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most max_norm; returns the pre-clip norm."""
    total = 0.0
    for p in params:
        if p.grad is None:
            raise ValueError("clip_global_norm: missing gradient")
        total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            p.grad *= p.grad.dtype.type(scale)
    return norm
