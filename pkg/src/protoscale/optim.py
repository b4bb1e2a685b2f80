"""Gradient descent optimizers over named parameter dicts.

Parameters are ``{name: Tensor}`` mappings; optimizers read ``.grad`` and
update ``.data`` in place, never touching the grad buffers themselves.
Moment state is keyed by parameter name so it can round-trip through
checkpoints independent of object identity.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ParameterError


class Adam:
    """Adam with bias-corrected first/second moments."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ParameterError(f"Adam betas must lie in [0, 1), got {beta1}, {beta2}")
        if lr <= 0.0:
            raise ParameterError(f"Adam lr must be positive, got {lr}")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {name} has no grad buffer")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / correction1
            v_hat = v / correction2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self):
        """Flat name -> array view of all internal state, for serialization."""
        out = {"t": np.array([float(self.t)])}
        for name in self.params:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["t"][0])
        for name in self.params:
            self.m[name][...] = arrays[f"m/{name}"]
            self.v[name][...] = arrays[f"v/{name}"]


class SGD:
    """Plain gradient descent, optionally with momentum."""

    def __init__(self, params, lr=1e-2, momentum=0.0):
        if lr <= 0.0:
            raise ParameterError(f"SGD lr must be positive, got {lr}")
        self.params = dict(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = (
            {name: np.zeros_like(p.data) for name, p in self.params.items()}
            if momentum
            else None
        )

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {name} has no grad buffer")
            if self.velocity is None:
                p.data -= self.lr * p.grad
            else:
                vel = self.velocity[name]
                vel *= self.momentum
                vel += p.grad
                p.data -= self.lr * vel

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self):
        if self.velocity is None:
            return {}
        return {f"vel/{name}": self.velocity[name] for name in self.params}

    def load_state_arrays(self, arrays):
        if self.velocity is not None:
            for name in self.params:
                self.velocity[name][...] = arrays[f"vel/{name}"]


def cosine_lr(base_lr, step, total_steps, floor_ratio=0.01):
    """Cosine decay from ``base_lr`` down to ``base_lr * floor_ratio``."""
    if total_steps < 1:
        raise ParameterError(f"total_steps must be >= 1, got {total_steps}")
    progress = min(max(step / total_steps, 0.0), 1.0)
    lo = base_lr * floor_ratio
    return float(lo + 0.5 * (base_lr - lo) * (1.0 + np.cos(np.pi * progress)))
