"""Adam with bias correction."""
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, 0)


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update of every tensor in ``params`` from its ``.grad``.

    A missing gradient counts as zero. All gradients are checked before any
    parameter moves, so a :class:`NonFiniteGradient` leaves ``params`` and
    ``state`` untouched.
    """
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
        grads[name] = g
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state
