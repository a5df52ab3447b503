"""Adam optimiser."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_shapes(cls, shapes: Sequence[tuple[int, ...]], **hyper: float) -> "AdamState":
        return cls(m=[np.zeros(s) for s in shapes], v=[np.zeros(s) for s in shapes], **hyper)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place.

    A ``None`` gradient counts as zero. The moment buffers in ``state`` are
    created on first use.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params) or len(grads) != len(params):
        raise DimensionError("params, grads and optimiser state differ in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    # bias corrections folded into the step size and epsilon:
    # lr * m_hat / (sqrt(v_hat) + eps) == lr_t * m / (sqrt(v) + eps_t)
    root2 = np.sqrt(1.0 - b2**state.t)
    lr_t = state.lr * root2 / (1.0 - b1**state.t)
    eps_t = state.eps * root2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape or (g is not None and g.shape != p.shape):
            raise DimensionError(f"parameter {p.shape} does not match state {m.shape} or grad")
        if g is None:
            g = np.zeros_like(p)
        tmp = np.multiply(g, 1.0 - b1)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp += eps_t
        np.divide(m, tmp, out=tmp)
        tmp *= lr_t
        p -= tmp


class Adam:
    """Adam over a fixed list of parameter tensors."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.state = AdamState.for_shapes([p.shape for p in self.params], lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)
