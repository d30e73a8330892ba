"""
AdamW with decoupled weight decay, the warmup/decay schedule, and
global-norm gradient clipping.
"""

import math
from typing import Dict, List, Sequence, Tuple

import numpy as np

from yoro._errors import ContractError
from yoro._tensor import Tensor, parameters_grad_norm


class Schedule:
    """
    Per-step learning rate: linear ramp from 0 to ``base_lr`` over the first
    ``ceil(warmup_fraction * total_steps)`` steps, then linear decay to 0 at
    ``total_steps``. A positive fraction warms up for at least one step, but
    never for all of them.
    """

    def __init__(self, base_lr: float, total_steps: int, warmup_fraction: float = 0.10):
        if total_steps < 1:
            raise ContractError("schedule needs at least one step", total_steps=total_steps)
        self.base_lr = float(base_lr)
        self.total_steps = int(total_steps)
        # 1e-9 keeps 0.1 * 30 at 3 steps
        warmup = math.ceil(warmup_fraction * total_steps - 1e-9) if warmup_fraction > 0.0 else 0
        self.warmup_steps = min(int(warmup), self.total_steps - 1)

    def __call__(self, step: int) -> float:
        if step >= self.total_steps:
            return 0.0
        if step < self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        return self.base_lr * (self.total_steps - step) / (self.total_steps - self.warmup_steps)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most *max_norm*; returns the norm before clipping."""
    norm = parameters_grad_norm(params)
    if max_norm > 0.0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


class AdamW:
    """
    Adam with weight decay applied to the weights rather than the gradients.

    Parameters
    ----------
    params : sequence of Tensor
        Trainable tensors; their ``grad`` is read on :meth:`step`.
    lr : float
        Default learning rate, overridden per step by the schedule.
    betas : (float, float)
    eps : float
    weight_decay : float
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        self.params: List[Tensor] = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m: Dict[int, np.ndarray] = {}
        self.v: Dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float = None) -> None:
        lr = self.lr if lr is None else float(lr)
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for idx, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.get(idx)
            v = self.v.get(idx)
            m = (1.0 - self.beta1) * g if m is None else self.beta1 * m + (1.0 - self.beta1) * g
            v = ((1.0 - self.beta2) * g * g if v is None
                 else self.beta2 * v + (1.0 - self.beta2) * g * g)
            self.m[idx], self.v[idx] = m, v
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            p.data = p.data - lr * update - lr * self.weight_decay * p.data
