"""
Central finite-difference gradient checks.
"""

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from yoro._tensor import Tensor, backward, no_grad


def numeric_grad(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5,
                 indices: Optional[Sequence[tuple]] = None) -> np.ndarray:
    """
    Estimate d fn() / d tensor by central differences.

    Parameters
    ----------
    fn : callable
        Zero-argument function returning a scalar tensor; re-evaluated for
        every perturbation.
    tensor : Tensor
        The input perturbed in place (restored afterwards).
    h : float
        Step size.
    indices : sequence of tuple, optional
        Only these entries are estimated; the others stay 0.

    Returns
    -------
    numpy.ndarray
        Same shape as ``tensor``.
    """
    grad = np.zeros_like(tensor.data)
    if indices is None:
        indices = list(np.ndindex(tensor.shape))
    with no_grad():
        for idx in indices:
            original = tensor.data[idx]
            tensor.data[idx] = original + h
            plus = fn().item()
            tensor.data[idx] = original - h
            minus = fn().item()
            tensor.data[idx] = original
            grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def check_gradients(fn: Callable[[], Tensor], tensors: Dict[str, Tensor],
                    h: float = 1e-5, rtol: float = 1e-6, atol: float = 1e-8,
                    max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """
    Compare analytic against numeric gradients for each named tensor.

    Returns the worst relative error per tensor, where the error of one entry
    is ``|a - n| / max(|a|, |n|, atol / rtol)``; a value ``<= rtol`` passes.
    When *max_entries* is set, that many randomly chosen entries per tensor
    are checked.
    """
    for t in tensors.values():
        t.zero_grad()
    backward(fn())
    rng = rng if rng is not None else np.random.default_rng(0)
    floor = atol / rtol
    worst = {}
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        all_idx = list(np.ndindex(t.shape))
        if max_entries is not None and len(all_idx) > max_entries:
            picks = rng.choice(len(all_idx), size=max_entries, replace=False)
            all_idx = [all_idx[i] for i in sorted(picks)]
        numeric = numeric_grad(fn, t, h=h, indices=all_idx)
        errs = [abs(analytic[i] - numeric[i]) / max(abs(analytic[i]), abs(numeric[i]), floor)
                for i in all_idx]
        worst[name] = float(max(errs)) if errs else 0.0
    return worst
