from __future__ import annotations

from typing import Callable

import numpy as np

from .nn import ParamSet
from .tensor import ContractError, Tensor, no_grad


def grad(params: ParamSet, loss_fn: Callable[[], Tensor]) -> dict[str, np.ndarray]:
    """Evaluate ``loss_fn`` on the tape and return the gradient of every parameter.

    Parameters the loss does not reach get an all-zero gradient.
    """
    params.zero_grad()
    loss = loss_fn()
    if loss.data.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    loss.backward()
    params.fill_missing_grads()
    return {k: t.grad for k, t in params.items()}


def grad_check(params: ParamSet, loss_fn: Callable[[], Tensor], eps: float = 1e-5,
               coords_per_param: int = 6, rng: np.random.Generator | None = None,
               names=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``,
    over ``coords_per_param`` sampled coordinates of each parameter.
    """
    if not eps > 0:
        raise ContractError(f"eps must be > 0, got {eps}")
    rng = rng if rng is not None else np.random.default_rng(0)
    analytic = grad(params, loss_fn)
    worst = 0.0
    for name in (params.names() if names is None else names):
        p = params[name]
        flat = p.data.reshape(-1)
        k = min(coords_per_param, flat.size)
        for idx in rng.choice(flat.size, size=k, replace=False):
            orig = flat[idx]
            with no_grad():
                flat[idx] = orig + eps
                up = loss_fn().item()
                flat[idx] = orig - eps
                down = loss_fn().item()
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[name].reshape(-1)[idx]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
