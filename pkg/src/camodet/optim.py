"""Optimizers for StagedParams: AdamW with decoupled decay, plus plain SGD."""

from __future__ import annotations

import numpy as np

from camodet.errors import ConfigError
from camodet.model import PARAM_FIELDS, StagedParams

DEFAULT_LR = 3e-4
DEFAULT_WEIGHT_DECAY = 0.05


class AdamW:
    """Bias-corrected Adam with weight decay applied directly to the parameters."""

    def __init__(
        self,
        lr: float = DEFAULT_LR,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = DEFAULT_WEIGHT_DECAY,
    ) -> None:
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError(f"betas must be in [0, 1), got ({beta1}, {beta2})")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {weight_decay}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_index = 0
        self._m: dict[str, np.ndarray] | None = None
        self._v: dict[str, np.ndarray] | None = None

    def step(self, params: StagedParams, grads: StagedParams) -> StagedParams:
        if self._m is None:
            self._m = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}
            self._v = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}
        self.step_index += 1
        t = self.step_index
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        updated = {}
        for name in PARAM_FIELDS:
            theta = getattr(params, name)
            g = getattr(grads, name)
            m = self._m[name] = self.beta1 * self._m[name] + (1.0 - self.beta1) * g
            v = self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            updated[name] = theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps) - self.lr * self.weight_decay * theta
        return StagedParams(**updated)


class SGD:
    """Plain gradient descent, used to test restriction/learning-rate identities."""

    def __init__(self, lr: float = DEFAULT_LR) -> None:
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        self.lr = lr
        self.step_index = 0

    def step(self, params: StagedParams, grads: StagedParams) -> StagedParams:
        self.step_index += 1
        updated = {
            name: getattr(params, name) - self.lr * getattr(grads, name)
            for name in PARAM_FIELDS
        }
        return StagedParams(**updated)
