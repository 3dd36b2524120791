"""AdamW with decoupled weight decay and bias-corrected moments.

Weight decay multiplies parameters directly (it is never folded into the
gradients), matching the decoupled formulation.  Updates containing
non-finite gradients are rejected outright: no state changes, and the
rejection is recorded so training reports can surface it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .errors import ShapeError


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.9)
    weight_decay: float = 0.03
    eps: float = 1e-8


@dataclass
class OptimizerState:
    """Per-parameter moment accumulators plus the shared step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    rejected_steps: list[int] = field(default_factory=list)


class AdamW:
    """Owns a parameter list and mutates it in place on each step."""

    def __init__(self, params: list[Tensor], config: AdamWConfig | None = None):
        self.params = list(params)
        self.config = config or AdamWConfig()
        self.state = OptimizerState(
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
        )
        self._attempts = 0

    def step(self, lr: float | None = None) -> bool:
        """Apply one update from the parameters' ``.grad`` fields.

        Returns False (and leaves all state untouched) when any gradient is
        non-finite; the rejection is logged in ``state.rejected_steps``.
        """
        cfg = self.config
        lr = cfg.lr if lr is None else lr
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} does not match parameter {p.data.shape}"
                )
            grads.append(g)

        self._attempts += 1
        if any(not np.all(np.isfinite(g)) for g in grads):
            self.state.rejected_steps.append(self._attempts)
            return False

        st = self.state
        st.step += 1
        b1, b2 = cfg.betas
        c1 = 1.0 - b1**st.step
        c2 = 1.0 - b2**st.step
        for p, g, m, v in zip(self.params, grads, st.m, st.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / c1
            v_hat = v / c2
            if cfg.weight_decay:
                p.data -= (lr * cfg.weight_decay) * p.data
            p.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return True

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
