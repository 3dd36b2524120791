"""Variance-preserving diffusion on Euclidean states.

Forward SDE (time horizon [0, 1]):

    dX = -beta_t X dt + sqrt(2 beta_t) dB,

so the drift is f(x, t) = -beta_t x and g^2(t) = 2 beta_t.  The closed-form
marginal is X_t = mean_coef(t) X_0 + std(t) eps with coefficients from the
schedule.  The reverse-time SDE has drift f - g^2 * score and is integrated
with Euler-Maruyama; the probability-flow ODE has velocity
f - (1/2) g^2 * score and is integrated with a two-stage Heun step that is
fully deterministic.

Reverse integration stops at a small terminal floor (no final denoising
jump); the sampler modules own that grid.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .errors import ContractError, SingularTimeError
from .schedules import ContinuousSchedule


def drift(x: np.ndarray, t, schedule: ContinuousSchedule) -> np.ndarray:
    """Forward drift f(x, t) = -beta_t x."""
    beta = np.asarray(schedule.beta(t))
    return -np.expand_dims(beta, -1) * x if beta.ndim else -beta * x


def sample_forward(x0: np.ndarray, t, schedule: ContinuousSchedule,
                   rng: np.random.Generator) -> np.ndarray:
    """Draw X_t | X_0 = x0.  ``t`` may be a scalar or per-row array."""
    x0 = np.asarray(x0, dtype=np.float64)
    mean_coef, std = schedule.vp_coeffs(t)
    mean_coef = np.asarray(mean_coef)
    std = np.asarray(std)
    if mean_coef.ndim:
        mean_coef = mean_coef[..., None]
        std = std[..., None]
    return mean_coef * x0 + std * rng.standard_normal(x0.shape)


def cond_score(x0: np.ndarray, x_t: np.ndarray, t,
               schedule: ContinuousSchedule) -> np.ndarray:
    """Gradient of log p_t(x_t | x0): -(x_t - mean_coef x0) / std^2.

    Undefined at t = 0 where std vanishes.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= 0.0):
        raise SingularTimeError("conditional score is singular at t = 0")
    mean_coef, std = schedule.vp_coeffs(t)
    mean_coef = np.asarray(mean_coef)
    var = np.asarray(std) ** 2
    if mean_coef.ndim:
        mean_coef = mean_coef[..., None]
        var = var[..., None]
    return -(np.asarray(x_t) - mean_coef * np.asarray(x0)) / var


def dsm_loss(cont_score, x0: np.ndarray, x_t: np.ndarray, t,
             schedule: ContinuousSchedule):
    """Denoising score-matching term beta_t * ||s - cond_score||^2.

    The (1/2) g^2 weight collapses to beta_t under this SDE.  Accepts a
    single sample or a batch (mean over the batch, sum over coordinates);
    ``cont_score`` may be a Tensor (training) or an ndarray (oracle tests).
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= 0.0):
        raise SingularTimeError("dsm_loss is singular at t = 0")
    return _weighted_dsm(cont_score, x0, x_t, t_arr, schedule)


def _weighted_dsm(cont_score, x0, x_t, t_arr, schedule,
                  sample_weight: np.ndarray | None = None):
    """Shared DSM core; ``sample_weight`` zeros out singular-time rows."""
    target = np.zeros_like(np.asarray(x_t, dtype=np.float64))
    valid = t_arr > 0.0
    if np.asarray(valid).ndim == 0:
        target = cond_score(x0, x_t, t_arr, schedule) if valid else target
        beta = schedule.beta(float(t_arr)) if valid else 0.0
        w = np.asarray(beta, dtype=np.float64)
    else:
        safe_t = np.where(valid, t_arr, 0.5)
        full = cond_score(x0, x_t, safe_t, schedule)
        target = np.where(valid[..., None], full, 0.0)
        w = np.where(valid, schedule.beta(safe_t), 0.0)
    if sample_weight is not None:
        w = w * sample_weight

    if isinstance(cont_score, Tensor):
        diff = cont_score - Tensor(target)
        sq = (diff * diff).sum(axis=-1)
        weighted = sq * Tensor(np.asarray(w, dtype=np.float64))
        return weighted.mean() if weighted.ndim else weighted
    diff = np.asarray(cont_score) - target
    sq = (diff * diff).sum(axis=-1)
    return float(np.mean(w * sq))


def em_step(x: np.ndarray, t: float, dt: float, score: np.ndarray,
            schedule: ContinuousSchedule, rng: np.random.Generator) -> np.ndarray:
    """One reverse-time Euler-Maruyama step (dt <= 0).

    x' = x + (beta_t x + 2 beta_t score) |dt| + sqrt(2 beta_t |dt|) eps.
    A zero step returns x unchanged without consuming randomness.
    """
    if dt > 0:
        raise ContractError(f"em_step integrates in reverse time, got dt={dt}")
    if dt == 0:
        return np.array(x, copy=True)
    adt = -dt
    beta = schedule.beta(t)
    x = np.asarray(x, dtype=np.float64)
    noise = rng.standard_normal(x.shape)
    return x + (beta * x + 2.0 * beta * np.asarray(score)) * adt + np.sqrt(
        2.0 * beta * adt
    ) * noise


def heun_step(x: np.ndarray, t: float, dt: float, score_fn,
              schedule: ContinuousSchedule) -> np.ndarray:
    """One deterministic probability-flow step (dt <= 0), two-stage Heun.

    ``score_fn(x, t)`` returns the score estimate.  Both stages use the
    drift and diffusion coefficients at the left endpoint t; the second
    stage re-evaluates the score at (x_pred, t + dt).
    """
    if dt > 0:
        raise ContractError(f"heun_step integrates in reverse time, got dt={dt}")
    if dt == 0:
        return np.array(x, copy=True)
    x = np.asarray(x, dtype=np.float64)
    beta = schedule.beta(t)
    v_old = -beta * x - beta * np.asarray(score_fn(x, t))
    x_pred = x + v_old * dt
    v_new = -beta * x_pred - beta * np.asarray(score_fn(x_pred, t + dt))
    return x + 0.5 * (v_old + v_new) * dt
