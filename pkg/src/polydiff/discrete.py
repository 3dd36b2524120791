"""Masked (absorbing) discrete diffusion on token sequences.

Token convention: a sequence is an integer array of shape (..., positions);
position p draws ids from {0, ..., K_p - 1} for true categories plus the
reserved mask id K_p (always the last index of that position's extended
vocabulary).  ``vocab_sizes`` throughout this package counts the extended
vocabulary, i.e. true categories + 1.

The forward chain is CTMC(sigma_s Q_mask) whose only transition is
token -> mask; solving it analytically, each token is independently masked
with probability 1 - survival(s).  The reverse chain therefore only
unmasks: transitions into the mask state have zero reverse rate, so
tau-leaping reduces to a per-position Bernoulli unmask event (each
position jumps at most once) with the category drawn from the model's
clean-token probabilities.

Rate matrices use the column convention: entry (x, y) is the rate y -> x,
and every column sums to zero.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .errors import ContractError
from .schedules import DiscreteSchedule

MAX_EXACT_STATES = 64


def mask_ids(vocab_sizes) -> np.ndarray:
    """Per-position mask id: the last index of each extended vocabulary."""
    return np.asarray(vocab_sizes, dtype=np.int64) - 1


def is_masked(ids: np.ndarray, vocab_sizes) -> np.ndarray:
    """Boolean array marking masked positions."""
    return np.asarray(ids) == mask_ids(vocab_sizes)


def mask_forward(y0: np.ndarray, s, schedule: DiscreteSchedule,
                 rng: np.random.Generator, vocab_sizes) -> np.ndarray:
    """Draw Y_s | Y_0 = y0: each position masked i.i.d. with prob 1 - survival(s).

    ``y0`` must contain no mask tokens; ``s`` may be scalar or per-row.
    """
    y0 = np.asarray(y0)
    if np.any(is_masked(y0, vocab_sizes)):
        raise ContractError("mask_forward requires a clean sequence (no mask tokens)")
    surv = np.asarray(schedule.survival(s))
    if surv.ndim:
        surv = surv[..., None]
    hit = rng.random(y0.shape) >= surv
    return np.where(hit, mask_ids(vocab_sizes), y0)


def noise_condition(y: np.ndarray, sigma_level, schedule: DiscreteSchedule,
                    rng: np.random.Generator, vocab_sizes) -> np.ndarray:
    """Mask the currently-unmasked positions of ``y`` with prob 1 - survival(sigma).

    Used by guidance to renoise a (possibly already partly masked)
    condition; already-masked positions stay masked.
    """
    y = np.asarray(y)
    surv = schedule.survival(sigma_level)
    hit = rng.random(y.shape) >= surv
    return np.where(hit | is_masked(y, vocab_sizes), mask_ids(vocab_sizes), y)


def mask_rate_matrix(n_states: int) -> np.ndarray:
    """Q_mask on an extended space of n_states (last state is the mask).

    Columns sum to zero; the only positive rates point into the mask row.
    """
    q = np.zeros((n_states, n_states))
    for j in range(n_states - 1):
        q[j, j] = -1.0
        q[-1, j] = 1.0
    return q


def exact_marginal(p0: np.ndarray, s, schedule: DiscreteSchedule) -> np.ndarray:
    """Solve dp/ds = sigma_s Q_mask p exactly: expm(sigma_bar(s) Q_mask) p0.

    Test utility for small extended state spaces (<= 64 states, mask last).
    """
    p0 = np.asarray(p0, dtype=np.float64)
    n = p0.shape[0]
    if n > MAX_EXACT_STATES:
        raise ContractError(f"exact_marginal supports at most {MAX_EXACT_STATES} states")
    sbar = schedule.sigma_bar(s)
    return expm(sbar * mask_rate_matrix(n)) @ p0


def reverse_rate_matrix(ratios: np.ndarray, s, schedule: DiscreteSchedule) -> np.ndarray:
    """Reverse-time rate matrix at a masked state, for small-space tests.

    ``ratios[k]`` is the concrete score p(k)/p(M); the reverse rate of
    unmasking into k is sigma_s * ratios[k], rates out of true categories
    are zero (no remasking), and columns sum to zero.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    n = ratios.shape[0] + 1
    sigma = schedule.sigma(s)
    q = np.zeros((n, n))
    q[:-1, -1] = sigma * ratios
    q[-1, -1] = -sigma * ratios.sum()
    return q


def concrete_score(x0_probs: np.ndarray, s, schedule: DiscreteSchedule) -> np.ndarray:
    """Score ratios of a masked position toward its true categories.

    ratio_k = survival/(1-survival) * P(Y_0 = k | unmasked context), acting
    on the last axis of ``x0_probs``.  Requires s > 0 so the prefactor is
    finite.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr <= 0.0):
        raise ContractError("concrete_score requires s > 0")
    surv = np.asarray(schedule.survival(s))
    pre = surv / (1.0 - surv)
    if pre.ndim:
        pre = pre[..., None]
    return pre * np.asarray(x0_probs, dtype=np.float64)


def masked_ce_loss(logits, y0: np.ndarray, y_s: np.ndarray, s, schedule: DiscreteSchedule,
                   vocab_sizes):
    """Weighted cross-entropy over masked positions.

    w(s) * sum_{p masked} -log softmax(logits_p)[y0_p], averaged over the
    batch, with w(s) the schedule's reverse rate (1/s for log-linear).
    Unmasked positions contribute exactly zero.  ``logits`` is a list of
    per-position Tensors or ndarrays of shape (batch, K_p).
    """
    from .autograd import Tensor, log_softmax  # local import to keep numpy path light

    y0 = np.atleast_2d(np.asarray(y0))
    y_s = np.atleast_2d(np.asarray(y_s))
    batch, positions = y0.shape
    masked = is_masked(y_s, vocab_sizes)

    s_arr = np.broadcast_to(np.asarray(s, dtype=np.float64), (batch,))
    has_mask = masked.any(axis=1)
    if np.any(has_mask & (s_arr <= 0.0)):
        raise ContractError("masked positions at s = 0 are impossible")
    weights = np.where(has_mask, schedule.reverse_rate(np.where(s_arr > 0, s_arr, 1.0)), 0.0)

    tensor_mode = isinstance(logits[0], Tensor)
    total = None
    for p in range(positions):
        k_p = int(np.asarray(vocab_sizes)[p]) - 1
        onehot = np.zeros((batch, k_p))
        onehot[np.arange(batch), y0[:, p]] = 1.0
        gate = masked[:, p].astype(np.float64)
        if tensor_mode:
            lsm = log_softmax(logits[p])
            picked = (lsm * Tensor(onehot)).sum(axis=-1)
            term = picked * Tensor(-gate)
        else:
            arr = np.asarray(logits[p], dtype=np.float64)
            z = arr - arr.max(axis=-1, keepdims=True)
            lsm = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
            term = -(lsm * onehot).sum(axis=-1) * gate
        total = term if total is None else total + term

    if tensor_mode:
        return (total * Tensor(weights)).mean()
    return float(np.mean(total * weights))


def tau_leap_step(y_s: np.ndarray, x0_probs, s: float, ds: float,
                  schedule: DiscreteSchedule, rng: np.random.Generator,
                  vocab_sizes) -> np.ndarray:
    """One reverse tau-leaping step from time s to s - ds.

    Each masked position independently unmasks with probability
    min(1, r(s) ds) where r is the reverse rate at the left endpoint; on
    unmasking, the category is drawn from that position's clean-token
    probabilities.  Unmasked positions never change.  Randomness is
    consumed in a fixed per-position order regardless of the mask pattern,
    so trajectories are reproducible under a shared seed.
    """
    if ds < 0 or s - ds < -1e-12:
        raise ContractError(f"invalid leap from s={s} by ds={ds}")
    y = np.atleast_2d(np.asarray(y_s)).copy()
    batch, positions = y.shape
    prob = 0.0 if ds == 0 else min(1.0, float(schedule.reverse_rate(s)) * ds)
    m_ids = mask_ids(vocab_sizes)
    for p in range(positions):
        fire_u = rng.random(batch)
        cat_u = rng.random(batch)
        masked = y[:, p] == m_ids[p]
        fire = masked & (fire_u < prob)
        if not np.any(fire):
            continue
        probs = np.asarray(x0_probs[p], dtype=np.float64)
        if probs.ndim == 1:
            probs = np.broadcast_to(probs, (batch, probs.shape[0]))
        cdf = np.cumsum(probs, axis=-1)
        cdf = cdf / cdf[:, -1:]
        cats = (cat_u[:, None] > cdf).sum(axis=1)
        y[fire, p] = cats[fire]
    return y.reshape(np.asarray(y_s).shape)
