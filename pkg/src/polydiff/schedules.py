"""Noise schedules for both modalities, with closed-form integrals.

Continuous side: variance-preserving schedules for the forward SDE
dX = -beta_t X dt + sqrt(2 beta_t) dB.  The marginal of X_t given X_0 is
N(mean_coef(t) * X_0, std(t)^2 I) with

    mean_coef(t) = exp(-B(t)),   std(t) = sqrt(1 - exp(-2 B(t))),

where B(t) = int_0^t beta.  B is implemented in closed form per preset
(polynomial integral), never by numeric integration, so that analytic
marginal tests can hold to machine precision.

Discrete side: log-linear masking schedule with rate

    sigma_s = (1 - delta) / (1 - (1 - delta) s),

whose integral is sigma_bar(s) = -ln(1 - (1 - delta) s).  The per-token
survival probability is exp(-sigma_bar(s)) = 1 - (1 - delta) s, an affine
decreasing function with survival(1) = delta.

The time horizon is normalized to 1 everywhere.  All functions accept
scalars or numpy arrays and are pure; instances are frozen and safe to
share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError

# sigma_s diverges at s -> 1 when delta = 0; samplers never evaluate it
# there, but a cap keeps accidental calls finite.
SIGMA_CAP = 1e12


def _check_unit_interval(t, name: str) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {t!r}")
    return t


@dataclass(frozen=True)
class ContinuousSchedule:
    """Variance-preserving noise schedule beta_t on t in [0, 1].

    kind:
        "linear-vp":      beta_t = beta_start (1-t) + beta_end t
        "scaled-sqrt-vp": beta_t = scale (sqrt(beta_start)(1-t) + t sqrt(beta_end))^2
    """

    kind: str
    beta_start: float
    beta_end: float
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear-vp", "scaled-sqrt-vp"):
            raise ConfigError(f"unknown continuous schedule kind {self.kind!r}")
        if self.beta_start <= 0 or self.beta_end <= 0:
            raise ConfigError("beta_start and beta_end must be positive")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")

    def beta(self, t):
        """Instantaneous noise rate beta_t."""
        t = _check_unit_interval(t, "t")
        if self.kind == "linear-vp":
            out = self.beta_start * (1.0 - t) + self.beta_end * t
        else:
            a = np.sqrt(self.beta_start)
            b = np.sqrt(self.beta_end)
            out = self.scale * (a * (1.0 - t) + t * b) ** 2
        return out if out.ndim else float(out)

    def beta_integral(self, t):
        """B(t) = int_0^t beta, in closed form."""
        t = _check_unit_interval(t, "t")
        if self.kind == "linear-vp":
            out = self.beta_start * t + 0.5 * (self.beta_end - self.beta_start) * t**2
        else:
            a = np.sqrt(self.beta_start)
            b = np.sqrt(self.beta_end)
            if abs(b - a) < 1e-15:
                out = self.scale * a * a * t
            else:
                u = a + (b - a) * t
                out = self.scale * (u**3 - a**3) / (3.0 * (b - a))
        return out if out.ndim else float(out)

    def vp_coeffs(self, t):
        """(mean_coef, std) of the forward marginal at t.

        mean_coef^2 + std^2 = 1 holds to machine precision because std is
        derived from mean_coef via expm1 rather than integrated separately.
        """
        big_b = np.asarray(self.beta_integral(t), dtype=np.float64)
        mean_coef = np.exp(-big_b)
        std = np.sqrt(-np.expm1(-2.0 * big_b))
        if big_b.ndim:
            return mean_coef, std
        return float(mean_coef), float(std)

    def g2(self, t):
        """Squared diffusion coefficient g^2(t) = 2 beta_t of the forward SDE."""
        b = self.beta(t)
        return 2.0 * b


@dataclass(frozen=True)
class DiscreteSchedule:
    """Log-linear masking schedule on s in [0, 1] with floor delta in [0, 1)."""

    kind: str = "log-linear"
    delta: float = 1e-5

    def __post_init__(self):
        if self.kind != "log-linear":
            raise ConfigError(f"unknown discrete schedule kind {self.kind!r}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError("delta must lie in [0, 1)")

    def sigma(self, s):
        """Masking rate sigma_s, capped at SIGMA_CAP near the absorbing endpoint."""
        s = _check_unit_interval(s, "s")
        denom = 1.0 - (1.0 - self.delta) * s
        with np.errstate(divide="ignore"):
            out = np.where(denom > 0, (1.0 - self.delta) / np.maximum(denom, 1e-300), np.inf)
        out = np.minimum(out, SIGMA_CAP)
        return out if out.ndim else float(out)

    def sigma_bar(self, s):
        """Integrated rate sigma_bar(s) = -ln(1 - (1 - delta) s); sigma_bar(0) = 0."""
        s = _check_unit_interval(s, "s")
        out = -np.log1p(-(1.0 - self.delta) * s)
        return out if out.ndim else float(out)

    def survival(self, s):
        """Probability that a token is still unmasked at time s: 1 - (1 - delta) s."""
        s = _check_unit_interval(s, "s")
        out = 1.0 - (1.0 - self.delta) * s
        return out if out.ndim else float(out)

    def coeffs(self, s):
        """(sigma, sigma_bar, survival) at s; survival = exp(-sigma_bar)."""
        return self.sigma(s), self.sigma_bar(s), self.survival(s)

    def reverse_rate(self, s):
        """Total unmasking rate of the reverse chain at time s.

        Algebraically sigma_s * exp(-sigma_bar_s) / (1 - exp(-sigma_bar_s));
        for the log-linear family the numerator collapses to (1 - delta) and
        the denominator to (1 - delta) s, so the rate is exactly 1/s for any
        delta.  Requires s > 0.
        """
        s = np.asarray(s, dtype=np.float64)
        if np.any(s <= 0.0) or np.any(s > 1.0):
            raise DomainError("reverse_rate requires s in (0, 1]")
        out = 1.0 / s
        return out if out.ndim else float(out)

    # The masked cross-entropy weight coincides with the reverse rate.
    ce_weight = reverse_rate


_PRESETS = {
    "tabular-vp": ContinuousSchedule("linear-vp", beta_start=0.1, beta_end=20.0),
    "textimage-vp": ContinuousSchedule(
        "scaled-sqrt-vp", beta_start=0.00085, beta_end=0.012, scale=500.0
    ),
    "loglinear-mask": DiscreteSchedule("log-linear", delta=1e-5),
}


def preset(name: str, **overrides):
    """Look up a schedule preset by name, optionally overriding parameters."""
    try:
        base = _PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown schedule preset {name!r}; known: {sorted(_PRESETS)}"
        ) from None
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class SchedulePair:
    """The two per-modality clocks used by joint operations."""

    cont: ContinuousSchedule
    disc: DiscreteSchedule


def default_schedules() -> SchedulePair:
    return SchedulePair(preset("tabular-vp"), preset("loglinear-mask"))
