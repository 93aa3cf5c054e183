"""Totally skewed positive alpha-stable mixing law.

A sub-Gaussian alpha-stable vector is sqrt(Y) * G with G Gaussian and Y drawn
from the positive stable law with exponent alpha1 = alpha / 2, skewness 1 and
scale cos(pi * alpha / 4) ** (2 / alpha).  That scale standardises the Laplace
transform to E[exp(-s * Y)] = exp(-s ** alpha1), which is the normalisation
every routine in this module assumes.

Density evaluation is hybrid: a convergent power series in y ** (-alpha1) is
used where its terms decay from the first one onward, and the integral
representation obtained from the Kanter sampling identity (a Zolotarev-type
form) is used elsewhere.  The series suffers catastrophic sign cancellation at
small y, which is why the crossover is decided adaptively per evaluation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import gammaln

from . import slog
from .slog import SignedLog

# Relative magnitude below which the series partial sum is declared converged.
SERIES_REL_TOL = 1e-10
# Digits of cancellation we tolerate before abandoning the series for the
# integral route (max term magnitude / |partial sum|).
SERIES_CANCEL_CAP = 1e3
_SERIES_MAX_TERMS = 400


@dataclass(frozen=True)
class StableLaw:
    """Parameters (alpha, beta, gamma, delta) of a univariate stable law."""

    alpha: float
    beta: float
    gamma: float
    delta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must be in (0, 2], got {self.alpha}")
        if not -1.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [-1, 1], got {self.beta}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class MixingLaw:
    """Positive stable mixing law of a sub-Gaussian alpha-stable vector.

    alpha is the stability exponent of the full vector, alpha1 = alpha / 2 the
    exponent of the mixing variable.  At alpha = 2 the law degenerates to the
    point mass at 1.
    """

    alpha: float
    alpha1: float
    gamma_mix: float

    @property
    def is_degenerate(self) -> bool:
        return self.alpha == 2.0

    def as_stable_law(self) -> StableLaw:
        if self.is_degenerate:
            raise ValueError("alpha = 2 mixing law is a point mass, not a stable law")
        return StableLaw(alpha=self.alpha1, beta=1.0, gamma=self.gamma_mix, delta=0.0)


def mixing_law(alpha: float) -> MixingLaw:
    """Mixing law with Laplace transform exp(-s ** (alpha / 2)) for alpha < 2."""
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must be in (0, 2], got {alpha}")
    gamma_mix = math.cos(math.pi * alpha / 4.0) ** (2.0 / alpha)
    return MixingLaw(alpha=alpha, alpha1=alpha / 2.0, gamma_mix=gamma_mix)


def sample_positive_stable(law: MixingLaw, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw i.i.d. mixing variables via the CMS transform specialised to beta = 1.

    For alpha1 < 1 the beta = 1 branch of Chambers-Mallows-Stuck reduces to
    Kanter's form; evaluated in log domain so extreme draws neither overflow
    nor lose precision.  For alpha = 2 the law is the constant 1.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if law.is_degenerate:
        return np.ones(count)
    a1 = law.alpha1
    theta = rng.uniform(0.0, np.pi, count)
    w = rng.standard_exponential(count)
    log_y = (
        np.log(np.sin(a1 * theta))
        - (1.0 / a1) * np.log(np.sin(theta))
        + ((1.0 - a1) / a1) * (np.log(np.sin((1.0 - a1) * theta)) - np.log(w))
    )
    return np.exp(log_y)


def series_coefficient(alpha1: float, xi: int) -> SignedLog:
    """Signed-log coefficient c_xi of the inverse-power series of the density.

    c_xi = (-1) ** (xi + 1) * Gamma(xi * alpha1 + 1) / (pi * xi!) * sin(xi * alpha1 * pi),
    shared by the density series (term c_xi * y ** (-xi * alpha1 - 1)) and the
    gamma-series scale estimator.  Integral xi * alpha1 makes the sine factor
    structurally zero; detecting that case keeps rational exponents (for
    example alpha1 = 1/2) exact instead of leaving ~1e-16 residue.
    """
    arg = xi * alpha1
    if abs(arg - round(arg)) < 1e-12:
        return slog.ZERO
    s = math.sin(arg * math.pi)
    sign = (1 if xi % 2 == 1 else -1) * (1 if s > 0 else -1)
    logmag = gammaln(arg + 1.0) - gammaln(xi + 1.0) - math.log(math.pi) + math.log(abs(s))
    return (sign, logmag)


def pdf_series_partial(law: MixingLaw, y: float, terms: int) -> tuple[float, bool]:
    """Partial sum of the density series with a convergence verdict.

    Terms are accumulated in signed-log arithmetic.  Converged means the last
    nonzero term magnitude fell below SERIES_REL_TOL relative to the partial
    sum while term magnitudes were in their decaying regime; growth of the
    term magnitudes (the small-y regime, where the alternating series is
    numerically unusable) reports converged = False.
    """
    if y <= 0.0:
        raise ValueError(f"y must be positive, got {y}")
    if terms < 1:
        raise ValueError(f"terms must be >= 1, got {terms}")
    a1 = law.alpha1
    log_y = math.log(y)
    total = slog.ZERO
    prev_mag = math.inf
    max_mag = slog.NEG_INF
    decaying = True
    converged = False
    small_streak = 0  # two consecutive sub-threshold terms guard freak zeros
    for xi in range(1, terms + 1):
        c = series_coefficient(a1, xi)
        if c[0] == 0:
            continue
        term: SignedLog = (c[0], c[1] - (xi * a1 + 1.0) * log_y)
        if term[1] > prev_mag:
            decaying = False
        prev_mag = term[1]
        max_mag = max(max_mag, term[1])
        total = slog.add(total, term)
        if decaying and total[0] != 0 and term[1] - total[1] < math.log(SERIES_REL_TOL):
            small_streak += 1
            if small_streak >= 2:
                converged = True
                break
        else:
            small_streak = 0
    if total[0] != 0 and max_mag - total[1] > math.log(SERIES_CANCEL_CAP):
        converged = False  # cancellation ate the accuracy budget
    if not decaying:
        converged = False
    return slog.to_linear(total), converged


def _log_kanter_a(alpha1: float, theta: float) -> float:
    return (
        (alpha1 / (1.0 - alpha1)) * math.log(math.sin(alpha1 * theta))
        + math.log(math.sin((1.0 - alpha1) * theta))
        - (1.0 / (1.0 - alpha1)) * math.log(math.sin(theta))
    )


def _log_pdf_integral(alpha1: float, y: float) -> float:
    """Zolotarev-type integral for the standardised density, in log domain.

    From Y = (a(theta) / W) ** ((1 - a1) / a1) with theta ~ U(0, pi) and
    W ~ Exp(1):  f(y) = a1 / ((1 - a1) pi) * y ** (-1 / (1 - a1))
                        * int_0^pi a(theta) exp(-a(theta) * t) dtheta,
    t = y ** (-a1 / (1 - a1)).  The minimum a(0+) is factored out so the
    quadrature operates on an O(1) integrand even when a * t is huge.
    """
    t = y ** (-alpha1 / (1.0 - alpha1))
    a_min = alpha1 ** (alpha1 / (1.0 - alpha1)) * (1.0 - alpha1)

    def integrand(theta: float) -> float:
        if theta <= 0.0:
            return a_min
        if theta >= np.pi:
            return 0.0
        la = _log_kanter_a(alpha1, theta)
        return math.exp(la - (math.exp(la) - a_min) * t)

    points = None
    if 1.0 / t > a_min:
        # integrand peaks where a(theta) = 1/t; a is increasing on (0, pi)
        target = -math.log(t)
        hi = np.pi - 1e-12
        if _log_kanter_a(alpha1, hi) > target:
            theta_star = brentq(lambda th: _log_kanter_a(alpha1, th) - target, 1e-12, hi)
            points = [theta_star]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(
            integrand, 0.0, np.pi, points=points, limit=200, epsabs=0.0, epsrel=1e-11
        )
    if val <= 0.0:
        return slog.NEG_INF
    return (
        math.log(alpha1 / (1.0 - alpha1))
        - math.log(math.pi)
        - (1.0 / (1.0 - alpha1)) * math.log(y)
        - a_min * t
        + math.log(val)
    )


def positive_stable_logpdf(law: MixingLaw, y: float) -> float:
    """Log-density of the mixing law at y > 0 (alpha < 2 only)."""
    if law.is_degenerate:
        raise ValueError("alpha = 2 mixing law has a degenerate density")
    if y <= 0.0:
        raise ValueError(f"y must be positive, got {y}")
    value, converged = pdf_series_partial(law, y, _SERIES_MAX_TERMS)
    if converged and value > 0.0:
        return math.log(value)
    return _log_pdf_integral(law.alpha1, y)


def positive_stable_pdf(law: MixingLaw, y: float) -> float:
    """Density of the mixing law at y > 0 (alpha < 2 only)."""
    lp = positive_stable_logpdf(law, y)
    return math.exp(lp) if lp > slog.NEG_INF else 0.0
