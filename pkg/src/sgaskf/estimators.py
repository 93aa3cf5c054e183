"""MMSE estimators of the scale-function expectation E[kappa(lambda)].

For the sub-Gaussian alpha-stable likelihood the quantity is E[y^-1] under the
unnormalised mixing posterior

    q'(y) = y^(-m/2) * exp(-eta / (2 y)) * S(y),

with S the positive stable mixing density.  Three routes are provided:
self-normalised importance sampling with S as the proposal, Gauss-Laguerre
quadrature after the substitution y = eta / (2 x), and a gamma-function series
obtained from the inverse-gamma expansion of q'.  The series converges only on
part of the (alpha, eta) plane, so the hybrid estimators run it first and fall
back to IS or GLQ when its tail-stability test fails.

Closed-form posterior means for the Student's t, slash and variance-gamma
benchmark families (scale function kappa(y) = y) live here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gammainc, gammaln, kve, logsumexp

from . import slog, stable
from .slog import SignedLog
from .stable import MixingLaw

# Below this eta the substitution y = eta/(2x) and the series rate b = eta/2
# degenerate; callers route to importance sampling instead.
ETA_FLOOR = 1e-12
# Partial sums smaller than this in linear scale make the Eq-style tail ratio
# meaningless; the convergence check fails closed for that index.
PARTIAL_SUM_FLOOR_LOG = math.log(1e-300)


class EstimatorFailure(RuntimeError):
    """Raised when every weight or node value underflowed to zero."""


class DegenerateEtaError(ValueError):
    """Raised when eta is too small for the requested estimator."""


@dataclass(frozen=True)
class ScalePosterior:
    """The triple (eta, m, mixing law) defining q'(y) up to normalisation."""

    eta: float
    m: int
    law: MixingLaw

    def __post_init__(self) -> None:
        if self.eta < 0.0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")


@dataclass(frozen=True)
class GammaSeriesConfig:
    """Truncation cap, tail threshold and stability window of the series test."""

    cap_xi: int = 30
    eps1: float = 1e-2
    tau1: int = 4

    def __post_init__(self) -> None:
        if self.tau1 < 1:
            raise ValueError(f"tau1 must be >= 1, got {self.tau1}")
        if self.tau1 >= self.cap_xi:
            raise ValueError(f"tau1 must be < cap_xi, got {self.tau1} >= {self.cap_xi}")
        if self.eps1 <= 0.0:
            raise ValueError(f"eps1 must be positive, got {self.eps1}")


@dataclass(frozen=True, eq=False)
class LaguerreRule:
    order: int
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class EstimateOutcome:
    """E[y^-1] estimate plus which route produced it."""

    value: float
    method_used: str  # 'is' | 'glq' | 'gs'
    gs_terms_used: int | None = None


@lru_cache(maxsize=None)
def _laguerre_rule_cached(order: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    # Newton iteration on the L-th Laguerre polynomial; initial guesses march
    # outward from the previous roots (deflation-style), then weights follow
    # w_l = x_l / ((L+1)^2 * L_{L+1}(x_l)^2).
    L = order
    x = [0.0] * L
    w = [0.0] * L
    z = 0.0
    for i in range(L):
        if i == 0:
            z = 3.0 / (1.0 + 2.4 * L)
        elif i == 1:
            z += 15.0 / (1.0 + 2.5 * L)
        else:
            step = i - 1
            z += ((1.0 + 2.55 * step) / (1.9 * step)) * (z - x[i - 2])
        for _ in range(100):
            p1, p2 = 1.0, 0.0
            for j in range(1, L + 1):
                p1, p2 = ((2 * j - 1 - z) * p1 - (j - 1) * p2) / j, p1
            derivative = L * (p1 - p2) / z
            z_prev = z
            z -= p1 / derivative
            if abs(z - z_prev) <= 1e-15 * max(1.0, abs(z)):
                break
        x[i] = z
        p1, p2 = 1.0, 0.0
        for j in range(1, L + 2):
            p1, p2 = ((2 * j - 1 - z) * p1 - (j - 1) * p2) / j, p1
        w[i] = z / ((L + 1) ** 2 * p1 * p1)
    return tuple(x), tuple(w)


def laguerre_rule(order: int) -> LaguerreRule:
    """Gauss-Laguerre nodes and weights for exp(-x) on (0, inf), cached per order."""
    if not 1 <= order <= 64:
        raise ValueError(f"order must be in [1, 64], got {order}")
    nodes, weights = _laguerre_rule_cached(order)
    return LaguerreRule(order=order, nodes=np.array(nodes), weights=np.array(weights))


def is_inverse_mean(samples: np.ndarray, eta: float, m: int) -> float:
    """Self-normalised IS value of E[y^-1] from given mixing-law draws.

    Weights w_i propto y_i^(-m/2) exp(-eta/(2 y_i)) are formed in log domain
    with max subtraction, so at least one weight is exactly 1 whenever any
    weight is representable.
    """
    log_w = -(m / 2.0) * np.log(samples) - eta / (2.0 * samples)
    peak = np.max(log_w)
    if not np.isfinite(peak):
        raise EstimatorFailure("all importance weights underflowed")
    w = np.exp(log_w - peak)
    return float(np.sum(w / samples) / np.sum(w))


def estimate_is(post: ScalePosterior, n_particles: int, rng: np.random.Generator) -> EstimateOutcome:
    """Importance sampling with the mixing density as proposal (fresh draws)."""
    if post.law.alpha >= 2.0:
        raise ValueError("importance sampling needs alpha < 2 (degenerate mixing law)")
    if n_particles < 1:
        raise ValueError(f"n_particles must be >= 1, got {n_particles}")
    y = stable.sample_positive_stable(post.law, n_particles, rng)
    return EstimateOutcome(value=is_inverse_mean(y, post.eta, post.m), method_used="is")


def estimate_glq(post: ScalePosterior, rule: LaguerreRule) -> EstimateOutcome:
    """Gauss-Laguerre estimate via the substitution y = eta / (2 x).

    E[y^-1] ~= sum(w_l x_l f(x_l)) / ((eta/2) sum(w_l f(x_l))) with
    f(x) = x^(m/2 - 2) S(eta / (2 x)); f is evaluated through the log-density
    and the ratio assembled with log-sum-exp, so node values may underflow
    individually without corrupting the estimate.
    """
    if post.law.alpha >= 2.0:
        raise ValueError("GLQ estimator needs alpha < 2 (degenerate mixing law)")
    if post.eta <= ETA_FLOOR:
        raise DegenerateEtaError(
            f"eta = {post.eta} collapses the substitution y = eta/(2x); use IS"
        )
    x = rule.nodes
    log_f = np.array(
        [
            (post.m / 2.0 - 2.0) * math.log(xl)
            + stable.positive_stable_logpdf(post.law, post.eta / (2.0 * xl))
            for xl in x
        ]
    )
    if not np.any(np.isfinite(log_f)):
        raise EstimatorFailure("f underflowed at every Laguerre node")
    log_w = np.log(rule.weights)
    log_num = logsumexp(log_w + np.log(x) + log_f)
    log_den = math.log(post.eta / 2.0) + logsumexp(log_w + log_f)
    return EstimateOutcome(value=float(np.exp(log_num - log_den)), method_used="glq")


def gamma_series_terms(post: ScalePosterior, xi: int) -> tuple[SignedLog, SignedLog]:
    """Signed-log terms (r1, r2) of the numerator and denominator series.

    r1 = c_xi Gamma(a_xi + 1) / b^(a_xi + 1) and r2 = c_xi Gamma(a_xi) / b^a_xi
    with a_xi = xi * alpha1 + m/2, b = eta/2 and c_xi the shared stable-series
    coefficient.
    """
    if xi < 1:
        raise ValueError(f"xi must be >= 1, got {xi}")
    if post.eta <= 0.0:
        raise DegenerateEtaError("gamma series needs eta > 0 (b = eta/2 is a rate)")
    a1 = post.law.alpha1
    c = stable.series_coefficient(a1, xi)
    if c[0] == 0:
        return slog.ZERO, slog.ZERO
    a = xi * a1 + post.m / 2.0
    log_b = math.log(post.eta / 2.0)
    r1: SignedLog = (c[0], c[1] + gammaln(a + 1.0) - (a + 1.0) * log_b)
    r2: SignedLog = (c[0], c[1] + gammaln(a) - a * log_b)
    return r1, r2


def tail_window_converged(ratios: list[float], tau1: int, eps1: float) -> bool:
    """Tail-stability test: sum of the last tau1+1 ratios |r_xi / S_xi| < eps1."""
    if len(ratios) < tau1 + 1:
        return False
    return sum(ratios[-(tau1 + 1):]) < eps1


def estimate_gs(post: ScalePosterior, cfg: GammaSeriesConfig) -> EstimateOutcome | None:
    """Gamma-series estimate, or None when the series fails its convergence test.

    Both partial sums accumulate in signed-log arithmetic.  From index
    tau1 + 1 onward (and strictly before cap_xi) the tail-stability window is
    checked for both series; at the first passing index the ratio of partial
    sums is returned, provided both sums exponentiate to positive numbers.
    """
    if post.eta <= ETA_FLOOR:
        raise DegenerateEtaError(f"eta = {post.eta} gives a degenerate series rate b")
    if post.law.alpha1 >= 1.0:
        raise ValueError("gamma series needs alpha1 = alpha/2 < 1")
    sums: list[SignedLog] = [slog.ZERO, slog.ZERO]
    ratios: tuple[list[float], list[float]] = ([], [])
    for xi in range(1, cfg.cap_xi + 1):
        terms = gamma_series_terms(post, xi)
        for j in range(2):
            sums[j] = slog.add(sums[j], terms[j])
            if sums[j][0] == 0 or sums[j][1] < PARTIAL_SUM_FLOOR_LOG:
                ratios[j].append(math.inf)
            elif terms[j][0] == 0:
                ratios[j].append(0.0)
            else:
                ratios[j].append(math.exp(terms[j][1] - sums[j][1]))
        if xi < cfg.cap_xi and all(
            tail_window_converged(ratios[j], cfg.tau1, cfg.eps1) for j in range(2)
        ):
            if sums[0][0] <= 0 or sums[1][0] <= 0:
                return None  # a nonpositive sum cannot be a positive expectation
            value = math.exp(sums[0][1] - sums[1][1])
            return EstimateOutcome(value=value, method_used="gs", gs_terms_used=xi)
    return None


def estimate_hybrid(
    kind: str,
    post: ScalePosterior,
    cfg: GammaSeriesConfig,
    n_particles: int,
    rule: LaguerreRule,
    rng: np.random.Generator,
) -> EstimateOutcome:
    """Gamma series first; on divergence fall back to IS (gsis) or GLQ (gsgl).

    A degenerate eta skips the series outright.  The gsgl fallback itself
    degrades to IS when eta is unusable for the quadrature substitution.
    """
    if kind not in ("gsis", "gsgl"):
        raise ValueError(f"kind must be 'gsis' or 'gsgl', got {kind!r}")
    if post.eta > ETA_FLOOR:
        outcome = estimate_gs(post, cfg)
        if outcome is not None:
            return outcome
    if kind == "gsis":
        return estimate_is(post, n_particles, rng)
    try:
        return estimate_glq(post, rule)
    except DegenerateEtaError:
        return estimate_is(post, n_particles, rng)


# ---------------------------------------------------------------------------
# Closed-form scale means for the benchmark GSM families, kappa(y) = y.
# ---------------------------------------------------------------------------

def slash_scale_mean(eta: float, m: int, v: float) -> float:
    """Posterior mean of y for the slash family.

    q'(y) propto y^((m+v-2)/2) exp(-eta y / 2) on (0, 1), so
    E[y] = gammainc(a+1, b) / (b * gammainc(a, b)) with a = (m+v)/2, b = eta/2;
    the b -> 0 limit is a / (a+1).
    """
    if eta < 0.0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    if v <= 0.0:
        raise ValueError(f"v must be positive, got {v}")
    a = (m + v) / 2.0
    b = eta / 2.0
    if b < 1e-12:
        return a / (a + 1.0)
    # gammainc is the regularised P(a, x); the Gamma(a) factors fold into a/b.
    return a * gammainc(a + 1.0, b) / (b * gammainc(a, b))


def student_t_scale_mean(eta: float, m: int, v: float) -> float:
    """Posterior mean of y for the Student's t family: conjugate gamma posterior."""
    if eta < 0.0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    if v <= 0.0:
        raise ValueError(f"v must be positive, got {v}")
    return (m + v) / (eta + v)


def _gig_mean_quadrature(eta: float, m: int, v: float) -> float:
    # density y^(p-1) exp(-(eta y + v/y)/2), normalised by its value at the
    # mode so narrow, far-from-unit-scale posteriors stay representable
    p = (m - v) / 2.0
    mode = ((p - 1.0) + math.sqrt((p - 1.0) ** 2 + eta * v)) / eta

    def log_density(y: float) -> float:
        return (p - 1.0) * math.log(y) - (eta * y + v / y) / 2.0

    peak = log_density(mode)

    def density(y: float, extra: float) -> float:
        if y <= 0.0:
            return 0.0
        return math.exp(log_density(y) + extra * math.log(y) - peak)

    edges = [0.0, mode / 10.0, mode, 10.0 * mode]
    num = den = 0.0
    for a, b in zip(edges, edges[1:] + [np.inf]):
        num += integrate.quad(density, a, b, args=(1.0,), limit=200)[0]
        den += integrate.quad(density, a, b, args=(0.0,), limit=200)[0]
    if den <= 0.0:
        raise EstimatorFailure("GIG quadrature underflowed to zero mass")
    return num / den


def vg_scale_mean(eta: float, m: int, v: float) -> float:
    """Posterior mean of y for the variance-gamma family.

    The posterior is generalised inverse Gaussian with index p = (m-v)/2 and
    parameters (eta, v): E[y] = sqrt(v/eta) K_{p+1}(s) / K_p(s), s = sqrt(v eta).
    Exponentially scaled Bessel functions keep the ratio finite; if they still
    misbehave the mean is recovered by direct quadrature.
    """
    if eta <= 0.0 or not math.isfinite(eta):
        raise ValueError(f"eta must be positive and finite, got {eta}")
    if v <= 0.0:
        raise ValueError(f"v must be positive, got {v}")
    p = (m - v) / 2.0
    s = math.sqrt(v * eta)
    num = kve(p + 1.0, s)
    den = kve(p, s)
    if not (np.isfinite(num) and np.isfinite(den)) or den == 0.0:
        return _gig_mean_quadrature(eta, m, v)
    return math.sqrt(v / eta) * float(num / den)
