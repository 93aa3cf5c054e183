"""Signed log-domain arithmetic.

A signed-log number is the pair (sign, logmag) representing sign * exp(logmag).
Zero is (0, -inf). Gamma-function factors such as Gamma(xi * a1 + 1) overflow
double precision near xi ~ 170 / a1, so series terms and partial sums are kept
in this representation throughout.
"""

from __future__ import annotations

import math

NEG_INF = float("-inf")

SignedLog = tuple[int, float]

ZERO: SignedLog = (0, NEG_INF)


def from_linear(x: float) -> SignedLog:
    if x == 0.0:
        return ZERO
    if x > 0:
        return (1, math.log(x))
    return (-1, math.log(-x))


def to_linear(a: SignedLog) -> float:
    s, l = a
    if s == 0:
        return 0.0
    if l > 709.0:  # exp would overflow double range
        return s * math.inf
    return s * math.exp(l)


def mul(a: SignedLog, b: SignedLog) -> SignedLog:
    if a[0] == 0 or b[0] == 0:
        return ZERO
    return (a[0] * b[0], a[1] + b[1])


def add(a: SignedLog, b: SignedLog) -> SignedLog:
    """Add two signed-log numbers via log-sum-exp / log-diff-exp."""
    sa, la = a
    sb, lb = b
    if sa == 0:
        return b
    if sb == 0:
        return a
    if sa == sb:
        # same sign: logaddexp
        if la >= lb:
            return (sa, la + math.log1p(math.exp(lb - la)))
        return (sa, lb + math.log1p(math.exp(la - lb)))
    # opposite signs: cancellation
    if la == lb:
        return ZERO
    if la > lb:
        return (sa, la + math.log1p(-math.exp(lb - la)))
    return (sb, lb + math.log1p(-math.exp(la - lb)))
