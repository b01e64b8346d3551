"""Exact binomial tail tests and related estimators.

Everything here is a pure function of its arguments. The exact tests are
evaluated entirely in log space (log-gamma binomial coefficients, max-shifted
log-sum-exp accumulation) so that they stay accurate for sample counts up to
10**6 and for tail masses far below double-precision underflow of the naive
product form.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, exp, floor, isfinite, lgamma, log, log1p, pi, sqrt

import numpy as np
from scipy.special import ndtri


class ParameterError(ValueError):
    """An argument is outside its documented range."""


@dataclass(frozen=True)
class BinomTestOutcome:
    """Tally of one per-input test: both one-sided p-values for (n, k).

    p_left and p_right overlap on the point mass at k, so
    p_left + p_right - pmf(k) == 1.
    """

    n: int
    k: int
    p_left: float
    p_right: float


def _check_nk(n: int, k: int) -> None:
    if n < 1:
        raise ParameterError(f"sample count must be positive, got n={n}")
    if not 0 <= k <= n:
        raise ParameterError(f"success count k={k} outside [0, n={n}]")


def _check_prob(name: str, value: float, lo: float = 0.0, hi: float = 1.0) -> None:
    if not (lo < value < hi):
        raise ParameterError(f"{name}={value} outside ({lo}, {hi})")


# Stirling-series coefficients for the log-gamma correction term.
_S0, _S1, _S2, _S3, _S4 = 1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188
_HALF_LOG_2PI = 0.5 * log(2.0 * pi)


def _stirlerr(n: float) -> float:
    """lgamma(n+1) - ((n+0.5)log n - n + 0.5 log 2pi).

    Direct evaluation below 16 (no damaging cancellation there), truncated
    Stirling series above. Keeping this term separate is what lets the pmf
    stay accurate to ~1 ulp at n ~ 10^6, where a raw lgamma difference loses
    seven digits.
    """
    if n < 16:
        return lgamma(n + 1.0) - (n + 0.5) * log(n) + n - _HALF_LOG_2PI
    nn = n * n
    if n > 500:
        return (_S0 - _S1 / nn) / n
    if n > 80:
        return (_S0 - (_S1 - _S2 / nn) / nn) / n
    if n > 35:
        return (_S0 - (_S1 - (_S2 - _S3 / nn) / nn) / nn) / n
    return (_S0 - (_S1 - (_S2 - (_S3 - _S4 / nn) / nn) / nn) / nn) / n


def _bd0(x: float, m: float) -> float:
    """Binomial deviance x*log(x/m) + m - x, stable when x is near m."""
    if abs(x - m) < 0.1 * (x + m):
        v = (x - m) / (x + m)
        s = (x - m) * v
        ej = 2.0 * x * v
        j = 1
        while True:
            ej *= v * v
            s1 = s + ej / (2 * j + 1)
            if s1 == s:
                return s1
            s = s1
            j += 1
    return x * log(x / m) + m - x


def _log_pmf(n: int, k: int, kappa: float) -> float:
    """log P(K = k) for K ~ Bin(n, kappa) via the saddle-point form."""
    if k == 0:
        return n * log1p(-kappa)
    if k == n:
        return n * log(kappa)
    lc = (
        _stirlerr(float(n))
        - _stirlerr(float(k))
        - _stirlerr(float(n - k))
        - _bd0(float(k), n * kappa)
        - _bd0(float(n - k), n * (1.0 - kappa))
    )
    return lc + 0.5 * log(n / (2.0 * pi * k * (n - k)))


def _tail_window(n: int, kappa: float) -> int:
    # 14 standard deviations: terms beyond it are < 1e-42 of the anchor.
    return int(ceil(14.0 * sqrt(n * kappa * (1.0 - kappa)))) + 30


def _scaled_term_sum(n: int, kappa: float, anchor: int, lo: int, hi: int) -> float:
    """sum_{i=lo..hi} pmf(i)/pmf(anchor) with lo <= anchor <= hi.

    Terms are propagated from the anchor by the exact pmf ratio, so each one
    carries only a few ulps of rounding regardless of n; np.sum is pairwise.
    """
    total = 1.0
    if anchor > lo:
        i = np.arange(anchor, lo, -1.0)
        ratios = (i * (1.0 - kappa)) / ((n - i + 1.0) * kappa)
        total += float(np.sum(np.cumprod(ratios)))
    if hi > anchor:
        i = np.arange(anchor, float(hi))
        ratios = ((n - i) * kappa) / ((i + 1.0) * (1.0 - kappa))
        total += float(np.sum(np.cumprod(ratios)))
    return total


def binom_left_pvalue(n: int, k: int, kappa: float) -> float:
    """Lower-tail mass P(K <= k) for K ~ Bin(n, kappa), exactly.

    A small value is evidence that the true success probability is below
    kappa; it is the p-value of the one-sided test whose rejection certifies
    probabilistic robustness. Accurate to better than twelve significant
    digits for n up to 10^6.
    """
    _check_nk(n, k)
    _check_prob("kappa", kappa)
    if k == n:
        return 1.0
    anchor = min(int(floor((n + 1) * kappa)), k)
    w = _tail_window(n, kappa)
    lo = max(0, anchor - w)
    hi = min(k, anchor + w)
    total = _scaled_term_sum(n, kappa, anchor, lo, hi)
    return min(1.0, exp(_log_pmf(n, anchor, kappa) + log(total)))


def binom_right_pvalue(n: int, k: int, kappa: float) -> float:
    """Upper-tail mass P(K >= k) for K ~ Bin(n, kappa), exactly.

    A small value is evidence that the true success probability exceeds
    kappa (the refutation direction).
    """
    _check_nk(n, k)
    _check_prob("kappa", kappa)
    if k == 0:
        return 1.0
    anchor = min(max(int(floor((n + 1) * kappa)), k), n)
    w = _tail_window(n, kappa)
    lo = max(k, anchor - w)
    hi = min(n, anchor + w)
    total = _scaled_term_sum(n, kappa, anchor, lo, hi)
    return min(1.0, exp(_log_pmf(n, anchor, kappa) + log(total)))


def binom_test_outcome(n: int, k: int, kappa: float) -> BinomTestOutcome:
    """Both one-sided exact p-values for a tally of k mispredictions in n."""
    return BinomTestOutcome(
        n=n,
        k=k,
        p_left=binom_left_pvalue(n, k, kappa),
        p_right=binom_right_pvalue(n, k, kappa),
    )


def one_sided_z(alpha: float) -> float:
    """Positive standard-normal quantile Phi^-1(1 - alpha); 1.645 at 0.05."""
    _check_prob("alpha", alpha)
    return float(ndtri(1.0 - alpha))


def agresti_coull_lower(n: int, k: int, alpha: float) -> float:
    """One-sided Agresti-Coull lower confidence limit for a proportion.

    Shipped only as the approximate comparison baseline: with the adjusted
    estimate p~ = (k + z^2/2) / (n + z^2) the limit is
    p~ - z*sqrt(p~(1-p~)/(n+z^2)). The certification path never uses it; in
    small samples its associated rejection rule (reject when the limit
    exceeds the tolerance) can overstate the evidence relative to the exact
    test.
    """
    _check_nk(n, k)
    z = one_sided_z(alpha)
    p_tilde = (k + z * z / 2.0) / (n + z * z)
    return p_tilde - z * np.sqrt(p_tilde * (1.0 - p_tilde) / (n + z * z))


def agresti_coull_rejects(n: int, k: int, kappa: float, alpha: float) -> bool:
    """The approximate rule as commonly stated: reject when the lower
    confidence limit lands above kappa."""
    return agresti_coull_lower(n, k, alpha) > kappa


class UndefinedSeparationError(ParameterError):
    """Sample-size formula is undefined when the estimate equals kappa."""


def required_sample_size(kappa: float, alpha: float, p_hat: float) -> int:
    """Samples needed to separate a proportion p_hat from the tolerance kappa.

    Evaluates n = ((z*sqrt(kappa(1-kappa)) + z*sqrt(p_hat(1-p_hat))) /
    (kappa - p_hat))^2 with z = Phi^-1(1-alpha) in both terms, rounded up.
    Callers clamp the result to their pilot/budget window.
    """
    _check_prob("kappa", kappa)
    _check_prob("alpha", alpha)
    if not 0.0 <= p_hat <= 1.0:
        raise ParameterError(f"p_hat={p_hat} outside [0, 1]")
    if p_hat == kappa:
        raise UndefinedSeparationError(
            f"p_hat == kappa == {kappa}: required sample size diverges"
        )
    z = one_sided_z(alpha)
    numer = z * np.sqrt(kappa * (1.0 - kappa)) + z * np.sqrt(p_hat * (1.0 - p_hat))
    n = (numer / (kappa - p_hat)) ** 2
    return max(1, int(ceil(n)))


def min_left_rejection_n(kappa: float, alpha: float) -> int:
    """Smallest n at which a zero-misprediction tally can reject leftward,
    i.e. (1-kappa)^n <= alpha. 29 for kappa=0.1, alpha=0.05."""
    _check_prob("kappa", kappa)
    _check_prob("alpha", alpha)
    return max(1, int(ceil(log(alpha) / np.log1p(-kappa))))


def tower_expectation(weights, values) -> float:
    """Mixture expectation sum(w_i * v_i) over an explicit probability vector.

    The two-machine payout mixture 0.4*5 + 0.6*4 = 4.40 is the canonical
    sanity check.
    """
    w = np.asarray(weights, dtype=float)
    v = np.asarray(values, dtype=float)
    if w.shape != v.shape or w.ndim != 1:
        raise ParameterError(
            f"weights shape {w.shape} does not match values shape {v.shape}"
        )
    if np.any(w < 0.0):
        raise ParameterError("weights must be nonnegative")
    total = float(np.sum(w))
    if abs(total - 1.0) > 1e-12:
        raise ParameterError(f"weights sum to {total}, not 1")
    if not all(isfinite(x) for x in (float(np.sum(np.abs(v))),)):
        raise ParameterError("values must be finite")
    return float(np.dot(w, v))
