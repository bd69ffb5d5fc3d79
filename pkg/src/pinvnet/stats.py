"""Sample summaries and the two-sample Student's t-test.

Benchmark runs produce a handful of error values per configuration; this
module reduces them to (n, mean, sample std) triples and decides whether two
such summaries differ significantly. The t-distribution tail probability is
evaluated through the regularized incomplete beta function, written out here
as a continued fraction so the result does not depend on any optional
scientific stack.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

#: Relative tolerance for the continued-fraction iteration.
_CF_EPS = 1e-15
#: Guard against division by a vanishing partial denominator.
_CF_FPMIN = 1e-300
_CF_MAXIT = 300


@dataclasses.dataclass(frozen=True)
class SampleSummary:
    """Count, mean and sample standard deviation of one batch of reals."""

    n: int
    mean: float
    std: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"a sample summary needs n >= 2, got n={self.n}")
        if not (self.std >= 0.0):
            raise ValueError(f"standard deviation must be >= 0, got {self.std}")


@dataclasses.dataclass(frozen=True)
class TTestResult:
    """Outcome of a two-sample, two-tailed t-test."""

    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    significant: bool

    def __post_init__(self):
        if not (self.degrees_of_freedom > 0):
            raise ValueError(
                f"degrees of freedom must be positive, got {self.degrees_of_freedom}"
            )


def summarize(samples) -> SampleSummary:
    """Reduce a batch of real values to a :class:`SampleSummary`.

    The standard deviation uses the n-1 denominator, so at least two values
    are required.
    """
    arr = np.asarray(samples, dtype=np.float64).ravel()
    if arr.size < 2:
        raise ValueError(
            f"need at least two samples to summarize, got {arr.size}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples contain non-finite values")
    return SampleSummary(
        n=int(arr.size),
        mean=float(arr.mean()),
        std=float(arr.std(ddof=1)),
    )


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction in the incomplete
    # beta integral; converges fast for x < (a+1)/(a+b+2)
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_FPMIN:
        d = _CF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise RuntimeError(
        f"incomplete beta continued fraction did not converge for "
        f"a={a}, b={b}, x={x}"
    )


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the regularized incomplete beta function.

    Evaluated directly when x lies below (a+1)/(a+b+2) and through the
    reflection I_x(a, b) = 1 - I_{1-x}(b, a) otherwise, so the continued
    fraction always runs in its fast-converging region.
    """
    if not (a > 0.0 and b > 0.0):
        raise ValueError(f"beta parameters must be positive, got a={a}, b={b}")
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    """CDF of the Student's t-distribution with ``df`` degrees of freedom."""
    if not (df > 0.0 and math.isfinite(df)):
        raise ValueError(f"degrees of freedom must be positive and finite, got {df}")
    if math.isnan(t):
        raise ValueError("t statistic is NaN")
    if t == math.inf:
        return 1.0
    if t == -math.inf:
        return 0.0
    # I_x(df/2, 1/2) with x = df/(df + t^2) is P(|T| > |t|)
    x = df / (df + t * t)
    tail = regularized_incomplete_beta(0.5 * df, 0.5, x)
    if t > 0.0:
        return 1.0 - 0.5 * tail
    return 0.5 * tail


def two_tailed_p(t: float, df: float) -> float:
    """P(|T| > |t|) for a t-distributed T with ``df`` degrees of freedom."""
    if not (df > 0.0 and math.isfinite(df)):
        raise ValueError(f"degrees of freedom must be positive and finite, got {df}")
    if math.isnan(t):
        raise ValueError("t statistic is NaN")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(0.5 * df, 0.5, x)


def t_test(
    a: SampleSummary,
    b: SampleSummary,
    confidence: float = 0.95,
    pooled: bool = False,
) -> TTestResult:
    """Two-sample, two-tailed t-test between summaries ``a`` and ``b``.

    By default the Welch form is used: the standard error combines the two
    per-sample variances without assuming they are equal, and the degrees of
    freedom follow the Welch-Satterthwaite approximation. ``pooled=True``
    switches to the classic equal-variance form with n_a + n_b - 2 degrees
    of freedom.

    When both samples have zero variance the standard error vanishes; equal
    means then give t = 0 (not significant) and unequal means give an
    infinite t (significant), both reported with the pooled degrees of
    freedom.
    """
    if not (0.0 < confidence < 1.0):
        raise ValueError(f"confidence must lie strictly in (0, 1), got {confidence}")
    va = a.std * a.std / a.n
    vb = b.std * b.std / b.n
    if pooled:
        df = float(a.n + b.n - 2)
        sp2 = ((a.n - 1) * a.std * a.std + (b.n - 1) * b.std * b.std) / df
        se2 = sp2 * (1.0 / a.n + 1.0 / b.n)
    else:
        se2 = va + vb
        if se2 > 0.0:
            df = se2 * se2 / (
                va * va / (a.n - 1) + vb * vb / (b.n - 1)
            )
        else:
            df = float(a.n + b.n - 2)
    alpha = 1.0 - confidence
    if se2 == 0.0:
        # degenerate: neither sample varies at all
        df = float(a.n + b.n - 2)
        if a.mean == b.mean:
            return TTestResult(0.0, df, 1.0, False)
        t = math.inf if a.mean > b.mean else -math.inf
        return TTestResult(t, df, 0.0, True)
    t = (a.mean - b.mean) / math.sqrt(se2)
    p = two_tailed_p(t, df)
    return TTestResult(float(t), float(df), float(p), bool(p < alpha))
