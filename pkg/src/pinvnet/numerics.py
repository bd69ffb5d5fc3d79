"""Dense linear-algebra kernel: SVD, thresholded pseudoinversion, Tikhonov solves.

All operations work on 2-D float64 arrays and are pure functions of their
inputs, so they are safe to call concurrently. The hidden output matrix of a
network, its target matrix, and the solved output weights are all plain
``numpy.ndarray`` values; :func:`as_matrix` is the validation gate applied at
every public entry point.
"""

from __future__ import annotations

import dataclasses

import numpy as np

#: Double-precision unit roundoff, the epsilon in the default rank threshold.
EPS = float(np.finfo(np.float64).eps)


class SvdConvergenceError(RuntimeError):
    """The underlying SVD iteration failed to converge."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate ``a`` as a finite 2-D float64 matrix and return it.

    Raises ValueError unless the array is 2-D with at least one row and one
    column and every entry finite.
    """
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


@dataclasses.dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of a matrix: ``u @ diag(sigma) @ v.T`` reconstructs it.

    ``sigma`` holds the p = min(rows, cols) singular values in descending
    order; ``u`` is rows x p and ``v`` is cols x p, both with orthonormal
    columns.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def rows(self) -> int:
        return self.u.shape[0]

    @property
    def cols(self) -> int:
        return self.v.shape[0]


@dataclasses.dataclass(frozen=True)
class FilterFactors:
    """Per-singular-direction damping coefficients of a regularized solve.

    ``zeroed`` marks directions where sigma = 0 met lambda = 0 and the
    coefficient was defined as 0 by the truncation convention instead of the
    (undefined) formula value.
    """

    values: np.ndarray
    zeroed: np.ndarray


@dataclasses.dataclass(frozen=True)
class TruncationPolicy:
    """How small singular values are discarded when inverting them.

    ``default()`` uses the conventional rank tolerance
    max(rows, cols) * eps * sigma_1; ``threshold(tau)`` uses an explicit
    cutoff; ``rank(k)`` keeps the k largest singular values.
    """

    mode: str
    value: float | None = None

    @classmethod
    def default(cls) -> "TruncationPolicy":
        return cls("default")

    @classmethod
    def threshold(cls, tau: float) -> "TruncationPolicy":
        tau = float(tau)
        if not (tau >= 0.0 and np.isfinite(tau)):
            raise ValueError(f"explicit threshold must be finite and >= 0, got {tau}")
        return cls("threshold", tau)

    @classmethod
    def rank(cls, k: int) -> "TruncationPolicy":
        k = int(k)
        if k < 0:
            raise ValueError(f"rank must be >= 0, got {k}")
        return cls("rank", k)

    def inverse_sigma(self, factors: SvdFactors) -> np.ndarray:
        """Diagonal of the truncated inverse: 1/sigma_i where kept, else 0."""
        sigma = factors.sigma
        if self.mode == "default":
            keep = sigma > default_threshold(factors, factors.rows, factors.cols)
        elif self.mode == "threshold":
            keep = sigma > self.value
        elif self.mode == "rank":
            if self.value > sigma.size:
                raise ValueError(
                    f"rank {self.value} exceeds min(rows, cols) = {sigma.size}"
                )
            keep = np.zeros(sigma.size, dtype=bool)
            keep[: self.value] = True
            keep &= sigma > 0.0
        else:  # pragma: no cover - constructors forbid this
            raise ValueError(f"unknown truncation mode {self.mode!r}")
        inv = np.zeros_like(sigma)
        inv[keep] = 1.0 / sigma[keep]
        return inv


def svd(h) -> SvdFactors:
    """Thin singular value decomposition of a matrix.

    Returns factors with descending singular values; raises
    SvdConvergenceError if the decomposition does not converge (it never
    returns silently wrong factors).
    """
    h = as_matrix(h, "h")
    try:
        u, sigma, vt = np.linalg.svd(h, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(
            f"SVD failed to converge on a {h.shape[0]}x{h.shape[1]} matrix"
        ) from exc
    return SvdFactors(u=u, sigma=sigma, v=vt.T)


def default_threshold(factors: SvdFactors, rows: int, cols: int) -> float:
    """Conventional rank tolerance: max(rows, cols) * eps * sigma_1.

    Singular values at or below this are treated as zero when inverting.
    Returns 0 for the zero matrix.
    """
    if factors.sigma.size == 0 or factors.sigma[0] == 0.0:
        return 0.0
    return max(rows, cols) * EPS * float(factors.sigma[0])


def min_sigma_ratio(factors: SvdFactors, tau: float) -> float:
    """Ratio of the smallest singular value to the truncation threshold.

    A ratio below 1 signals that the smallest singular direction has sunk
    into the numerically unstable regime where inversion amplifies rounding
    noise. Raises ValueError when tau is not positive (ratio undefined).
    """
    tau = float(tau)
    if not tau > 0.0:
        raise ValueError(f"threshold must be positive, got {tau}: ratio undefined")
    return float(factors.sigma[-1]) / tau


def filter_factors(factors: SvdFactors, lam: float) -> FilterFactors:
    """Regularized inversion coefficients sigma_i / (sigma_i^2 + lambda).

    For lambda > 0 every coefficient is bounded by 1/(2*sqrt(lambda)), so no
    direction can diverge the way 1/sigma does. At lambda = 0 the formula
    reduces to 1/sigma_i; directions with sigma_i = 0 are then defined as 0
    (truncation convention) and flagged in ``zeroed``.
    """
    lam = _check_lambda(lam)
    sigma = factors.sigma
    zeroed = (sigma == 0.0) & (lam == 0.0)
    denom = sigma * sigma + lam
    safe = denom > 0.0
    values = np.zeros_like(sigma)
    values[safe] = sigma[safe] / denom[safe]
    return FilterFactors(values=values, zeroed=zeroed)


def solve_from_factors(factors: SvdFactors, t, coefficients: np.ndarray) -> np.ndarray:
    """Apply a filtered inverse: W = V diag(coefficients) U^T T.

    Shared application step for the truncated pseudoinverse and the Tikhonov
    filter; ``coefficients`` replaces the 1/sigma_i diagonal.
    """
    t = as_matrix(t, "t")
    if factors.rows != t.shape[0]:
        raise ValueError(
            f"factors describe {factors.rows} rows but t has {t.shape[0]} rows"
        )
    return factors.v @ (coefficients[:, None] * (factors.u.T @ t))


def pseudoinverse_solve(h, t, policy: TruncationPolicy | None = None) -> np.ndarray:
    """Minimum-norm least-squares solution of H W = T by thresholded SVD.

    Singular values discarded by ``policy`` (default: the conventional rank
    tolerance) contribute zero instead of being inverted, which is what keeps
    the solve finite when H is numerically rank-deficient.
    """
    h = as_matrix(h, "h")
    t = as_matrix(t, "t")
    if h.shape[0] != t.shape[0]:
        raise ValueError(f"h has {h.shape[0]} rows but t has {t.shape[0]} rows")
    if policy is None:
        policy = TruncationPolicy.default()
    factors = svd(h)
    return solve_from_factors(factors, t, policy.inverse_sigma(factors))


def tikhonov_solve(h, t, lam: float) -> np.ndarray:
    """Tikhonov-regularized least-squares solution of H W = T.

    Equals V D U^T T with D_i = sigma_i / (sigma_i^2 + lambda), the
    filter-factor form of (H^T H + lambda I)^(-1) H^T T. With lambda = 0 and
    full-rank H this coincides with the unregularized pseudoinverse solution.
    """
    h = as_matrix(h, "h")
    t = as_matrix(t, "t")
    if h.shape[0] != t.shape[0]:
        raise ValueError(f"h has {h.shape[0]} rows but t has {t.shape[0]} rows")
    factors = svd(h)
    return solve_from_factors(factors, t, filter_factors(factors, lam).values)


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (lam >= 0.0 and np.isfinite(lam)):
        raise ValueError(f"regularization parameter must be finite and >= 0, got {lam}")
    return lam
