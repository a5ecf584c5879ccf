"""SINR-ratio lower bound and distance-threshold selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .netgen import AreaGeometry, pathloss_moment

BISECTION_TOL = 0.1  # meters
BOUND_TOL = 1e-4     # bisection also continues until the bound overshoots the target by at most this


@dataclass(frozen=True)
class ThresholdQuery:
    """Target SINR ratio plus the network parameters it is evaluated for.

    Exactly one of ``K`` and ``beta_K`` (users per km^2) must be given.
    ``P`` may be a scalar (equal power) or a per-user vector.
    """

    rho_star: float
    alpha: float = 3.7
    r0: float = 1.0
    r: float = 10_000.0
    K: int | None = None
    beta_K: float | None = None
    P: float | np.ndarray = 1.0
    N0: float = 1e-8
    pdf_kind: str = "approx"

    def __post_init__(self):
        if not 0 <= self.rho_star < 1:
            raise ValueError("rho_star must lie in [0, 1)")
        if (self.K is None) == (self.beta_K is None):
            raise ValueError("give exactly one of K and beta_K")
        if self.pdf_kind not in ("exact", "approx", "asymptotic"):
            raise ValueError(f"unknown pdf_kind {self.pdf_kind!r}")

    @property
    def geometry(self) -> AreaGeometry:
        return AreaGeometry.circle(self.r, self.r0)

    @property
    def n_users(self) -> int:
        if self.K is not None:
            return int(self.K)
        return int(round(self.beta_K * math.pi * (self.r / 1e3) ** 2))

    @property
    def user_density(self) -> float:
        """Users per m^2, using K - 1 ~ beta_K * pi * r^2 when only K is known."""
        if self.beta_K is not None:
            return self.beta_K / 1e6
        return (self.K - 1) / (math.pi * self.r**2)

    def with_target(self, rho_star: float) -> "ThresholdQuery":
        return replace(self, rho_star=rho_star)


def _moment_pdf(q: ThresholdQuery) -> str:
    return "exact" if q.pdf_kind == "exact" else "approx"


def moments(d0: float, q: ThresholdQuery) -> tuple[float, float]:
    """(mu, mu_hat(d0)) for the query's distance distribution."""
    pdf = _moment_pdf(q)
    geo = q.geometry
    return pathloss_moment(math.inf, q.alpha, geo, pdf), pathloss_moment(max(d0, q.r0), q.alpha, geo, pdf)


def sinr_ratio_lower_bound(d0: float, q: ThresholdQuery):
    """Lower bound on E[SINR_hat]/E[SINR].

    Scalar P gives the equal-power form. A power vector returns one bound per user,
    with the residual interference summed over the other users' powers.
    """
    mu, mu_hat = moments(d0, q)
    P = np.asarray(q.P, dtype=float)
    if P.ndim == 0:
        others = float(P) * (q.n_users - 1)
    else:
        others = P.sum() - P
    bound = mu_hat * q.N0 / (mu * ((mu - mu_hat) * others + q.N0))
    return float(bound) if np.ndim(bound) == 0 else bound


def _scalar_bound(d0: float, q: ThresholdQuery) -> float:
    b = sinr_ratio_lower_bound(d0, q)
    return float(np.min(b))


def solve_threshold(q: ThresholdQuery) -> float:
    """Smallest d0 (within 0.1 m) whose bound reaches rho_star, by bisection on [r0, 2r].

    Where the bound is steep (small d0) the bracket keeps shrinking until the bound at
    the returned d0 exceeds rho_star by at most BOUND_TOL.

    With ``pdf_kind='asymptotic'`` the infinite-network closed form is returned instead.
    """
    if q.pdf_kind == "asymptotic":
        return threshold_asymptotic(q)
    lo, hi = q.r0, 2 * q.r
    if _scalar_bound(hi, q) < q.rho_star:
        raise ValueError("target exceeds bound at full coverage")
    if _scalar_bound(lo, q) >= q.rho_star:
        return lo
    b_hi = _scalar_bound(hi, q)
    while hi - lo > BISECTION_TOL or (b_hi - q.rho_star > BOUND_TOL and hi - lo > 1e-9 * hi):
        mid = 0.5 * (lo + hi)
        b_mid = _scalar_bound(mid, q)
        if b_mid >= q.rho_star:
            hi, b_hi = mid, b_mid
        else:
            lo = mid
    return hi


def _equal_power(q: ThresholdQuery) -> float:
    P = np.asarray(q.P, dtype=float)
    return float(P) if P.ndim == 0 else float(P.mean())


def threshold_large_r(q: ThresholdQuery) -> float:
    """Closed-form d0 for r >> r0 (finite radius)."""
    a, r, r0, rho, N0 = q.alpha, q.r, q.r0, q.rho_star, q.N0
    P = _equal_power(q)
    t = a * r0 ** (2 - a) - 2 * r ** (2 - a)
    inner = r ** (2 - a) + t * (1 - rho) * N0 / (2 * N0 + 2 * rho * t * (q.n_users - 1) * P / ((a - 2) * r**2))
    return inner ** (-1 / (a - 2))


def threshold_asymptotic(q: ThresholdQuery) -> float:
    """Closed-form d0 as the network radius goes to infinity (depends on user density only)."""
    a, r0, rho, N0 = q.alpha, q.r0, q.rho_star, q.N0
    P = _equal_power(q)
    beta = q.user_density
    num = 2 * N0 * (a - 2) + 2 * a * r0 ** (a - 2) * rho * math.pi * beta * P
    den = a * r0 ** (2 - a) * N0 * (1 - rho) * (a - 2)
    return (num / den) ** (1 / (a - 2))


def expected_sparsity(d0: float, r: float) -> float:
    """Approximate fraction of non-zero entries in the sparsified channel."""
    if d0 > 2 * r:
        raise ValueError("d0 must not exceed the diameter")
    return d0**2 / r**2
