"""Synthetic C-RAN layouts and RRH-user distance statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

# absolute tolerance used for every pdf quadrature
QUAD_ABS_TOL = 1e-10


@dataclass(frozen=True)
class AreaGeometry:
    """Coverage area. Circles are centred at the origin, rectangles span [0, a_x] x [0, a_y]."""

    shape: str = "circle"
    radius: float | None = None
    a_x: float | None = None
    a_y: float | None = None
    r0: float = 1.0

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")
        if self.shape == "circle":
            if self.radius is None or not self.radius > self.r0:
                raise ValueError("circle geometry needs radius > r0")
        elif self.shape == "rectangle":
            if self.a_x is None or self.a_y is None:
                raise ValueError("rectangle geometry needs a_x and a_y")
            if self.a_x <= 2 * self.r0 or self.a_y <= 2 * self.r0:
                raise ValueError("rectangle sides must exceed 2*r0")
        else:
            raise ValueError(f"unknown shape {self.shape!r}")

    @classmethod
    def circle(cls, radius: float, r0: float = 1.0) -> "AreaGeometry":
        return cls("circle", radius=float(radius), r0=float(r0))

    @classmethod
    def rectangle(cls, a_x: float, a_y: float, r0: float = 1.0) -> "AreaGeometry":
        return cls("rectangle", a_x=float(a_x), a_y=float(a_y), r0=float(r0))

    @classmethod
    def square(cls, side: float, r0: float = 1.0) -> "AreaGeometry":
        return cls.rectangle(side, side, r0)

    @property
    def area(self) -> float:
        """Area in m^2."""
        if self.shape == "circle":
            return math.pi * self.radius**2
        return self.a_x * self.a_y

    def bbox(self) -> tuple[float, float, float, float]:
        """(x0, y0, width, height) of the bounding box used for labelling."""
        if self.shape == "circle":
            return (-self.radius, -self.radius, 2 * self.radius, 2 * self.radius)
        return (0.0, 0.0, self.a_x, self.a_y)

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        if self.shape == "circle":
            return np.hypot(xy[:, 0], xy[:, 1]) <= self.radius
        return (xy[:, 0] >= 0) & (xy[:, 0] <= self.a_x) & (xy[:, 1] >= 0) & (xy[:, 1] <= self.a_y)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.shape == "circle":
            rad = self.radius * np.sqrt(rng.random(n))
            theta = 2 * np.pi * rng.random(n)
            return np.column_stack([rad * np.cos(theta), rad * np.sin(theta)])
        return rng.random((n, 2)) * np.array([self.a_x, self.a_y])

    def to_dict(self) -> dict:
        if self.shape == "circle":
            return {"shape": "circle", "radius": self.radius, "r0": self.r0}
        return {"shape": "rectangle", "a_x": self.a_x, "a_y": self.a_y, "r0": self.r0}

    @classmethod
    def from_dict(cls, d: dict) -> "AreaGeometry":
        if d["shape"] == "circle":
            return cls.circle(d["radius"], d.get("r0", 1.0))
        if d["shape"] == "square":
            return cls.square(d["side"], d.get("r0", 1.0))
        return cls.rectangle(d["a_x"], d["a_y"], d.get("r0", 1.0))


def count_from_density(beta_per_km2: float, geometry: AreaGeometry) -> int:
    """Number of nodes for a density given per km^2, e.g. 10/km^2 on a 5 km disk -> 785."""
    return int(round(beta_per_km2 * geometry.area / 1e6))


@dataclass
class NetworkLayout:
    rrh_positions: np.ndarray
    user_positions: np.ndarray
    geometry: AreaGeometry
    seed: int | None = None
    beta_N: float = field(init=False)
    beta_K: float = field(init=False)

    def __post_init__(self):
        self.rrh_positions = np.asarray(self.rrh_positions, dtype=float).reshape(-1, 2)
        self.user_positions = np.asarray(self.user_positions, dtype=float).reshape(-1, 2)
        area_km2 = self.geometry.area / 1e6
        self.beta_N = self.n_rrh / area_km2
        self.beta_K = self.n_user / area_km2

    @property
    def n_rrh(self) -> int:
        return len(self.rrh_positions)

    @property
    def n_user(self) -> int:
        return len(self.user_positions)

    def to_json(self) -> str:
        return json.dumps(
            {
                "geometry": self.geometry.to_dict(),
                "seed": self.seed,
                "rrh": self.rrh_positions.tolist(),
                "user": self.user_positions.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "NetworkLayout":
        d = json.loads(text)
        return cls(
            np.array(d["rrh"], dtype=float),
            np.array(d["user"], dtype=float),
            AreaGeometry.from_dict(d["geometry"]),
            seed=d.get("seed"),
        )


def generate_layout(geometry: AreaGeometry, n_rrh: int, n_user: int, seed: int) -> NetworkLayout:
    """Place RRHs and users i.i.d. uniformly over the area."""
    if n_rrh < 1 or n_user < 1:
        raise ValueError("empty network")
    rng = np.random.default_rng(seed)
    rrh = geometry.sample(rng, n_rrh)
    users = geometry.sample(rng, n_user)
    return NetworkLayout(rrh, users, geometry, seed=seed)


def raw_distances(layout: NetworkLayout) -> np.ndarray:
    """Unclamped N x K Euclidean distance matrix."""
    diff = layout.rrh_positions[:, None, :] - layout.user_positions[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def distance_matrix(layout: NetworkLayout) -> np.ndarray:
    """N x K distances clamped below at r0."""
    return np.maximum(raw_distances(layout), layout.geometry.r0)


def pairwise_distance(layout: NetworkLayout, n: int, k: int) -> float:
    d = layout.rrh_positions[n] - layout.user_positions[k]
    return max(math.hypot(d[0], d[1]), layout.geometry.r0)


def _require_circle(geometry: AreaGeometry):
    if geometry.shape != "circle":
        raise ValueError("distance distributions are only available for circular areas")


def _disk_density(x, r):
    # density of the distance between two uniform points in a disk of radius r
    x = np.asarray(x, dtype=float)
    u = np.clip(x / (2 * r), 0.0, 1.0)
    return (2 * x / r**2) * ((2 / np.pi) * np.arccos(u) - (x / (np.pi * r)) * np.sqrt(1 - u**2))


def point_mass(geometry: AreaGeometry, pdf: str = "exact") -> float:
    """Probability that a pair sits at the clamped distance r0."""
    _require_circle(geometry)
    r, r0 = geometry.radius, geometry.r0
    if pdf == "approx":
        return r0**2 / r**2
    val, _ = integrate.quad(_disk_density, 0.0, r0, args=(r,), epsabs=QUAD_ABS_TOL * 1e-6, epsrel=1e-13)
    return val


def distance_pdf(x, geometry: AreaGeometry):
    """Exact distance density on a disk with the r0 point mass returned at x == r0."""
    _require_circle(geometry)
    r, r0 = geometry.radius, geometry.r0
    x = np.asarray(x, dtype=float)
    out = np.where((x > r0) & (x < 2 * r), _disk_density(x, r), 0.0)
    at_mass = np.isclose(x, r0, rtol=0, atol=1e-12 * r0)
    if np.any(at_mass):
        out = np.where(at_mass, point_mass(geometry, "exact"), out)
    return out[()] if out.ndim == 0 else out


def distance_pdf_approx(x, geometry: AreaGeometry):
    """Large-radius approximation: mass r0^2/r^2 at r0, density 2x/r^2 up to r."""
    _require_circle(geometry)
    r, r0 = geometry.radius, geometry.r0
    x = np.asarray(x, dtype=float)
    out = np.where((x > r0) & (x < r), 2 * x / r**2, 0.0)
    out = np.where(np.isclose(x, r0, rtol=0, atol=1e-12 * r0), r0**2 / r**2, out)
    return out[()] if out.ndim == 0 else out


def pathloss_moment(d_hi: float, alpha: float, geometry: AreaGeometry, pdf: str = "approx") -> float:
    """E[d^-alpha ; d <= d_hi], point mass at r0 included. d_hi=inf gives the full moment."""
    _require_circle(geometry)
    r, r0 = geometry.radius, geometry.r0
    if d_hi < r0:
        raise ValueError("d_hi must be at least r0")
    if pdf == "approx":
        upper = min(d_hi, r)
        if alpha == 2:
            tail = (2 / r**2) * math.log(upper / r0)
        else:
            tail = (2 / ((alpha - 2) * r**2)) * (r0 ** (2 - alpha) - upper ** (2 - alpha))
        return r0 ** (2 - alpha) / r**2 + tail
    if pdf != "exact":
        raise ValueError(f"unknown pdf kind {pdf!r}")
    upper = min(d_hi, 2 * r)
    total = point_mass(geometry, "exact") * r0 ** (-alpha)
    if upper <= r0:
        return total
    # integrate in log-distance; the integrand x^(1-alpha) is sharply peaked at r0
    lo, hi = math.log(r0), math.log(upper)

    def integrand(u):
        x = math.exp(u)
        return x ** (1 - alpha) * float(_disk_density(x, r))

    val, err, info = integrate.quad(integrand, lo, hi, epsabs=QUAD_ABS_TOL * total * 1e-3,
                                    epsrel=1e-12, limit=500, full_output=True)[:3]
    if not np.isfinite(val) or err > 1e-6 * max(abs(val), 1e-300):
        raise ValueError("divergent tail scaling")
    return total + val
