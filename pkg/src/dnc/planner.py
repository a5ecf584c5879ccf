"""Block-size planning, closed-form computation-time orders and a flop-level cost model.

Closed-form orders use exact rationals. The cost model keeps every constant the
asymptotic analysis drops (actual block sizes, measured nonzeros per row).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .cluster import Block, BlockStructure

SIDE_TOL = 1e-7  # relative, root-finding on side lengths


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10**9)


@dataclass(frozen=True)
class PoolProfile:
    """Processing power of the central/upper levels relative to a leaf unit, as log-N ratios."""

    s1: float = 0.0
    s2: float = 0.0

    def __post_init__(self):
        if self.s1 < 0 or self.s2 < 0:
            raise ValueError("log-N ratios must be non-negative")

    def powers(self, N: int) -> tuple[float, float]:
        return float(N) ** float(self.s1), float(N) ** float(self.s2)


@dataclass(frozen=True)
class ClusterPlan:
    z: tuple            # z_t per layer, N^{z_t} = N_d,t / N_b,t
    mode: str           # parallel | serial | mode1 | mode2 | mode3
    order: Fraction     # exponent of N in the computation time
    sides: tuple = ()   # r_t in meters, filled by plan_sides
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "z": [str(z) for z in self.z],
            "z_float": [float(z) for z in self.z],
            "mode": self.mode,
            "order": str(self.order),
            "order_float": float(self.order),
            "sides": list(self.sides),
            "flagged": self.flagged,
        }


# ---------------------------------------------------------------- geometry of blocks

def _side_residual(r, d0, area, ratio):
    return (r - 2 * d0) ** 2 * r**2 - 4 * (r - d0) * d0 * area * ratio


def ratio_to_side(z: float, N: int, d0: float, beta_N: float, parent_size: float | None = None) -> float:
    """Grid side r_t giving diagonal/cut-node size ratio N^z inside a parent of ``parent_size`` RRHs.

    Solves (r - 2 d0)^2 = 4 (r - d0) d0 (A / r^2) N^z by bisection, where A is the
    parent's area (parent_size / beta_N). beta_N is in RRHs per km^2.
    """
    if d0 <= 0:
        raise ValueError("infeasible ratio: d0 must be positive")
    parent = N if parent_size is None else parent_size
    area = parent / (beta_N / 1e6)
    ratio = float(N) ** float(z)
    lo = 2 * d0
    hi = (4 * d0 * area * ratio) ** (1 / 3) + 2 * d0
    while _side_residual(hi, d0, area, ratio) < 0:
        hi *= 2
    if hi > 2 * math.sqrt(area) and _side_residual(2 * math.sqrt(area), d0, area, ratio) < 0:
        raise ValueError("infeasible ratio")
    while hi - lo > SIDE_TOL * hi:
        mid = 0.5 * (lo + hi)
        if _side_residual(mid, d0, area, ratio) >= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def side_to_ratio(r: float, N: int, d0: float, beta_N: float, parent_size: float | None = None) -> float:
    """Inverse of ratio_to_side: the exponent z realised by side r."""
    parent = N if parent_size is None else parent_size
    area = parent / (beta_N / 1e6)
    ratio = (r - 2 * d0) ** 2 * r**2 / (4 * (r - d0) * d0 * area)
    return math.log(ratio) / math.log(N)


def tile_side(extent: float, side: float) -> float:
    """Nearest side that tiles ``extent`` with a whole number of squares."""
    return extent / max(1, round(extent / side))


def predict_blocks(z: float, N: int, d0: float, beta_N: float, parent_size: float | None = None):
    """Approximate (N_d, N_b, m) for ratio N^z; parent_size is N_d of the previous layer (N on layer 1)."""
    parent = N if parent_size is None else parent_size
    beta = beta_N / 1e6
    Nz = float(N) ** float(z)
    N_d = (4 * d0 * math.sqrt(beta) * parent * Nz) ** (2 / 3)
    N_b = N_d / Nz
    m = ((4 * d0) ** -2 / beta * parent / Nz**2) ** (1 / 3)
    return N_d, N_b, m


# ---------------------------------------------------------------- closed-form optima

def optimal_single_layer(s) -> ClusterPlan:
    """Parallel plan with z1 = -s/3 while s <= 3/7, otherwise everything on the central unit."""
    s = _frac(s)
    if s < 0:
        raise ValueError("s must be non-negative")
    parallel = 2 - Fraction(2, 3) * s
    serial = Fraction(15, 7) - s
    if s <= Fraction(3, 7):
        return ClusterPlan((-s / 3,), "parallel", parallel)
    return ClusterPlan((Fraction(-1, 7),), "serial", serial)


def two_layer_orders(s1, s2) -> dict:
    """Order and z-ratios of each computing mode, regardless of which one is optimal."""
    s1, s2 = _frac(s1), _frac(s2)
    return {
        "mode1": (Fraction(42, 23) - Fraction(14, 23) * s1 - Fraction(6, 23) * s2,
                  (Fraction(4, 23) - Fraction(9, 23) * s1 + Fraction(6, 23) * s2, -s2 / 2)),
        "mode2": (Fraction(15, 8) - Fraction(5, 8) * s1 - Fraction(3, 8) * s2,
                  (Fraction(1, 8) - Fraction(3, 8) * s1 + Fraction(3, 8) * s2,
                   Fraction(-3, 16) + Fraction(1, 16) * s1 - Fraction(1, 16) * s2)),
        "mode3": (2 - s1, (Fraction(0), Fraction(-1, 6))),
    }


def mode_regions(s1, s2) -> list[str]:
    s1, s2 = _frac(s1), _frac(s2)
    regions = []
    if s1 + 7 * s2 < 3 and 3 * s1 - 2 * s2 < Fraction(4, 3):
        regions.append("mode1")
    if s1 + 7 * s2 >= 3 and s1 - s2 < Fraction(1, 3):
        regions.append("mode2")
    if 3 * s1 - 2 * s2 >= Fraction(4, 3) and s1 - s2 >= Fraction(1, 3):
        regions.append("mode3")
    return regions


def optimal_two_layer(s1, s2) -> ClusterPlan:
    """Mode selection for a three-level pool; points outside every region fall back to minimisation."""
    if _frac(s1) < 0 or _frac(s2) < 0:
        raise ValueError("log-N ratios must be non-negative")
    orders = two_layer_orders(s1, s2)
    regions = mode_regions(s1, s2)
    if regions:
        mode, flagged = regions[0], False
    else:
        mode, flagged = min(orders, key=lambda k: orders[k][0]), True
    order, z = orders[mode]
    return ClusterPlan(z, mode, order, flagged=flagged)


def plan_sides(plan: ClusterPlan, N: int, d0: float, beta_N: float) -> ClusterPlan:
    """Attach side lengths r_t for every layer of the plan."""
    sides, parent = [], N
    for z in plan.z:
        sides.append(ratio_to_side(float(z), N, d0, beta_N, parent))
        parent = predict_blocks(float(z), N, d0, beta_N, parent)[0]
    return ClusterPlan(plan.z, plan.mode, plan.order, tuple(sides), plan.flagged)


def single_layer_curve(s_values) -> list[tuple[float, float, str]]:
    out = []
    for s in s_values:
        p = optimal_single_layer(s)
        out.append((float(s), float(p.order), p.mode))
    return out


def two_layer_grid(s1_values, s2_values) -> list[tuple[float, float, float, str, bool]]:
    out = []
    for s1 in s1_values:
        for s2 in s2_values:
            p = optimal_two_layer(s1, s2)
            out.append((float(s1), float(s2), float(p.order), p.mode, p.flagged))
    return out


# ---------------------------------------------------------------- critical-path model

@dataclass
class BlockCost:
    """Work of one layer-1 cluster. ``inner`` holds per-sub-cluster (steps 1.1+1.2, 1.5+1.6)."""

    step1: float = 0.0
    step2: float = 0.0
    step56: float = 0.0
    inner: list = field(default_factory=list)
    inner_central: float = 0.0      # steps 1.3 + 1.4

    @property
    def total(self) -> float:
        return self.step1 + self.step2 + self.step56 + self.inner_central + sum(a + b for a, b in self.inner)


def _stage(costs, units):
    costs = list(costs)
    if not costs:
        return 0.0
    if units is None or units >= len(costs):
        return max(costs)
    loads = [0.0] * units
    for c in sorted(costs, reverse=True):
        loads[loads.index(min(loads))] += c
    return max(loads)


def model_time(blocks: list[BlockCost], central: float, mode: str, p1: float = 1.0, p2: float = 1.0,
               units: int | None = None) -> float:
    """Critical-path time of the step schedule under a computing mode.

    Single layer: ``parallel`` runs steps 1,2,5,6 on unit-power workers and 3,4 on the
    central unit (power p1); ``serial`` runs everything centrally. Two layers:
    ``mode1`` spreads steps 1.x over level-3 units, ``mode2`` keeps step 1 on the
    level-2 unit (power p2), ``mode3`` runs everything on the level-1 unit (power p1).
    """
    if mode in ("serial", "mode3"):
        return (sum(b.total for b in blocks) + central) / p1
    if mode == "parallel":
        return _stage((b.step1 + b.step2 for b in blocks), units) + central / p1 + _stage(
            (b.step56 for b in blocks), units)
    if mode == "mode1":
        per = [
            _stage((a for a, _ in b.inner), units) + b.inner_central / p2
            + _stage((c for _, c in b.inner), units) + (b.step1 + b.step2) / p2
            for b in blocks
        ]
    elif mode == "mode2":
        per = [(b.step1 + b.step2 + b.inner_central + sum(a + c for a, c in b.inner)) / p2 for b in blocks]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _stage(per, units) + central / p1 + _stage((b.step56 / p2 for b in blocks), units)


# ---------------------------------------------------------------- table-driven cost model

@dataclass
class CostReport:
    mode: str
    steps: dict          # step id -> {"flops": total, "unit_count": tasks}
    model_time: float

    def to_dict(self) -> dict:
        return {"mode": self.mode, "steps": self.steps, "critical_path_model_time": self.model_time}


def nnz_per_row(A, structure: BlockStructure | None = None) -> tuple[float, float]:
    """(L1, L2): average nonzeros per row of A and of its layer-1 diagonal blocks."""
    A = sp.csr_array(A)
    L1 = A.nnz / A.shape[0]
    if structure is None or not structure.root.children:
        return L1, L1
    owner = np.full(A.shape[0], -1)
    for i, b in enumerate(structure.root.children):
        owner[b.start:b.stop] = i
    coo = A.tocoo()
    inside = (owner[coo.row] >= 0) & (owner[coo.row] == owner[coo.col])
    rows_in = int(np.sum(owner >= 0))
    return L1, (int(inside.sum()) / rows_in if rows_in else L1)


def _add(steps, key, flops, units=1):
    entry = steps.setdefault(key, {"flops": 0.0, "unit_count": 0})
    entry["flops"] += float(flops)
    entry["unit_count"] += units


def _inner_costs(b: Block, L2: float, steps: dict) -> tuple[list, float]:
    subs = b.children
    n_i, n_c, m2 = b.size, b.border_size, len(subs)
    inner = []
    for sub in subs:
        a = sub.size**3 + (L2 / m2) * n_c * sub.size
        c = (L2 / m2) * n_c * n_i + sub.size**2 * n_i
        _add(steps, "1.1", sub.size**3)
        _add(steps, "1.2", (L2 / m2) * n_c * sub.size)
        _add(steps, "1.5", (L2 / m2) * n_c * n_i)
        _add(steps, "1.6", sub.size**2 * n_i)
        inner.append((a, c))
    central = m2 * n_c**2 + n_c**2 * n_i
    _add(steps, "1.3", m2 * n_c**2)
    _add(steps, "1.4", n_c**2 * n_i)
    return inner, central


def cost_model(structure: BlockStructure, profile: PoolProfile, mode: str, L1: float,
               L2: float | None = None, units: int | None = None) -> CostReport:
    """Step costs from the operation-count tables, evaluated on the actual block sizes.

    Layer-1 blocks that are themselves split are costed with the nested-inverse steps
    1.1-1.6 in place of a dense step 1 when ``mode`` is mode1 or mode2 or mode3.
    """
    root = structure.root
    N = structure.n
    p1, p2 = profile.powers(N)
    steps: dict = {}
    nested = mode in ("mode1", "mode2", "mode3")
    if nested and structure.layer_count < 2:
        raise ValueError("two-layer modes need a nested structure")
    if not nested and mode not in ("parallel", "serial"):
        raise ValueError(f"unknown mode {mode!r}")
    children = root.children
    n_c = root.border_size
    if not children or (len(children) == 1 and n_c == 0):
        # plain dense solve of the whole matrix
        _add(steps, "4" if not children else "1", N**3)
        blocks = [] if not children else [BlockCost(step1=float(N) ** 3)]
        central = float(N) ** 3 if not children else 0.0
        return CostReport(mode, steps, model_time(blocks, central, mode, p1, p2, units))
    m1 = len(children)
    L2 = L1 if L2 is None else L2
    blocks = []
    for b in children:
        bc = BlockCost()
        if nested and b.children:
            bc.inner, bc.inner_central = _inner_costs(b, L2, steps)
        else:
            bc.step1 = float(b.size) ** 3
            _add(steps, "1", bc.step1)
        s2 = (L1 / m1) * n_c * b.size
        s5 = (L1 / m1) * n_c
        s6 = float(b.size) ** 2
        bc.step2, bc.step56 = s2, s5 + s6
        _add(steps, "2", s2)
        _add(steps, "5", s5)
        _add(steps, "6", s6)
        blocks.append(bc)
    s3 = m1 * float(n_c) ** 2
    s4 = float(n_c) ** 3
    _add(steps, "3", s3)
    _add(steps, "4", s4)
    return CostReport(mode, steps, model_time(blocks, s3 + s4, mode, p1, p2, units))


def dense_baseline(N: int) -> float:
    """Unclustered detection: one N x N inversion."""
    return float(N) ** 3


def loglog_slope(ns, times) -> float:
    return float(np.polyfit(np.log(ns), np.log(times), 1)[0])
