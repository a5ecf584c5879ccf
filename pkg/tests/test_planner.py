import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnc.cluster import label_rrhs, nest_labelling
from dnc.netgen import AreaGeometry, generate_layout
from dnc.planner import (PoolProfile, cost_model, dense_baseline, loglog_slope, mode_regions, optimal_single_layer,
                         optimal_two_layer, plan_sides, predict_blocks, ratio_to_side, side_to_ratio,
                         single_layer_curve, tile_side, two_layer_grid, two_layer_orders)
from helpers import tree

BETA, D0 = 10.0, 100.0


def _residual(r, z, N, d0, beta, parent):
    area = parent / (beta / 1e6)
    lhs = (r - 2 * d0) ** 2 * r**2
    return abs(lhs - 4 * (r - d0) * d0 * area * N**z) / lhs


@pytest.mark.parametrize("z", [-0.5, -1 / 7, 0.0, 4 / 23, 0.4])
@pytest.mark.parametrize("N", [1000, 8000])
def test_side_bracket_and_residual(z, N):
    r = ratio_to_side(z, N, D0, BETA)
    base = (4 * D0 * (N / (BETA / 1e6)) * N**z) ** (1 / 3)
    assert base <= r <= base + 2 * D0
    assert _residual(r, z, N, D0, BETA, N) <= 1e-6
    assert side_to_ratio(r, N, D0, BETA) == pytest.approx(z, abs=1e-6)


def test_side_for_inner_layer_uses_parent_size():
    r = ratio_to_side(0.0, 8000, D0, BETA, parent_size=500)
    assert _residual(r, 0.0, 8000, D0, BETA, 500) <= 1e-6
    assert r < ratio_to_side(0.0, 8000, D0, BETA)


def test_degenerate_boundary_width():
    with pytest.raises(ValueError, match="infeasible ratio"):
        ratio_to_side(0.0, 1000, 0.0, BETA)
    assert ratio_to_side(0.0, 1000, 1e-3, BETA) < ratio_to_side(0.0, 1000, 1.0, BETA)


def test_infeasible_ratio_beyond_area():
    with pytest.raises(ValueError, match="infeasible ratio"):
        ratio_to_side(1.0, 1000, 500.0, BETA)


def test_equal_ratio_prediction():
    N = 4000
    Nd, Nb, m = predict_blocks(0.0, N, D0, BETA)
    expected = (4 * D0 * math.sqrt(BETA / 1e6) * N) ** (2 / 3)
    assert Nd == pytest.approx(expected) and Nb == pytest.approx(expected)


@pytest.mark.parametrize("z", [-0.3, 0.0, 0.25])
def test_cluster_count_formula(z):
    N = 5000
    beta = BETA / 1e6
    _, _, m = predict_blocks(z, N, D0, BETA)
    assert m == pytest.approx((4 * D0) ** (-2 / 3) * beta ** (-1 / 3) * N ** (1 / 3 - 2 * z / 3))


@pytest.mark.parametrize("N", [2000, 8000])
def test_predicted_blocks_cover_network(N):
    side = math.sqrt(N / BETA * 1e6)
    r1 = tile_side(side, ratio_to_side(0.0, N, D0, BETA))
    z = side_to_ratio(r1, N, D0, BETA)
    Nd, Nb, m = predict_blocks(z, N, D0, BETA)
    assert Nd * m + Nb == pytest.approx(N, rel=0.25)
    lay = generate_layout(AreaGeometry.square(side), N, 1, 1)
    s = label_rrhs(lay, r1, D0).stats(1)
    assert s.N_d * s.m + s.N_b == N


def test_block_prediction_error_shrinks_with_size():
    errs = []
    for N in (500, 2000, 8000):
        side = math.sqrt(N / BETA * 1e6)
        r1 = tile_side(side, ratio_to_side(0.0, N, D0, BETA))
        z = side_to_ratio(r1, N, D0, BETA)
        pred = np.array(predict_blocks(z, N, D0, BETA))
        meas = []
        for seed in range(5):
            s = label_rrhs(generate_layout(AreaGeometry.square(side), N, 1, seed), r1, D0).stats(1)
            meas.append([s.N_d, s.N_b, s.m])
        errs.append(np.max(np.abs(np.mean(meas, axis=0) / pred - 1)))
    assert errs[0] > errs[1] > errs[2]


def test_single_layer_examples():
    p = optimal_single_layer(0)
    assert (p.mode, p.z, p.order) == ("parallel", (F(0),), F(2))
    tie = optimal_single_layer(F(3, 7))
    assert tie.mode == "parallel" and tie.order == F(12, 7) == F(15, 7) - F(3, 7)
    p = optimal_single_layer(1)
    assert (p.mode, p.z, p.order) == ("serial", (F(-1, 7),), F(8, 7))
    with pytest.raises(ValueError):
        optimal_single_layer(-0.1)


def test_single_layer_order_continuous_at_kink():
    eps = F(1, 10**9)
    a = optimal_single_layer(F(3, 7) - eps).order
    b = optimal_single_layer(F(3, 7) + eps).order
    assert abs(a - b) < 10 * eps


def test_two_layer_examples():
    p = optimal_two_layer(0, 0)
    assert (p.mode, p.order, p.z) == ("mode1", F(42, 23), (F(4, 23), F(0)))
    p = optimal_two_layer(1, 1)
    assert (p.mode, p.order) == ("mode2", F(7, 8))
    p = optimal_two_layer(1, 0)
    assert (p.mode, p.order, p.z) == ("mode3", F(1), (F(0), F(-1, 6)))
    assert not p.flagged


def test_mode_regions_select_minimal_order():
    rng = np.random.default_rng(0)
    for s1, s2 in rng.uniform(0, 2, (1000, 2)):
        p = optimal_two_layer(s1, s2)
        orders = two_layer_orders(s1, s2)
        applicable = mode_regions(s1, s2)
        assert all(p.order <= orders[m][0] for m in applicable)
        assert p.order == min(o for o, _ in orders.values())
        assert p.flagged == (not applicable)


@given(st.fractions(0, 2), st.fractions(0, 2))
def test_regions_cover_quadrant_without_overlap(s1, s2):
    assert len(mode_regions(s1, s2)) <= 1
    assert len(mode_regions(s1, s2)) == 1 or optimal_two_layer(s1, s2).flagged


def test_pool_profile_validation():
    with pytest.raises(ValueError):
        PoolProfile(-1.0)
    assert PoolProfile(0.5, 0.25).powers(16) == (4.0, 2.0)


def _square_structure(N, seed=2, z=0.0, two=False):
    side = math.sqrt(N / BETA * 1e6)
    lay = generate_layout(AreaGeometry.square(side), N, N, seed)
    r1 = tile_side(side, ratio_to_side(z, N, D0, BETA))
    st1 = label_rrhs(lay, r1, D0)
    if not two:
        return st1
    return nest_labelling(st1, lay, tile_side(r1, r1 / 2), D0)


def test_single_block_costs_one_dense_inversion():
    from dnc.cluster import Block, BlockStructure, Layer
    N = 40
    s = BlockStructure([Layer(1.0, [], [], [], [])], np.arange(N), Block(0, N, [Block(0, N)]), 1.0)
    assert cost_model(s, PoolProfile(), "parallel", 3.0).model_time == N**3
    assert dense_baseline(N) == N**3


def test_cost_model_formulas_on_hand_structure():
    from dnc.cluster import BlockStructure, Layer
    root = tree([4, 6], 3)
    s = BlockStructure([Layer(1.0, [], [], [], [])], np.arange(13), root, 1.0)
    rep = cost_model(s, PoolProfile(), "parallel", L1=2.0)
    st_ = rep.steps
    assert st_["1"]["flops"] == 4**3 + 6**3
    assert st_["2"]["flops"] == pytest.approx((2 / 2) * 3 * (4 + 6))
    assert st_["3"]["flops"] == 2 * 9 and st_["4"]["flops"] == 27
    assert st_["5"]["flops"] == pytest.approx(2 * 3) and st_["6"]["flops"] == 16 + 36
    assert rep.model_time == pytest.approx(max(64 + 12, 216 + 18) + 18 + 27 + max(3 + 16, 3 + 36))
    ser = cost_model(s, PoolProfile(), "serial", L1=2.0)
    assert ser.model_time == pytest.approx(sum(v["flops"] for v in st_.values()))


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 0.5),
       st.sampled_from(["mode1", "mode2", "mode3"]))
def test_cost_model_monotone_in_power(s1, s2, d1, d2, mode):
    s = _TWO
    lo = cost_model(s, PoolProfile(s1, s2), mode, 5.0, 3.0).model_time
    hi = cost_model(s, PoolProfile(s1 + d1, s2 + d2), mode, 5.0, 3.0).model_time
    assert hi <= lo * (1 + 1e-12)


_TWO = _square_structure(2000, two=True)


def test_limited_units_never_faster():
    s = _square_structure(4000)
    full = cost_model(s, PoolProfile(), "parallel", 2.0).model_time
    times = [cost_model(s, PoolProfile(), "parallel", 2.0, units=u).model_time for u in (1, 2, 4, 64)]
    assert times == sorted(times, reverse=True)
    assert times[-1] == full


def test_mode_structure_consistency():
    with pytest.raises(ValueError):
        cost_model(_square_structure(1000), PoolProfile(), "mode1", 2.0)
    with pytest.raises(ValueError):
        cost_model(_square_structure(1000), PoolProfile(), "bogus", 2.0)


def test_plan_sides_attach_feasible_lengths():
    p = plan_sides(optimal_two_layer(0, 0), 16384, D0, BETA)
    assert len(p.sides) == 2 and all(s > 2 * D0 for s in p.sides)


def test_order_curves():
    curve = single_layer_curve(np.linspace(0, 1, 8))
    assert curve[0] == (0.0, 2.0, "parallel")
    grid = two_layer_grid([0.0], [0.0])
    assert grid[0][2] == pytest.approx(42 / 23) and grid[0][3] == "mode1"


def test_dense_baseline_slope():
    ns = [2**k for k in range(10, 15)]
    assert loglog_slope(ns, [dense_baseline(n) for n in ns]) == pytest.approx(3.0)
