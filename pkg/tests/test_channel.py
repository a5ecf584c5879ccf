import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnc.channel import (ChannelSet, a_hat_pattern, export_matrix_market, generate_channel, sparse_mask, sparsify,
                         transmit, with_threshold)
from dnc.netgen import AreaGeometry, NetworkLayout, count_from_density, generate_layout, raw_distances


def _fixed_distance_layout(d, n=1, k=1):
    rrh = np.zeros((n, 2))
    users = np.tile([[d, 0.0]], (k, 1))
    return NetworkLayout(rrh, users, AreaGeometry.circle(max(10.0, 2 * d)))


def test_unit_path_loss_variance():
    lay = _fixed_distance_layout(1.0, 1, 10**5)
    ch = generate_channel(lay, 3.7, 1.0, 1.0, 1.0, 1)
    assert np.mean(np.abs(ch.H) ** 2) == pytest.approx(1.0, rel=0.02)


def test_path_loss_at_100m_monte_carlo():
    lay = _fixed_distance_layout(100.0, 1, 10**5)
    ch = generate_channel(lay, 3.7, 1.0, 1.0, 1.0, 2)
    g = np.abs(ch.H.ravel()) ** 2
    se = g.std(ddof=1) / math.sqrt(g.size)
    assert abs(g.mean() - 100.0 ** -3.7) < 3 * se
    assert 100.0 ** -3.7 == pytest.approx(4.0e-8, rel=0.02)


def test_channel_reproducible_and_validated():
    lay = generate_layout(AreaGeometry.circle(500.0), 10, 12, 0)
    a, b = generate_channel(lay, 3.7, 50.0, 1.0, 1e-8, 9), generate_channel(lay, 3.7, 50.0, 1.0, 1e-8, 9)
    assert a.H.tobytes() == b.H.tobytes()
    for kwargs in ({"alpha": 2.0}, {"d0": 0.5}, {"N0": 0.0}):
        args = dict(alpha=3.7, d0=50.0, P=1.0, N0=1e-8, seed=1) | kwargs
        with pytest.raises(ValueError):
            generate_channel(lay, **args)
    with pytest.raises(ValueError):
        generate_channel(lay, 3.7, 50.0, -1.0, 1e-8, 1)


def test_mask_density_at_r5km_threshold():
    geo = AreaGeometry.circle(10_000.0)
    n = count_from_density(10, geo)
    lay = generate_layout(geo, n, n, 4)
    frac = sparse_mask(lay, 705.0).nnz / (n * n)
    assert frac == pytest.approx(705.0**2 / 10_000.0**2, rel=0.10)


def test_mask_density_at_r10km_over_seeds():
    geo = AreaGeometry.circle(10_000.0)
    n = count_from_density(10, geo)
    for seed in range(3):
        lay = generate_layout(geo, n, n, seed)
        frac = sparse_mask(lay, 1812.0).nnz / (n * n)
        assert abs(frac - 0.0328) <= 0.005


def test_nonzeros_per_column_match_rrh_density():
    geo = AreaGeometry.circle(5000.0)
    lay = generate_layout(geo, count_from_density(10, geo), 400, 3)
    d0 = 700.0
    per_col = sparse_mask(lay, d0).nnz / lay.n_user
    # edge users see fewer RRHs; the disk average of the overlap is below pi d0^2 beta_N
    assert per_col == pytest.approx(math.pi * d0**2 * lay.beta_N / 1e6, rel=0.15)


def _small_channel(d0=30.0, seed=0):
    lay = generate_layout(AreaGeometry.circle(100.0), 12, 9, seed)
    return lay, generate_channel(lay, 3.7, d0, 1.0, 1e-6, seed + 1)


def test_mask_is_strict_distance_rule():
    lay, ch = _small_channel()
    assert np.array_equal(ch.mask, raw_distances(lay) < 30.0)
    assert np.array_equal(sparse_mask(lay, 30.0).toarray(), ch.mask)


def test_sparsify_splits_exactly():
    _, ch = _small_channel()
    H_hat, tilde = sparsify(ch)
    H_tilde = np.where(tilde, ch.H, 0)
    assert np.array_equal(H_hat.toarray() + H_tilde, ch.H)


def test_threshold_beyond_diameter_keeps_everything():
    lay, ch = _small_channel()
    full = with_threshold(ch, lay, 200.0)
    H_hat, tilde = sparsify(full)
    assert not tilde.any() and np.array_equal(H_hat.toarray(), ch.H)


def test_minimal_threshold_keeps_only_clamped_pairs():
    rrh = np.array([[0.0, 0.0], [10.0, 0.0]])
    users = np.array([[0.5, 0.0], [10.0, 3.0]])
    lay = NetworkLayout(rrh, users, AreaGeometry.circle(50.0))
    ch = generate_channel(lay, 3.7, 1.0, 1.0, 1e-6, 0)
    H_hat, _ = sparsify(ch)
    assert H_hat.nnz == 1 and H_hat[0, 0] == ch.H[0, 0]


@given(st.floats(1.0, 250.0), st.integers(0, 1000))
def test_sparsify_is_projection_and_shrinks_norm(d0, seed):
    lay, ch = _small_channel(seed=seed)
    ch = with_threshold(ch, lay, d0)
    H_hat, _ = sparsify(ch)
    again = ChannelSet(H_hat.toarray(), ch.mask, d0, ch.P, ch.N0, ch.alpha)
    assert np.array_equal(sparsify(again)[0].toarray(), H_hat.toarray())
    fro_hat = math.fsum(np.abs(H_hat.toarray().ravel()) ** 2)
    fro = math.fsum(np.abs(ch.H.ravel()) ** 2)
    assert fro_hat <= fro
    assert (fro_hat == fro) == bool(ch.mask.all())


def test_noiseless_scalar_transmission():
    lay = _fixed_distance_layout(1.0)
    ch = ChannelSet(np.ones((1, 1), complex), np.ones((1, 1), bool), 1.0, np.ones(1), 1e-300, 3.7)
    sig = transmit(ch, 5)
    assert sig.y[0] == pytest.approx(sig.x_true[0], abs=1e-140)
    assert lay.n_rrh == 1


def test_power_balance_monte_carlo():
    _, ch = _small_channel()
    ch = ChannelSet(ch.H, ch.mask, ch.d0, np.linspace(0.5, 2.0, 9), 1e-7, ch.alpha)
    e = np.array([np.sum(np.abs(transmit(ch, s).y) ** 2) for s in range(4000)])
    expected = np.sum(ch.P * np.sum(np.abs(ch.H) ** 2, axis=0)) + ch.H.shape[0] * ch.N0
    assert abs(e.mean() - expected) < 3 * e.std(ddof=1) / math.sqrt(len(e))


def test_transmit_reproducible():
    _, ch = _small_channel()
    assert transmit(ch, 3).y.tobytes() == transmit(ch, 3).y.tobytes()


def test_a_hat_pattern_covers_gram_support():
    lay, ch = _small_channel(d0=40.0)
    H_hat, _ = sparsify(ch)
    gram = np.abs((H_hat @ H_hat.conj().T).toarray()) > 0
    pat = a_hat_pattern(lay, 40.0).toarray().astype(bool)
    assert np.array_equal(pat, gram | np.eye(12, dtype=bool))


def test_matrix_market_export(tmp_path):
    import scipy.io
    _, ch = _small_channel()
    H_hat, _ = sparsify(ch)
    export_matrix_market(H_hat, tmp_path / "h.mtx")
    back = scipy.io.mmread(str(tmp_path / "h.mtx"))
    np.testing.assert_allclose(back.toarray(), H_hat.toarray())
