"""Dense Rayleigh/path-loss channels, received signals and distance-threshold sparsification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .netgen import NetworkLayout, distance_matrix, raw_distances


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular complex Gaussian samples with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class ChannelSet:
    H: np.ndarray          # N x K complex, dense
    mask: np.ndarray       # N x K bool, True where the link survives sparsification
    d0: float
    P: np.ndarray          # per-user transmit power, linear
    N0: float
    alpha: float

    @property
    def shape(self):
        return self.H.shape

    @property
    def H_hat(self) -> sp.csc_array:
        h, _ = sparsify(self)
        return h


@dataclass(frozen=True)
class ReceivedSignal:
    y: np.ndarray
    x_true: np.ndarray
    noise_seed: int


def _power_vector(P, K: int) -> np.ndarray:
    P = np.broadcast_to(np.asarray(P, dtype=float), (K,)).copy()
    if np.any(P <= 0):
        raise ValueError("powers must be positive")
    return P


def generate_channel(layout: NetworkLayout, alpha: float, d0: float, P, N0: float, seed: int) -> ChannelSet:
    """H[n,k] = gamma * d^(-alpha/2) with unit-variance Rayleigh gamma; mask marks d < d0."""
    if alpha <= 2:
        raise ValueError("alpha must exceed 2")
    if d0 < layout.geometry.r0:
        raise ValueError("d0 must be at least r0")
    if N0 <= 0:
        raise ValueError("N0 must be positive")
    rng = np.random.default_rng(seed)
    D = distance_matrix(layout)
    H = crandn(rng, D.shape) * D ** (-alpha / 2)
    # compare unclamped distances so that d0 = r0 keeps exactly the clamped pairs
    mask = raw_distances(layout) < d0
    return ChannelSet(H, mask, float(d0), _power_vector(P, layout.n_user), float(N0), float(alpha))


def with_threshold(ch: ChannelSet, layout: NetworkLayout, d0: float) -> ChannelSet:
    """Same channel realisation, new threshold."""
    return ChannelSet(ch.H, raw_distances(layout) < d0, float(d0), ch.P, ch.N0, ch.alpha)


def sparsify(ch: ChannelSet) -> tuple[sp.csc_array, np.ndarray]:
    """Split H into the kept entries (sparse) and the mask of dropped ones."""
    H_hat = sp.csc_array(np.where(ch.mask, ch.H, 0))
    H_hat.eliminate_zeros()
    return H_hat, ~ch.mask


def transmit(ch: ChannelSet, seed: int) -> ReceivedSignal:
    """y = H P^(1/2) x + n with x ~ CN(0, I) and n ~ CN(0, N0 I)."""
    rng = np.random.default_rng(seed)
    N, K = ch.H.shape
    x = crandn(rng, K)
    n = crandn(rng, N) * np.sqrt(ch.N0)
    y = ch.H @ (np.sqrt(ch.P) * x) + n
    return ReceivedSignal(y, x, seed)


def sparse_mask(layout: NetworkLayout, d0: float) -> sp.csc_array:
    """Boolean N x K pattern of links shorter than d0, without forming the dense matrix."""
    rrh = cKDTree(layout.rrh_positions)
    users = cKDTree(layout.user_positions)
    # query_ball_tree is inclusive; the strict comparison is redone below
    pairs = rrh.query_ball_tree(users, d0)
    rows, cols = [], []
    for n, ks in enumerate(pairs):
        if not ks:
            continue
        ks = np.asarray(ks)
        dist = np.hypot(*(layout.user_positions[ks] - layout.rrh_positions[n]).T)
        ks = ks[dist < d0]
        rows.append(np.full(len(ks), n))
        cols.append(ks)
    rows = np.concatenate(rows) if rows else np.zeros(0, int)
    cols = np.concatenate(cols) if cols else np.zeros(0, int)
    data = np.ones(len(rows), dtype=bool)
    return sp.csc_array((data, (rows, cols)), shape=(layout.n_rrh, layout.n_user))


def export_matrix_market(H_hat: sp.sparray, path) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(H_hat))


def a_hat_pattern(layout: NetworkLayout, d0: float) -> sp.csr_array:
    """Nonzero pattern of H_hat P H_hat^H plus the diagonal: RRHs that share a user within d0."""
    M = sp.csr_array(sparse_mask(layout, d0), dtype=np.int32)
    A = sp.csr_array((M @ M.T) + sp.identity(layout.n_rrh, dtype=np.int32, format="csr"))
    A.data[:] = 1
    return A
