"""Full and sparsified MMSE detection, SINR evaluation and Monte Carlo SINR ratios."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .channel import ChannelSet, ReceivedSignal, db_to_linear, generate_channel, sparsify
from .netgen import AreaGeometry, generate_layout, pathloss_moment, raw_distances


@dataclass(frozen=True)
class DetectionResult:
    x_hat: np.ndarray
    sinr: np.ndarray
    detector_kind: str  # "full" | "sparsified"


def _check_finite(H):
    if not np.all(np.isfinite(H)):
        raise ValueError("channel matrix has non-finite entries")


def full_covariance(ch: ChannelSet) -> np.ndarray:
    """A = H P H^H + N0 I (dense)."""
    Hs = ch.H * np.sqrt(ch.P)
    A = Hs @ Hs.conj().T
    A[np.diag_indices_from(A)] += ch.N0
    return A


def detector_sinr(V: np.ndarray, H: np.ndarray, P: np.ndarray, N0: float) -> np.ndarray:
    """Per-user SINR of receive filters V (columns v_k) against the true channel H."""
    G = V.conj().T @ H                      # G[k, j] = v_k^H h_j
    power = np.abs(G) ** 2 * P[None, :]
    signal = np.diag(power).copy()
    np.fill_diagonal(power, 0.0)            # direct sum avoids cancellation at high SINR
    denom = power.sum(axis=1) + N0 * np.sum(np.abs(V) ** 2, axis=0)
    return np.divide(signal, denom, out=np.zeros_like(signal), where=denom > 0)


def _mmse_filters(A: np.ndarray, H_used: np.ndarray, P: np.ndarray) -> np.ndarray:
    factor = cho_factor(A, lower=True, check_finite=False)
    return cho_solve(factor, H_used, check_finite=False) * np.sqrt(P)[None, :]


def mmse_full(ch: ChannelSet, sig: ReceivedSignal) -> DetectionResult:
    _check_finite(ch.H)
    V = _mmse_filters(full_covariance(ch), ch.H, ch.P)
    return DetectionResult(V.conj().T @ sig.y, detector_sinr(V, ch.H, ch.P, ch.N0), "full")


def build_A_hat(ch: ChannelSet, N1: float) -> sp.csr_array:
    """A_hat = H_hat P H_hat^H + (N1 + N0) I as an exactly Hermitian sparse matrix."""
    H_hat, _ = sparsify(ch)
    M = H_hat @ sp.diags_array(np.sqrt(ch.P))
    A = (M @ M.conj().T).tocsr()
    A = 0.5 * (A + A.conj().T)
    A = A + (N1 + ch.N0) * sp.identity(ch.H.shape[0], dtype=complex, format="csr")
    A = sp.csr_array(A)
    A.eliminate_zeros()
    return A


def compute_N1(d0: float, alpha: float, geometry: AreaGeometry, P, pdf: str = "approx") -> float:
    """Residual interference power (mu - mu_hat(d0)) * sum(P), absorbed as a diagonal load."""
    mu = pathloss_moment(math.inf, alpha, geometry, pdf)
    mu_hat = pathloss_moment(max(d0, geometry.r0), alpha, geometry, pdf)
    return max(mu - mu_hat, 0.0) * float(np.sum(P))


def mmse_sparsified(ch: ChannelSet, sig: ReceivedSignal, N1: float) -> DetectionResult:
    """Detector built from H_hat; SINR is evaluated against the full channel."""
    _check_finite(ch.H)
    H_hat_dense = np.where(ch.mask, ch.H, 0)
    A_hat = build_A_hat(ch, N1).toarray()
    V = _mmse_filters(A_hat, H_hat_dense, ch.P)
    return DetectionResult(V.conj().T @ sig.y, detector_sinr(V, ch.H, ch.P, ch.N0), "sparsified")


@dataclass(frozen=True)
class Scenario:
    """Random-network scenario for Monte Carlo SINR experiments."""

    geometry: AreaGeometry
    n_rrh: int
    n_user: int
    alpha: float = 3.7
    snr_db: float = 80.0
    P: float = 1.0
    pdf_kind: str = "approx"

    @property
    def N0(self) -> float:
        return self.P / db_to_linear(self.snr_db)


@dataclass
class SweepResult:
    d0: np.ndarray
    rho: np.ndarray
    se: np.ndarray
    n_trials: int
    hat_means: np.ndarray = field(repr=False)     # n_trials x len(d0), mean SINR_hat per trial
    full_means: np.ndarray = field(repr=False)    # n_trials, mean SINR per trial
    records: list | None = field(default=None, repr=False)


def _one_trial(scn: Scenario, d0s, N1s, seed_seq: np.random.SeedSequence, keep_records: bool):
    s_layout, s_chan = seed_seq.spawn(2)
    layout = generate_layout(scn.geometry, scn.n_rrh, scn.n_user, s_layout)
    ch = generate_channel(layout, scn.alpha, scn.geometry.r0, scn.P, scn.N0, s_chan)
    dist = raw_distances(layout)
    A = full_covariance(ch)
    sinr_full = detector_sinr(_mmse_filters(A, ch.H, ch.P), ch.H, ch.P, ch.N0)
    hat_means, records = [], []
    prev_key, sinr_hat = None, None
    for d0, N1 in zip(d0s, N1s):
        mask = dist < d0
        kept = int(mask.sum())
        if kept == mask.size:
            sinr_hat = sinr_full   # identical detectors
        elif (kept, N1) != prev_key:
            # masks for different thresholds are nested, so an equal count means an equal mask
            ch_d = replace(ch, mask=mask, d0=float(d0))
            A_hat = build_A_hat(ch_d, N1).toarray()
            V = _mmse_filters(A_hat, np.where(mask, ch.H, 0), ch.P)
            sinr_hat = detector_sinr(V, ch.H, ch.P, ch.N0)
        prev_key = (kept, N1)
        hat_means.append(math.fsum(sinr_hat) / len(sinr_hat))
        if keep_records:
            records.append((d0, sinr_full, sinr_hat))
    return math.fsum(sinr_full) / len(sinr_full), hat_means, records


def sinr_ratio_sweep(scn: Scenario, d0s, n_trials: int, seed: int, workers: int = 1,
                     keep_records: bool = False) -> SweepResult:
    """Ratio-of-means estimate of E[SINR_hat(d0)] / E[SINR] over channel draws and users.

    Each trial draws a new layout and channel; all thresholds share that draw.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    d0s = np.atleast_1d(np.asarray(d0s, dtype=float))
    seqs = np.random.SeedSequence(seed).spawn(n_trials)
    N1s = [compute_N1(d0, scn.alpha, scn.geometry, np.full(scn.n_user, scn.P), scn.pdf_kind) for d0 in d0s]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        out = list(pool.map(lambda s: _one_trial(scn, d0s, N1s, s, keep_records), seqs))
    full = np.array([o[0] for o in out])
    hat = np.array([o[1] for o in out])
    den = math.fsum(full)
    rho = np.array([math.fsum(hat[:, i]) / den for i in range(len(d0s))])
    if n_trials > 1:
        resid = hat - rho[None, :] * full[:, None]
        se = np.sqrt(resid.var(axis=0, ddof=1) / n_trials) / (den / n_trials)
    else:
        se = np.full(len(d0s), np.nan)
    records = None
    if keep_records:
        records = [(t, d0, s_full, s_hat) for t, o in enumerate(out) for (d0, s_full, s_hat) in o[2]]
    return SweepResult(d0s, rho, se, n_trials, hat, full, records)


def sinr_ratio_empirical(scn: Scenario, d0: float, n_trials: int, seed: int, workers: int = 1):
    """(rho_hat, standard error) at a single threshold."""
    res = sinr_ratio_sweep(scn, [d0], n_trials, seed, workers)
    return float(res.rho[0]), float(res.se[0])
