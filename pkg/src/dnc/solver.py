"""Direct Schur-complement solution of (nested) DBBD systems with per-step operation traces.

Operation counts are in complex multiply-adds: a Cholesky factorisation of an n x n
block costs n^3/3, a triangular solve pair with k right-hand sides n^2 k, a sparse
product one per stored nonzero per column, and Schur assembly one per updated entry.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .channel import ChannelSet
from .cluster import Block, DbbdSystem
from .planner import BlockCost, PoolProfile, model_time

MODES = ("parallel", "serial", "mode1", "mode2", "mode3")


class IndefiniteSystemError(LinAlgError):
    pass


class FlopCounter:
    """Thread-safe running total, shared by all kernels of one solve."""

    def __init__(self):
        self.total = 0.0
        self._lock = threading.Lock()

    def add(self, flops: float) -> None:
        with self._lock:
            self.total += flops


@dataclass
class SolveTrace:
    """Operation counts per (step id, owner). Owners: () central, (i,) cluster i, (i, j) sub-cluster."""

    mode: str
    tasks: list = field(default_factory=list)   # (step, owner, flops)
    profile: PoolProfile = field(default_factory=PoolProfile)
    n: int = 0

    def add(self, step: str, owner: tuple, flops: float) -> None:
        self.tasks.append((step, tuple(owner), float(flops)))

    def extend(self, other: "SolveTrace", prefix: tuple = ()) -> None:
        for step, owner, flops in other.tasks:
            self.tasks.append((step, tuple(prefix) + owner, flops))

    @property
    def steps(self) -> dict:
        out: dict = {}
        for step, owner, flops in self.tasks:
            e = out.setdefault(step, {"flops": 0.0, "owners": set()})
            e["flops"] += flops
            e["owners"].add(owner)
        return {k: {"flops": v["flops"], "unit_count": len(v["owners"])} for k, v in sorted(out.items())}

    @property
    def total_flops(self) -> float:
        return sum(f for _, _, f in self.tasks)

    def _block_costs(self):
        blocks: dict = {}
        central = 0.0
        for step, owner, flops in self.tasks:
            if not owner:
                central += flops
                continue
            b = blocks.setdefault(owner[0], {"1": 0.0, "2": 0.0, "56": 0.0, "ic": 0.0, "inner": {}})
            if step in ("1", "2"):
                b[step] += flops
            elif step in ("5", "6"):
                b["56"] += flops
            elif step in ("1.3", "1.4"):
                b["ic"] += flops
            else:
                pair = b["inner"].setdefault(owner[1:], [0.0, 0.0])
                pair[0 if step in ("1.1", "1.2") else 1] += flops
        costs = []
        for i in sorted(blocks):
            b = blocks[i]
            inner = [tuple(b["inner"][k]) for k in sorted(b["inner"])]
            costs.append(BlockCost(b["1"], b["2"], b["56"], inner, b["ic"]))
        return costs, central

    def critical_path_model_time(self, units: int | None = None) -> float:
        p1, p2 = self.profile.powers(max(self.n, 1))
        costs, central = self._block_costs()
        return model_time(costs, central, self.mode, p1, p2, units)

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode,
            "steps": self.steps,
            "critical_path_model_time": self.critical_path_model_time(),
        })


# ---------------------------------------------------------------- kernels

class _Factor:
    """Cholesky factor of a dense Hermitian PD block."""

    def __init__(self, M: np.ndarray, counter: FlopCounter | None):
        n = M.shape[0]
        try:
            self.cf = cho_factor(M, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise IndefiniteSystemError("indefinite system") from exc
        if not np.all(np.isfinite(self.cf[0])):
            raise IndefiniteSystemError("indefinite system")
        self.n = n
        self.flops = n**3 / 3
        self.counter = counter
        if counter:
            counter.add(self.flops)

    def solve(self, B: np.ndarray) -> tuple[np.ndarray, float]:
        k = 1 if B.ndim == 1 else B.shape[1]
        f = float(self.n) ** 2 * k
        if self.counter:
            self.counter.add(f)
        return cho_solve(self.cf, B, check_finite=False), f


class _Explicit:
    """Materialised inverse; applying it is a dense product."""

    def __init__(self, X: np.ndarray, counter: FlopCounter | None):
        self.X = X
        self.n = X.shape[0]
        self.counter = counter

    def solve(self, B: np.ndarray) -> tuple[np.ndarray, float]:
        k = 1 if B.ndim == 1 else B.shape[1]
        f = float(self.n) ** 2 * k
        if self.counter:
            self.counter.add(f)
        return self.X @ B, f


def _spmm(S: sp.csr_array, D: np.ndarray, counter: FlopCounter | None) -> tuple[np.ndarray, float]:
    k = 1 if D.ndim == 1 else D.shape[1]
    f = float(S.nnz) * k
    if counter:
        counter.add(f)
    return S @ D, f


def _count(counter, flops):
    if counter:
        counter.add(flops)
    return flops


def _pool_map(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))   # results come back in submission order


# ---------------------------------------------------------------- border bookkeeping

@dataclass
class _Border:
    """Rows of the border that couple to one diagonal block, as a compact sparse matrix."""

    rows: np.ndarray            # border-relative row ids touching the block
    C: sp.csr_array             # |rows| x n_i
    full: sp.csr_array          # n_c x n_i (for the back-substitution)


def _split(A: sp.csr_array, blk: Block):
    """Diagonal blocks, border couplings and the border corner of ``blk`` (indices relative to blk.start)."""
    b0, b1 = blk.border_start - blk.start, blk.size
    diag, borders = [], []
    for c in blk.children:
        s, e = c.start - blk.start, c.stop - blk.start
        diag.append(A[s:e, s:e])
        full = sp.csr_array(A[b0:b1, s:e])
        rows = np.flatnonzero(np.diff(full.indptr))
        borders.append(_Border(rows, sp.csr_array(full[rows, :]), full))
    corner = A[b0:b1, b0:b1]
    return diag, borders, corner


def _dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def _schur(corner, parts, counter, trace, step, owner=()):
    """Corner minus the per-block contributions, reduced in ascending block order."""
    S = _dense(corner).astype(complex, copy=True)
    for rows, Si in parts:
        S[np.ix_(rows, rows)] -= Si
        trace.add(step, owner, _count(counter, float(len(rows)) ** 2))
    return 0.5 * (S + S.conj().T)


# ---------------------------------------------------------------- single layer

def _leaf_solver(A_blk, block: Block, nested: bool, counter, trace, owner):
    """Factor a diagonal block, or invert it through its own DBBD structure."""
    if nested and block.children:
        X, sub = _invert(A_blk, _relative(block), counter, owner)
        trace.extend(sub)
        return _Explicit(X, counter)
    F = _Factor(_dense(A_blk).astype(complex), counter)
    trace.add("1", owner, F.flops)
    return F


def _relative(block: Block) -> Block:
    def shift(b, off):
        return Block(b.start - off, b.stop - off, [shift(c, off) for c in b.children])
    return shift(block, block.start)


def _solve_layer(sys: DbbdSystem, workers: int, mode: str, profile: PoolProfile):
    A, y, root = sys.A, np.asarray(sys.rhs, dtype=complex), sys.structure.root
    counter = FlopCounter()
    trace = SolveTrace(mode, profile=profile, n=sys.n)
    nested = mode in ("mode1", "mode2", "mode3")
    if not root.children or (len(root.children) == 1 and root.border_size == 0):
        F = _Factor(_dense(A).astype(complex), counter)
        om, f = F.solve(y)
        trace.add("4" if not root.children else "1", () if not root.children else (0,), F.flops)
        trace.add("4" if not root.children else "6", () if not root.children else (0,), f)
        return om, trace, counter
    diag, borders, corner = _split(A, root)
    kids = root.children
    bc = root.border_start

    def first(i):
        t = SolveTrace(mode)
        b = kids[i]
        F = _leaf_solver(diag[i], b, nested, counter, t, (i,))
        brd = borders[i]
        Z, f1 = F.solve(brd.C.conj().T.toarray())       # A_ii^{-1} A_ci^H on touching rows
        Si, f2 = _spmm(brd.C, Z, counter)
        w, f3 = F.solve(y[b.start:b.stop])
        ui, f4 = _spmm(brd.C, w, counter)
        t.add("2", (i,), f1 + f2 + f3 + f4)
        return F, Si, ui, t

    stage1 = _pool_map(first, range(len(kids)), workers)
    for _, _, _, t in stage1:
        trace.extend(t)
    S = _schur(corner, [(borders[i].rows, s[1]) for i, s in enumerate(stage1)], counter, trace, "3")
    rhs_c = y[bc:].copy()
    for i, s in enumerate(stage1):
        rhs_c[borders[i].rows] -= s[2]
        trace.add("3", (), _count(counter, len(borders[i].rows)))
    if S.shape[0]:
        Fc = _Factor(S, counter)
        omega_c, f = Fc.solve(rhs_c)
        trace.add("4", (), Fc.flops + f)
    else:
        omega_c = rhs_c

    def last(i):
        b = kids[i]
        F = stage1[i][0]
        t = SolveTrace(mode)
        r, f5 = _spmm(borders[i].full.conj().T.tocsr(), omega_c, counter)
        t.add("5", (i,), f5)
        om, f6 = F.solve(y[b.start:b.stop] - r)
        t.add("6", (i,), f6)
        return om, t

    stage3 = _pool_map(last, range(len(kids)), workers)
    omega = np.concatenate([o for o, _ in stage3] + [omega_c])
    for _, t in stage3:
        trace.extend(t)
    return omega, trace, counter


def solve_single_layer(sys: DbbdSystem, workers: int = 1, mode: str = "parallel",
                       profile: PoolProfile | None = None, counter_out: list | None = None):
    """Solve A omega = y on a DBBD system; omega is returned in labelled order.

    Numerics do not depend on ``workers``: contributions are reduced in block order.
    """
    if mode not in ("parallel", "serial"):
        raise ValueError(f"mode {mode!r} is not a single-layer mode")
    omega, trace, counter = _solve_layer(sys, workers, mode, profile or PoolProfile())
    if counter_out is not None:
        counter_out.append(counter)
    return omega, trace


def solve_multi_layer(sys: DbbdSystem, workers: int = 1, mode: str = "mode1",
                      profile: PoolProfile | None = None, counter_out: list | None = None):
    """Nested solve: split layer-1 blocks are inverted through their own DBBD structure."""
    if mode not in ("mode1", "mode2", "mode3"):
        raise ValueError(f"mode {mode!r} is not a nested mode")
    if sys.structure.layer_count < 2:
        raise ValueError("mode inconsistent with layer count")
    omega, trace, counter = _solve_layer(sys, workers, mode, profile or PoolProfile())
    if counter_out is not None:
        counter_out.append(counter)
    return omega, trace


# ---------------------------------------------------------------- nested inverse

def _invert(B, block: Block, counter, owner=(), workers: int = 1):
    """Explicit inverse of a Hermitian PD matrix with DBBD structure ``block`` (relative indices)."""
    B = sp.csr_array(B)
    n = B.shape[0]
    trace = SolveTrace("mode1")
    if not block.children:
        F = _Factor(B.toarray().astype(complex), counter)
        X, f = F.solve(np.eye(n, dtype=complex))
        trace.add("1.1", owner + (0,), F.flops + f)
        return X, trace
    diag, borders, corner = _split(B, block)
    kids = block.children
    bc = block.border_start
    n_c = n - bc

    def first(j):
        t = SolveTrace("mode1")
        sub = kids[j]
        if sub.children:
            Xj, st = _invert(diag[j], _relative(sub), counter, owner + (j,))
            for step, own, fl in st.tasks:   # deeper layers fold into this sub-cluster's step 1.1
                t.add("1.1", owner + (j,), fl)
            Fj = _Explicit(Xj, counter)
        else:
            Fj = _Factor(_dense(diag[j]).astype(complex), counter)
            t.add("1.1", owner + (j,), Fj.flops)
        brd = borders[j]
        Z, f1 = Fj.solve(brd.C.conj().T.toarray())      # B_jj^{-1} B_cj^H, i.e. (B_cj B_jj^{-1})^H
        Sj, f2 = _spmm(brd.C, Z, counter)
        t.add("1.2", owner + (j,), f1 + f2)
        return Fj, Sj, Z, t

    stage1 = _pool_map(first, range(len(kids)), workers)
    for *_, t in stage1:
        trace.extend(t)
    S = _schur(corner, [(borders[j].rows, s[1]) for j, s in enumerate(stage1)], counter, trace, "1.3", owner)
    # right-hand side [-B_c1 B_11^{-1}, ..., -B_cm B_mm^{-1}, I]
    R = np.zeros((n_c, n), dtype=complex)
    for j, s in enumerate(stage1):
        sub = kids[j]
        R[np.ix_(borders[j].rows, np.arange(sub.start, sub.stop))] = -s[2].conj().T
    R[:, bc:] = np.eye(n_c)
    if n_c:
        Fc = _Factor(S, counter)
        Xc, f = Fc.solve(R)
        trace.add("1.4", owner, Fc.flops + f)
    else:
        Xc = R

    def last(j):
        t = SolveTrace("mode1")
        sub = kids[j]
        rhs = np.zeros((sub.size, n), dtype=complex)
        rhs[:, sub.start:sub.stop] = np.eye(sub.size)
        prod, f5 = _spmm(borders[j].full.conj().T.tocsr(), Xc, counter)
        rhs -= prod
        t.add("1.5", owner + (j,), f5)
        Xj, f6 = stage1[j][0].solve(rhs)
        t.add("1.6", owner + (j,), f6)
        return Xj, t

    stage3 = _pool_map(last, range(len(kids)), workers)
    X = np.vstack([x for x, _ in stage3] + [Xc])
    for _, t in stage3:
        trace.extend(t)
    return 0.5 * (X + X.conj().T), trace


def invert_block_nested(B, block: Block, workers: int = 1):
    """Inverse of a DBBD Hermitian PD matrix via its cut-node Schur complement.

    ``block`` gives the DBBD structure of ``B`` (indices relative to B). Returns (X, trace).
    """
    counter = FlopCounter()
    X, trace = _invert(B, _relative(block), counter, (), workers)
    trace.n = B.shape[0]
    return X, trace


def detect_from_omega(omega: np.ndarray, ch: ChannelSet, return_flops: bool = False):
    """x_hat = P^{1/2} H_hat^H omega, with omega in original RRH order."""
    H_hat = ch.H_hat
    x = np.sqrt(ch.P) * (H_hat.conj().T @ omega)
    if return_flops:
        return x, float(H_hat.nnz)   # one multiply-add per stored entry
    return x
