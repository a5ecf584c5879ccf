"""Instance builders shared by the solver tests (independent of the labelling code)."""

import numpy as np
import scipy.sparse as sp

from dnc.cluster import Block, BlockStructure, DbbdSystem, Layer


def tree(sizes, border, start=0):
    """Block tree from nested size lists: an int is a leaf, a (children, border) tuple is split."""
    kids, pos = [], start
    for s in sizes:
        if isinstance(s, tuple):
            child = tree(s[0], s[1], pos)
        else:
            child = Block(pos, pos + s)
        kids.append(child)
        pos = child.stop
    return Block(start, pos + border, kids)


def dbbd_pattern(root: Block, n: int) -> np.ndarray:
    """Boolean mask of entries allowed by the nested DBBD zero pattern."""
    allowed = np.ones((n, n), dtype=bool)

    def carve(b):
        for i, ci in enumerate(b.children):
            for j, cj in enumerate(b.children):
                if i != j:
                    allowed[ci.start:ci.stop, cj.start:cj.stop] = False
            carve(ci)

    carve(root)
    return allowed


def random_dbbd(rng, root: Block, density=0.3, loading=1.0, complex_=True):
    """Hermitian PD matrix with the zero pattern of ``root`` (diagonally dominant)."""
    n = root.stop
    allowed = dbbd_pattern(root, n)
    M = rng.standard_normal((n, n))
    if complex_:
        M = M + 1j * rng.standard_normal((n, n))
    M = np.where(allowed & (rng.random((n, n)) < density), M, 0)
    M = np.triu(M, 1)
    A = M + M.conj().T
    A[np.diag_indices(n)] = np.abs(A).sum(axis=1) + loading
    return A


def system(A, root: Block, y):
    n = root.stop
    layer = Layer(1.0, [], [], [], [np.zeros(0, int)])
    structure = BlockStructure([layer] * max(root.depth(), 1), np.arange(n), root, 1.0)
    return DbbdSystem(sp.csr_array(A), structure, np.asarray(y, dtype=complex))
