"""Geometric RRH labelling and (nested) DBBD permutation of the detection matrix."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .netgen import NetworkLayout


@dataclass
class Block:
    """Index range [start, stop) of the permuted system.

    ``children`` are the diagonal blocks (contiguous from ``start``); the rest of the
    range up to ``stop`` is the border (cut-node) part. A block without children is
    treated as a dense leaf.
    """

    start: int
    stop: int
    children: list["Block"] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def border_start(self) -> int:
        return self.children[-1].stop if self.children else self.start

    @property
    def border_size(self) -> int:
        return self.stop - self.border_start

    @property
    def is_split(self) -> bool:
        return bool(self.children)

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0) if self.children else 0

    def to_dict(self) -> dict:
        return {"start": self.start, "stop": self.stop, "children": [c.to_dict() for c in self.children]}


@dataclass
class Layer:
    side: float
    clusters: list[np.ndarray]          # original RRH ids of every center (sub-)cluster
    parents: list[int]                  # enclosing cluster in the previous layer, -1 on layer 1
    cells: list[tuple[float, float]]    # lower-left corner of each cluster's grid square
    boundaries: list[np.ndarray]        # layer 1: [boundary]; deeper: one per previous-layer cluster


@dataclass(frozen=True)
class LayerStats:
    N_d: float   # average diagonal-block size
    N_b: float   # average cut-node block size
    m: float     # average number of diagonal blocks per parent


@dataclass
class BlockStructure:
    layers: list[Layer]
    order: np.ndarray       # order[new index] = original RRH id
    root: Block
    d0: float

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def n(self) -> int:
        return len(self.order)

    @property
    def permutation(self) -> np.ndarray:
        """permutation[n] = new 0-based index of original RRH n."""
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(len(self.order))
        return inv

    @property
    def labels(self) -> np.ndarray:
        """1-based labels b(n)."""
        return self.permutation + 1

    def blocks_at(self, depth: int) -> list[Block]:
        """Diagonal blocks created by layer ``depth`` (1-based)."""
        level = [self.root]
        for _ in range(depth):
            level = [c for b in level for c in b.children]
        return level

    def stats(self, t: int = 1) -> LayerStats:
        layer = self.layers[t - 1]
        sizes = [len(c) for c in layer.clusters]
        n_d = float(np.mean(sizes)) if sizes else 0.0
        bnd = [len(b) for b in layer.boundaries]
        n_parents = 1 if t == 1 else len(self.layers[t - 2].clusters)
        return LayerStats(n_d, float(np.mean(bnd)) if bnd else 0.0, len(sizes) / max(n_parents, 1))

    def to_json(self) -> str:
        return json.dumps(
            {
                "d0": self.d0,
                "layers": [
                    {
                        "r_t": L.side,
                        "clusters": [c.tolist() for c in L.clusters],
                        "parents": list(L.parents),
                        "cells": [list(c) for c in L.cells],
                        "boundary": sorted(int(i) for b in L.boundaries for i in b),
                        "boundaries": [b.tolist() for b in L.boundaries],
                    }
                    for L in self.layers
                ],
                "permutation": self.permutation.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "BlockStructure":
        d = json.loads(text)
        layers = []
        for L in d["layers"]:
            layers.append(
                Layer(
                    L["r_t"],
                    [np.array(c, dtype=int) for c in L["clusters"]],
                    list(L["parents"]),
                    [tuple(c) for c in L["cells"]],
                    [np.array(b, dtype=int) for b in L["boundaries"]],
                )
            )
        n = len(d["permutation"])
        return _assemble(layers, n, d["d0"])


def _assemble(layers: list[Layer], n: int, d0: float) -> BlockStructure:
    children_of = [dict() for _ in layers]
    for t, layer in enumerate(layers):
        for c, p in enumerate(layer.parents):
            children_of[t].setdefault(p, []).append(c)

    def emit(t: int, parent: int, start: int):
        layer = layers[t]
        pos, kids, ids = start, [], []
        for c in children_of[t].get(parent, []):
            if t + 1 < len(layers):
                blk, cids = emit(t + 1, c, pos)
            else:
                cids = list(layer.clusters[c])
                blk = Block(pos, pos + len(cids))
            kids.append(blk)
            ids.extend(cids)
            pos += len(cids)
        bnd = layer.boundaries[0 if t == 0 else parent]
        ids.extend(bnd.tolist())
        pos += len(bnd)
        return Block(start, pos, kids), ids

    root, ids = emit(0, -1, 0)
    order = np.asarray(ids, dtype=int)
    if len(order) != n or len(np.unique(order)) != n:
        raise ValueError("layers do not describe a partition of the RRHs")
    return BlockStructure(layers, order, root, d0)


def _grid_partition(ids, xy, origin, extent, side, d0):
    """One pass of the labelling grid over ``ids``.

    Returns ([(cell_index, cell_corner, member_ids)], boundary_ids), clusters in
    ascending cell index; members keep their input order.
    """
    ids = np.asarray(ids, dtype=int)
    w, h = extent
    mx = max(1, math.ceil(round(w / side, 9)))
    my = max(1, math.ceil(round(h / side, 9)))
    rel = xy[ids] - np.asarray(origin, dtype=float)
    i = np.clip(np.ceil(rel[:, 0] / side), 1, mx).astype(int)
    j = np.clip(np.ceil(rel[:, 1] / side), 1, my).astype(int)
    in_x = ((i - 1) * side + d0 <= rel[:, 0]) & (rel[:, 0] <= i * side - d0)
    in_y = ((j - 1) * side + d0 <= rel[:, 1]) & (rel[:, 1] <= j * side - d0)
    center = in_x & in_y
    # row-major over (i, j); the (i-1)*m_x+j form is only a bijection for square grids
    cell = (i - 1) * my + j
    clusters = []
    for c in np.unique(cell[center]):
        members = ids[center & (cell == c)]
        ci, cj = divmod(int(c) - 1, my)
        corner = (origin[0] + ci * side, origin[1] + cj * side)
        clusters.append((int(c), corner, members))
    return clusters, ids[~center]


def label_rrhs(layout: NetworkLayout, r1: float, d0: float) -> BlockStructure:
    """Single-layer labelling: square grid of side r1, width-d0 boundaries go to the cut-node block."""
    if r1 <= 2 * d0:
        raise ValueError("no center region")
    x0, y0, w, h = layout.geometry.bbox()
    clusters, boundary = _grid_partition(np.arange(layout.n_rrh), layout.rrh_positions, (x0, y0), (w, h), r1, d0)
    layer = Layer(
        float(r1),
        [m for _, _, m in clusters],
        [-1] * len(clusters),
        [c for _, c, _ in clusters],
        [boundary],
    )
    return _assemble([layer], layout.n_rrh, float(d0))


def nest_labelling(structure: BlockStructure, layout: NetworkLayout, r_next: float, d0: float) -> BlockStructure:
    """Re-apply the grid labelling with side r_next inside every center cluster of the last layer."""
    if r_next <= 2 * d0:
        raise ValueError("no center region")
    last = structure.layers[-1]
    if r_next > last.side * (1 + 1e-12):
        raise ValueError("r_next must not exceed the current side length")
    clusters, parents, cells, boundaries = [], [], [], []
    for p, (members, corner) in enumerate(zip(last.clusters, last.cells)):
        subs, bnd = _grid_partition(members, layout.rrh_positions, corner, (last.side, last.side), r_next, d0)
        for _, c, m in subs:
            clusters.append(m)
            parents.append(p)
            cells.append(c)
        boundaries.append(bnd)
    layers = copy.deepcopy(structure.layers) + [Layer(float(r_next), clusters, parents, cells, boundaries)]
    return _assemble(layers, structure.n, structure.d0)


@dataclass
class DbbdSystem:
    A: sp.csr_array
    structure: BlockStructure
    rhs: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def unpermute(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[self.structure.order] = v
        return out


def permute_to_dbbd(A, structure: BlockStructure, y) -> DbbdSystem:
    """Symmetric permutation of A (and y) into labelled order."""
    A = sp.csr_array(A)
    y = np.asarray(y)
    n = structure.n
    if A.shape != (n, n) or y.shape[0] != n:
        raise ValueError("size mismatch between matrix, rhs and structure")
    order = structure.order
    Ap = sp.csr_array(A[order, :][:, order])
    Ap.sort_indices()
    return DbbdSystem(Ap, structure, y[order].copy())


@dataclass(frozen=True)
class DbbdReport:
    ok: bool
    violations: list   # (row, col, depth) in permuted indices


def _depth_tags(root: Block, n: int):
    """Per depth: (parent id, child id) of every index; -1 where not applicable."""
    tags = []
    level = [root]
    uid = 0
    while any(b.children for b in level):
        parent = np.full(n, -1)
        child = np.full(n, -1)
        nxt = []
        for pid, b in enumerate(level):
            if not b.children:
                continue
            parent[b.start:b.stop] = pid
            for c in b.children:
                child[c.start:c.stop] = uid
                uid += 1
                nxt.append(c)
        tags.append((parent, child))
        level = nxt
    return tags


def verify_dbbd(sys: DbbdSystem) -> DbbdReport:
    """Check the exact zero pattern between distinct diagonal blocks, at every layer."""
    coo = sp.coo_array(sys.A)
    nz = coo.data != 0
    rows, cols = coo.row[nz], coo.col[nz]
    violations = []
    for depth, (parent, child) in enumerate(_depth_tags(sys.structure.root, sys.n), start=1):
        bad = (
            (parent[rows] >= 0)
            & (parent[rows] == parent[cols])
            & (child[rows] >= 0)
            & (child[cols] >= 0)
            & (child[rows] != child[cols])
        )
        violations.extend((int(r), int(c), depth) for r, c in zip(rows[bad], cols[bad]))
    return DbbdReport(not violations, violations)


def sparsity_pattern(sys: DbbdSystem) -> np.ndarray:
    """(row, col) coordinates of the permuted matrix, for spy plots."""
    coo = sp.coo_array(sys.A)
    keep = coo.data != 0
    return np.column_stack([coo.row[keep], coo.col[keep]])
