"""Rectangular domains with axis-aligned boxes cut out, and the basis
trimming they induce."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def interior(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X > np.array(self.lo)) & (X < np.array(self.hi)), axis=1)

    def closed(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= np.array(self.lo)) & (X <= np.array(self.hi)), axis=1)


@dataclass(frozen=True)
class DomainSpec:
    """``base`` minus the open interiors of the ``cuts``.

    A function is kept when its support shares a set of positive measure
    with the domain; edge or corner contact alone does not count.
    """

    base: Box
    cuts: tuple = ()

    def __post_init__(self):
        cuts = tuple(self.cuts)
        for c in cuts:
            if len(c.lo) != len(self.base.lo):
                raise ValueError("cut dimension differs from the base")
            if not all(a < d and c_ < b for a, b, c_, d in zip(self.base.lo, self.base.hi, c.lo, c.hi)):
                raise ValueError(f"cut {c} does not intersect the base rectangle")
        object.__setattr__(self, "cuts", cuts)
        # a fully covered base leaves nothing
        if self._uncovered_fraction(np.array(self.base.lo), np.array(self.base.hi)) == 0:
            raise ValueError("the cuts remove the whole domain")

    @classmethod
    def rectangle(cls, lo, hi) -> "DomainSpec":
        return cls(Box(tuple(lo), tuple(hi)))

    @property
    def r(self) -> int:
        return len(self.base.lo)

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        inside = self.base.closed(X)
        for c in self.cuts:
            inside &= ~c.interior(X)
        return inside

    def _edges(self, lo, hi, k):
        pts = [lo[k], hi[k]]
        for c in self.cuts:
            pts += [c.lo[k], c.hi[k]]
        pts = np.unique(np.clip(pts, lo[k], hi[k]))
        return pts

    def _uncovered_fraction(self, lo, hi) -> float:
        # coordinate compression of one box against the cuts
        edges = [self._edges(lo, hi, k) for k in range(len(lo))]
        mids = np.meshgrid(*[0.5 * (e[1:] + e[:-1]) for e in edges], indexing="ij")
        vols = np.ones(mids[0].shape)
        for k, e in enumerate(edges):
            shape = [1] * len(edges)
            shape[k] = -1
            vols = vols * np.diff(e).reshape(shape)
        pts = np.stack([m.ravel() for m in mids], axis=1)
        covered = np.zeros(pts.shape[0], dtype=bool)
        for c in self.cuts:
            covered |= c.closed(pts)
        return float(vols.ravel()[~covered].sum())

    def cell_mask(self, space) -> np.ndarray:
        """Flat mask of the grid cells of ``space`` that meet the domain."""
        return _cell_mask(self, space)

    def keep_mask(self, hierarchy, level: int, keys) -> np.ndarray:
        """Whether each level-``level`` function's support meets the domain."""
        keys = np.asarray(keys, dtype=np.int64)
        if keys.size == 0:
            return np.zeros(0, dtype=bool)
        cmask = _cell_mask(self, hierarchy.space(level))
        cells, valid = hierarchy.support_cell_grid(level, keys)
        return np.any(cmask[cells] & valid, axis=1)


@lru_cache(maxsize=64)
def _cell_mask(dom: DomainSpec, space) -> np.ndarray:
    # split every grid cell at the base and cut edges; a cell meets the domain
    # when one of its pieces does (piece midpoints never lie on an edge)
    axes = []
    for k, kv in enumerate(space.kvs):
        b = kv.breaks
        extra = [dom.base.lo[k], dom.base.hi[k]]
        for c in dom.cuts:
            extra += [c.lo[k], c.hi[k]]
        axes.append(np.unique(np.concatenate([b, np.clip(extra, b[0], b[-1])])))
    mids = [0.5 * (e[1:] + e[:-1]) for e in axes]
    grid = np.meshgrid(*mids, indexing="ij")
    pts = np.stack([g.ravel() for g in grid], axis=1)
    free = dom.base.interior(pts)
    for c in dom.cuts:
        free &= ~c.closed(pts)
    idx = [np.searchsorted(kv.breaks, m, side="right") - 1 for kv, m in zip(space.kvs, mids)]
    cells = np.meshgrid(*idx, indexing="ij")
    out = np.zeros(space.cell_shape, dtype=bool)
    np.logical_or.at(out, tuple(c.ravel() for c in cells), free)
    out = out.reshape(-1)
    out.setflags(write=False)
    return out


def trim_basis(hierarchy, dom: DomainSpec | None, level: int, keys) -> np.ndarray:
    """The subset of ``keys`` (level functions) whose support meets ``dom``."""
    keys = np.asarray(keys, dtype=np.int64)
    if dom is None:
        return keys
    return keys[dom.keep_mask(hierarchy, level, keys)]
