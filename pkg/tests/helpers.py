import numpy as np

from thbfit.adaptive import MarkedSet, refine
from thbfit.hiermesh import DomainHierarchy, compute_active_sets
from thbfit.splinecore import TensorSpace


def quadrant_hierarchy():
    """8x8 unit cells, d=(2,2), the lower-left 2x2 level-0 cells refined."""
    sp = TensorSpace.uniform([0, 0], [8, 8], [8, 8], (2, 2))
    h = DomainHierarchy(sp)
    return h.refine({0: h.space(0).ravel_cells((np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1])))})


def random_hierarchy(rng, degrees=(2, 2), levels=4, cells=(6, 6), picks=3, nonuniform=False):
    """Hierarchy grown by refining random active functions' supports."""
    if nonuniform:
        breaks = [np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0.05, 0.95, n - 1)])) for n in cells]
        sp = TensorSpace.from_breaks(breaks, degrees)
    else:
        sp = TensorSpace.uniform([0, 0], [1, 1], cells, degrees)
    h = DomainHierarchy(sp)
    while h.M < levels:
        act = compute_active_sets(h)
        keys = []
        for l in range(h.M):
            k = act[l]
            take = rng.choice(k, size=min(picks, k.size), replace=False) if k.size and l == h.M - 1 else np.empty(0, np.int64)
            keys.append(np.sort(take.astype(np.int64)))
        new = refine(h, MarkedSet(tuple(keys)))
        if new.M == h.M:
            break
        h = new
    return h
