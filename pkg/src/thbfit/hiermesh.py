"""Domain hierarchies, (truncated) hierarchical B-spline bases and their
quasi-interpolants.

Cells and functions are addressed by flat integer keys per level
(``np.ravel_multi_index`` over the level's cell or function shape). Every
set-valued quantity is a sorted ``int64`` array, so membership tests are
``searchsorted`` lookups and nothing is ever stored on the full finest grid.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import kernels
from .splinecore import TensorSpace, dyadic_refine, refinement_band, two_scale


def _sorted_unique(a) -> np.ndarray:
    return np.unique(np.asarray(a, dtype=np.int64).ravel())


def _member(sorted_keys: np.ndarray, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.int64)
    if sorted_keys.size == 0:
        return np.zeros(q.shape, dtype=bool)
    pos = np.searchsorted(sorted_keys, q)
    pos = np.minimum(pos, sorted_keys.size - 1)
    return sorted_keys[pos] == q


def _lookup(sorted_keys: np.ndarray, vals: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Values at keys ``q``; zero where a key is absent."""
    q = np.asarray(q, dtype=np.int64)
    if sorted_keys.size == 0:
        return np.zeros(q.shape)
    pos = np.minimum(np.searchsorted(sorted_keys, q), sorted_keys.size - 1)
    found = sorted_keys[pos] == q
    return np.where(found, vals[pos], 0.0)


def _local_offsets(degrees) -> np.ndarray:
    """C-ordered offsets of the (d_1+1) x ... x (d_r+1) functions on a cell."""
    return np.array(list(product(*[range(d + 1) for d in degrees])), dtype=np.int64)


class LevelSpaces:
    """The dyadic sequence V^0, V^1, ... built on demand and shared.

    Each level's knots are computed once, so knot equality between levels is
    exact and refinement weights can be cached.
    """

    def __init__(self, space0: TensorSpace):
        if space0.level != 0:
            space0 = TensorSpace(space0.kvs, 0)
        self._spaces = [space0]
        self._bands: dict[int, list] = {}
        self._lock = threading.Lock()

    def __getitem__(self, level: int) -> TensorSpace:
        if level < 0:
            raise IndexError("negative level")
        with self._lock:
            while len(self._spaces) <= level:
                self._spaces.append(dyadic_refine(self._spaces[-1]))
            return self._spaces[level]

    @property
    def base(self) -> TensorSpace:
        return self._spaces[0]

    def band(self, level: int):
        """Per-direction knot-insertion bands from ``level`` to ``level + 1``."""
        coarse, fine = self[level], self[level + 1]
        with self._lock:
            if level not in self._bands:
                self._bands[level] = [
                    refinement_band(kc, kf) for kc, kf in zip(coarse.kvs, fine.kvs)
                ]
            return self._bands[level]


def _cells_to_keys(space: TensorSpace, cells) -> np.ndarray:
    a = np.asarray(cells)
    if a.ndim == 2 and a.shape[1] == space.r and a.dtype != object:
        if a.size == 0:
            return np.empty(0, dtype=np.int64)
        return space.ravel_cells(a.T)
    a = np.asarray(list(cells) if not isinstance(cells, np.ndarray) else cells)
    if a.ndim == 2:
        return space.ravel_cells(a.T) if a.size else np.empty(0, dtype=np.int64)
    return a.astype(np.int64).ravel()


class DomainHierarchy:
    """Nested domains Omega^0 >= Omega^1 >= ... stored as level cell sets.

    ``omega[l]`` holds the level-``l`` cells of Omega^l. Omega^0 is the whole
    initial grid; deeper levels are unions of complete dyadic child groups.
    """

    def __init__(self, spaces, omega=None):
        if isinstance(spaces, TensorSpace):
            spaces = LevelSpaces(spaces)
        self.spaces: LevelSpaces = spaces
        base = spaces.base
        levels = [np.arange(base.num_cells, dtype=np.int64)]
        for l, cells in enumerate(list(omega or [])[1:], start=1):
            levels.append(_sorted_unique(_cells_to_keys(spaces[l], cells)))
        while len(levels) > 1 and levels[-1].size == 0:
            levels.pop()
        self._omega = tuple(levels)
        for a in self._omega:
            a.setflags(write=False)
        self._validate()
        self._cache: dict = {}
        self._cache_lock = threading.Lock()

    # -- structure --------------------------------------------------------

    def _validate(self):
        nchild = 2 ** self.r
        for l in range(1, len(self._omega)):
            cells = self._omega[l]
            if cells.size == 0:
                raise ValueError(f"Omega^{l} is empty but a finer level is not")
            space = self.space(l)
            if cells.min() < 0 or cells.max() >= space.num_cells:
                raise ValueError(f"cell key out of range at level {l}")
            parents = self.parents(l, cells)
            uniq, counts = np.unique(parents, return_counts=True)
            if not np.all(_member(self._omega[l - 1], uniq)):
                raise ValueError(f"Omega^{l} is not nested in Omega^{l - 1}")
            if np.any(counts != nchild):
                raise ValueError(f"Omega^{l} contains incomplete dyadic child groups")

    @property
    def r(self) -> int:
        return self.spaces.base.r

    @property
    def M(self) -> int:
        return len(self._omega)

    @property
    def degrees(self) -> tuple:
        return self.spaces.base.degrees

    def space(self, level: int) -> TensorSpace:
        return self.spaces[level]

    def omega(self, level: int) -> np.ndarray:
        if level >= self.M:
            return np.empty(0, dtype=np.int64)
        return self._omega[level]

    def parents(self, level: int, cells) -> np.ndarray:
        multi = self.space(level).unravel_cells(cells)
        return self.space(level - 1).ravel_cells(tuple(m // 2 for m in multi))

    def children(self, level: int, cells) -> np.ndarray:
        """Flat level-``level+1`` keys of the dyadic children of ``cells``."""
        cells = np.asarray(cells, dtype=np.int64)
        multi = self.space(level).unravel_cells(cells)
        fine = self.space(level + 1)
        out = []
        for offs in product((0, 1), repeat=self.r):
            out.append(fine.ravel_cells(tuple(2 * m + o for m, o in zip(multi, offs))))
        if not out or cells.size == 0:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(out))

    def refined_cells(self, level: int) -> np.ndarray:
        """Level-``level`` cells covered by Omega^{level+1}."""
        key = ("refined", level)
        if key not in self._cache:
            fine = self.omega(level + 1)
            val = _sorted_unique(self.parents(level + 1, fine)) if fine.size else fine
            self._store(key, val)
        return self._cache[key]

    def active_cells(self, level: int) -> np.ndarray:
        key = ("active_cells", level)
        if key not in self._cache:
            om = self.omega(level)
            self._store(key, om[~_member(self.refined_cells(level), om)])
        return self._cache[key]

    def _store(self, key, val):
        with self._cache_lock:
            self._cache.setdefault(key, val)

    def mesh(self) -> "HierarchicalMesh":
        return HierarchicalMesh(self, tuple(self.active_cells(l) for l in range(self.M)))

    def cell_bounds(self, level: int, cells):
        space = self.space(level)
        multi = space.unravel_cells(cells)
        lo = np.stack([kv.breaks[m] for kv, m in zip(space.kvs, multi)], axis=-1)
        hi = np.stack([kv.breaks[m + 1] for kv, m in zip(space.kvs, multi)], axis=-1)
        return lo, hi

    # -- functions and supports ------------------------------------------

    def cell_functions(self, level: int, cells) -> np.ndarray:
        """(n, P) flat keys of the functions alive on each cell, C-ordered."""
        space = self.space(level)
        multi = space.unravel_cells(cells)
        first = [kv.first_func(m) for kv, m in zip(space.kvs, multi)]
        offs = _local_offsets(space.degrees)
        idx = tuple(f[:, None] + offs[None, :, k] for k, f in enumerate(first))
        return np.ravel_multi_index(idx, space.shape).astype(np.int64)

    def functions_touching(self, level: int, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64)
        if cells.size == 0:
            return np.empty(0, dtype=np.int64)
        return _sorted_unique(self.cell_functions(level, cells))

    def support_cell_grid(self, level: int, funcs):
        """(n, P) keys of the cells under each support, with a validity mask."""
        space = self.space(level)
        funcs = np.asarray(funcs, dtype=np.int64)
        multi = space.unravel(funcs)
        n = funcs.size
        cells = np.zeros((n, 1), dtype=np.int64)
        valid = np.ones((n, 1), dtype=bool)
        for k, (kv, m) in enumerate(zip(space.kvs, multi)):
            first = kv.first_cell[m]
            last = kv.last_cell[m]
            ck = first[:, None] + np.arange(kv.degree + 1)[None, :]
            vk = ck <= last[:, None]
            ck = np.minimum(ck, kv.num_cells - 1)
            stride = int(np.prod(space.cell_shape[k + 1 :]))
            width = cells.shape[1] * ck.shape[1]
            cells = (cells[:, :, None] + ck[:, None, :] * stride).reshape(n, width)
            valid = (valid[:, :, None] & vk[:, None, :]).reshape(n, width)
        return cells, valid

    def support_cells(self, level: int, funcs) -> np.ndarray:
        """Sorted keys of all cells under the supports of ``funcs``."""
        cells, valid = self.support_cell_grid(level, funcs)
        return _sorted_unique(cells[valid])

    def support_counts(self, level: int, funcs, cellset: np.ndarray):
        """Number of support cells of each function lying in ``cellset``, and
        the total number of support cells."""
        cells, valid = self.support_cell_grid(level, funcs)
        inside = _member(cellset, cells) & valid
        return inside.sum(axis=1), valid.sum(axis=1)

    def contained(self, level: int, funcs, cellset=None) -> np.ndarray:
        """Whether ``supp B_J`` lies inside ``cellset`` (default Omega^level)."""
        if cellset is None:
            cellset = self.omega(level)
        cnt, size = self.support_counts(level, funcs, cellset)
        return cnt == size

    # -- refinement and point location -----------------------------------

    def refine(self, cells_by_level: dict) -> "DomainHierarchy":
        """New hierarchy with the given level cells split into dyadic children."""
        omega = [None] + [self.omega(l) for l in range(1, self.M)]
        for level, cells in sorted(cells_by_level.items()):
            cells = np.asarray(cells, dtype=np.int64)
            if cells.size == 0:
                continue
            if not np.all(_member(self.omega(level), cells)):
                raise ValueError(f"cannot refine cells outside Omega^{level}")
            kids = self.children(level, cells)
            while len(omega) <= level + 1:
                omega.append(np.empty(0, dtype=np.int64))
            omega[level + 1] = np.union1d(omega[level + 1], kids)
        return DomainHierarchy(self.spaces, omega)

    def locate(self, X):
        """Level and flat key of the active cell containing each point."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        levels = np.full(n, -1, dtype=np.int64)
        cells = np.full(n, -1, dtype=np.int64)
        todo = np.arange(n)
        for l in range(self.M):
            if todo.size == 0:
                break
            space = self.space(l)
            c = space.ravel_cells(space.find_cells(X[todo]).T)
            hit = _member(self.active_cells(l), c)
            levels[todo[hit]] = l
            cells[todo[hit]] = c[hit]
            todo = todo[~hit]
        if todo.size:
            raise RuntimeError("active cells do not cover all points")
        return levels, cells

    def __eq__(self, other):
        if not isinstance(other, DomainHierarchy):
            return NotImplemented
        return (
            self.spaces.base == other.spaces.base
            and self.M == other.M
            and all(np.array_equal(a, b) for a, b in zip(self._omega, other._omega))
        )

    __hash__ = object.__hash__

    def __repr__(self):
        sizes = [a.size for a in self._omega]
        return f"DomainHierarchy(M={self.M}, cells per level={sizes})"


@dataclass(frozen=True)
class HierarchicalMesh:
    hierarchy: DomainHierarchy
    cells: tuple  # active cell keys per level

    @property
    def num_cells(self) -> int:
        return int(sum(c.size for c in self.cells))

    def volume(self) -> float:
        total = 0.0
        for l, c in enumerate(self.cells):
            if c.size:
                lo, hi = self.hierarchy.cell_bounds(l, c)
                total += float(np.prod(hi - lo, axis=1).sum())
        return total


@dataclass(frozen=True)
class ActiveSet:
    """Sorted flat keys of the active B-splines on each level."""

    keys: tuple

    def __len__(self):
        return len(self.keys)

    def __getitem__(self, level):
        return self.keys[level]

    @property
    def ndof(self) -> int:
        return int(sum(k.size for k in self.keys))

    def contains(self, level: int, key) -> bool:
        return bool(_member(self.keys[level], np.array([key]))[0])


def compute_active_sets(h: DomainHierarchy) -> ActiveSet:
    """Active multi-indices per level: support inside Omega^l but not Omega^{l+1}."""
    if "active" not in h._cache:
        keys = []
        for l in range(h.M):
            om = h.omega(l)
            cand = h.functions_touching(l, om)
            cnt_in, size = h.support_counts(l, cand, om)
            cnt_ref, _ = h.support_counts(l, cand, h.refined_cells(l))
            act = cand[(cnt_in == size) & (cnt_ref < size)]
            act.setflags(write=False)
            keys.append(act)
        h._store("active", ActiveSet(tuple(keys)))
    return h._cache["active"]


def refine_sparse(h: DomainHierarchy, level: int, keys, vals, fine_keys) -> np.ndarray:
    """Level-``level+1`` coefficients at ``fine_keys`` of the level-``level``
    spline with sparse coefficients ``(keys, vals)``.

    Coarse coefficients missing from ``keys`` are taken as zero.
    """
    fine_keys = np.asarray(fine_keys, dtype=np.int64)
    if fine_keys.size == 0:
        return np.zeros(0)
    coarse = h.space(level)
    fine = h.space(level + 1)
    bands = h.spaces.band(level)
    multi = fine.unravel(fine_keys)
    n = fine_keys.size
    ckeys = np.zeros((n, 1), dtype=np.int64)
    w = np.ones((n, 1))
    for k, ((start, wk), m) in enumerate(zip(bands, multi)):
        d = coarse.degrees[k]
        idx = start[m][:, None] + np.arange(d + 1)[None, :]
        stride = int(np.prod(coarse.shape[k + 1 :]))
        ckeys = (ckeys[:, :, None] + idx[:, None, :] * stride).reshape(n, -1)
        w = (w[:, :, None] * wk[m][:, None, :]).reshape(n, -1)
    cvals = _lookup(np.asarray(keys, dtype=np.int64), np.asarray(vals, dtype=float), ckeys)
    return (w * cvals).sum(axis=1)


def truncate_once(coeffs, h: DomainHierarchy, level: int) -> np.ndarray:
    """Zero the level-``level+1`` coefficients whose support lies in Omega^{level+1}."""
    if not 0 <= level < h.M - 1:
        raise ValueError(f"truncation level {level} out of range for M={h.M}")
    space = h.space(level + 1)
    coeffs = np.array(coeffs, dtype=float)
    if coeffs.shape != space.shape:
        raise ValueError(f"coefficient shape {coeffs.shape} != {space.shape}")
    inside = h.contained(level + 1, np.arange(space.num_funcs))
    flat = coeffs.reshape(-1)
    flat[inside] = 0.0
    return flat.reshape(space.shape)


def _eval_sparse(space: TensorSpace, keys, vals, X) -> np.ndarray:
    """Evaluate a spline given by sparse coefficients on one level."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cells, bvals = space.basis(X)
    n = X.shape[0]
    first = [kv.first_func(cells[:, k]) for k, kv in enumerate(space.kvs)]
    offs = _local_offsets(space.degrees)
    idx = tuple(f[:, None] + offs[None, :, k] for k, f in enumerate(first))
    fk = np.ravel_multi_index(idx, space.shape)
    table = _lookup(keys, vals, fk)
    return kernels.eval_cells(_pack(bvals, n), np.array(space.degrees, dtype=np.int64),
                              np.arange(n, dtype=np.int64), table)


def _pack(bvals, n) -> np.ndarray:
    dmax = max(v.shape[1] for v in bvals)
    out = np.zeros((len(bvals), n, dmax))
    for k, v in enumerate(bvals):
        out[k, :, : v.shape[1]] = v
    return out


@dataclass
class TruncatedFunction:
    """Trunc^{l+1}(B_J^l) as a chain of truncated level representations."""

    hierarchy: DomainHierarchy
    level: int
    J: tuple
    # (keys, values) kept on each level m = level .. M-1 after truncation
    kept: list = field(default_factory=list)
    removed: list = field(default_factory=list)

    @property
    def finest(self):
        return self.kept[-1]

    def __call__(self, X) -> np.ndarray:
        keys, vals = self.finest
        h = self.hierarchy
        return _eval_sparse(h.space(h.M - 1), keys, vals, X)


def build_truncated(h: DomainHierarchy, level: int, J) -> TruncatedFunction:
    space = h.space(level)
    J = space.check_index(J)
    key = int(space.ravel(np.array(J)[:, None])[0])
    act = compute_active_sets(h)
    if level >= h.M or not act.contains(level, key):
        raise ValueError(f"B_{J}^{level} is not active")
    ckey = ("trunc", level, key)
    if ckey in h._cache:
        return h._cache[ckey]
    keys = np.array([key], dtype=np.int64)
    vals = np.array([1.0])
    tf = TruncatedFunction(h, level, J, kept=[(keys, vals)], removed=[0])
    for m in range(level + 1, h.M):
        # fine functions that can appear live on children of the current support
        kids = h.children(m - 1, h.support_cells(m - 1, keys))
        cand = h.functions_touching(m, kids)
        fv = refine_sparse(h, m - 1, keys, vals, cand)
        inside = h.contained(m, cand)
        tf.removed.append(int(np.count_nonzero(inside & (fv != 0.0))))
        keep = ~inside & (fv != 0.0)
        keys, vals = cand[keep], fv[keep]
        tf.kept.append((keys, vals))
    h._store(ckey, tf)
    return h._cache[ckey]


class QuasiInterpolant:
    """Sum over active (l, J) of lambda_J^l T_J^l.

    ``coeffs`` is a list (one entry per level) of ``(keys, values)`` pairs.
    Keys must be active; functions left out (e.g. trimmed away) contribute
    nothing.
    """

    def __init__(self, hierarchy: DomainHierarchy, coeffs):
        self.hierarchy = hierarchy
        act = compute_active_sets(hierarchy)
        levels = []
        for l in range(hierarchy.M):
            if l < len(coeffs) and coeffs[l] is not None:
                k, v = coeffs[l]
                k = np.asarray(k, dtype=np.int64)
                v = np.asarray(v, dtype=float)
                order = np.argsort(k, kind="stable")
                k, v = k[order], v[order]
                if k.size and np.any(np.diff(k) == 0):
                    raise ValueError(f"duplicate coefficient keys on level {l}")
                if not np.all(_member(act[l], k)):
                    raise ValueError(f"coefficient given for an inactive function on level {l}")
            else:
                k, v = np.empty(0, dtype=np.int64), np.empty(0)
            levels.append((k, v))
        self.coeffs = levels
        self._tables = None
        self._lock = threading.Lock()

    @classmethod
    def from_dict(cls, hierarchy: DomainHierarchy, lam: dict) -> "QuasiInterpolant":
        per = [([], []) for _ in range(hierarchy.M)]
        for (l, J), v in lam.items():
            key = int(np.ravel_multi_index(tuple(J), hierarchy.space(l).shape))
            per[l][0].append(key)
            per[l][1].append(v)
        return cls(hierarchy, [(np.array(k, dtype=np.int64), np.array(v)) for k, v in per])

    @property
    def ndof(self) -> int:
        return int(sum(k.size for k, _ in self.coeffs))

    def items(self):
        for l, (keys, vals) in enumerate(self.coeffs):
            multi = self.hierarchy.space(l).unravel(keys)
            for i in range(keys.size):
                yield l, tuple(int(m[i]) for m in multi), float(vals[i])

    def coefficient(self, level: int, J) -> float:
        keys, vals = self.coeffs[level]
        key = np.ravel_multi_index(tuple(J), self.hierarchy.space(level).shape)
        return float(_lookup(keys, vals, np.array([key]))[0])

    def cell_tables(self):
        """Per level: (active cell keys, (n_cells, P) coefficients of the
        level-l B-splines alive on each cell)."""
        with self._lock:
            if self._tables is None:
                self._tables = self._build_tables()
            return self._tables

    def _build_tables(self):
        h = self.hierarchy
        base = h.space(0)
        g_keys = np.arange(base.num_funcs, dtype=np.int64)
        g_vals = _lookup(self.coeffs[0][0], self.coeffs[0][1], g_keys)
        tables = []
        for l in range(h.M):
            act = h.active_cells(l)
            tables.append((act, _lookup(g_keys, g_vals, h.cell_functions(l, act))))
            if l + 1 < h.M:
                om = h.omega(l + 1)
                need = h.functions_touching(l + 1, om)
                inside = h.contained(l + 1, need, om)
                vals = np.zeros(need.size)
                vals[~inside] = refine_sparse(h, l, g_keys, g_vals, need[~inside])
                ak, av = self.coeffs[l + 1]
                if ak.size:
                    vals[np.searchsorted(need, ak)] = av
                g_keys, g_vals = need, vals
        return tables

    def __call__(self, X) -> np.ndarray:
        return eval_qi(self, X)


def eval_qi(q: QuasiInterpolant, X) -> np.ndarray:
    h = q.hierarchy
    X = np.atleast_2d(np.asarray(X, dtype=float))
    base = h.space(0)
    if not np.all(base.contains(X)):
        raise ValueError("point outside the domain")
    tables = q.cell_tables()
    levels, cells = h.locate(X)
    out = np.empty(X.shape[0])
    degrees = np.array(base.degrees, dtype=np.int64)
    for l in np.unique(levels):
        sel = np.flatnonzero(levels == l)
        act, table = tables[l]
        space = h.space(int(l))
        multi = np.stack(space.unravel_cells(cells[sel]), axis=1)
        _, bvals = space.basis(X[sel], cells=multi)
        rows = np.searchsorted(act, cells[sel])
        out[sel] = kernels.eval_cells(_pack(bvals, sel.size), degrees, rows, table)
    return out


def represent_in_thb(s_coeffs, h: DomainHierarchy) -> QuasiInterpolant:
    """THB coefficients of a level-0 spline: its level-l B-spline coefficients
    at every active (l, J)."""
    base = h.space(0)
    s_coeffs = np.asarray(s_coeffs, dtype=float)
    if s_coeffs.shape != base.shape:
        raise ValueError(f"coefficient shape {s_coeffs.shape} != {base.shape}")
    act = compute_active_sets(h)
    g_keys = np.arange(base.num_funcs, dtype=np.int64)
    g_vals = s_coeffs.reshape(-1).copy()
    coeffs = [(act[0], g_vals[act[0]])]
    for l in range(1, h.M):
        need = h.functions_touching(l, h.omega(l))
        g_vals = refine_sparse(h, l - 1, g_keys, g_vals, need)
        g_keys = need
        coeffs.append((act[l], _lookup(g_keys, g_vals, act[l])))
    return QuasiInterpolant(h, coeffs)


def dense_level_coeffs(s_coeffs, h: DomainHierarchy, level: int) -> np.ndarray:
    """Full coefficient array of a level-0 spline on ``level`` (small meshes only)."""
    c = np.asarray(s_coeffs, dtype=float)
    for l in range(level):
        c = two_scale(h.space(l), h.space(l + 1), c)
    return c
