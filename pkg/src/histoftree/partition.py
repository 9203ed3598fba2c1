"""Product partitions of [0,1]^d for locally private regression.

Protected axes are tiled by an equal-width histogram; the remaining axes by
a binary tree grown either with midpoint splits on the longest edges
(``max_edge_tree``) or with data-driven thresholds (``cart_tree``).  The
product of the two tilings is addressed through a single flat grid index.

Boundary convention everywhere: intervals are half-open ``[a, b)`` except
the topmost bin/leaf on each axis, which is closed at 1.  Every point of
[0,1]^d therefore belongs to exactly one grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError

_INDEX_CAP = np.iinfo(np.int64).max


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    return x


@dataclass(frozen=True)
class Cell:
    """An axis-aligned box spanning a subset of the original feature axes.

    ``lower``/``upper`` are per-axis bounds in [0,1]; ``axes`` holds the
    original feature indices the bounds refer to, in order.
    """

    lower: np.ndarray
    upper: np.ndarray
    axes: tuple[int, ...]

    def contains(self, x: np.ndarray) -> bool:
        """Membership under the half-open / closed-top convention."""
        x = np.asarray(x, dtype=np.float64)
        for k, ax in enumerate(self.axes):
            v = x[ax]
            if v < self.lower[k]:
                return False
            if v >= self.upper[k] and not (self.upper[k] == 1.0 and v == 1.0):
                return False
        return True

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def diameter(self) -> float:
        return float(np.sqrt(np.sum(self.widths**2)))


@dataclass(frozen=True)
class HistogramPartition:
    """Equal-width grid with ``t`` bins per axis over ``s`` protected axes.

    Cells are ordered lexicographically over their bin indices, first axis
    most significant.  ``s = 0`` degenerates to the single empty-product
    cell, which keeps the flat indexing uniform.
    """

    t: int
    s: int
    axes: tuple[int, ...]
    edges: np.ndarray = field(repr=False)

    @property
    def n_cells(self) -> int:
        return self.t**self.s

    def bin_of(self, coords) -> np.ndarray:
        """Per-axis bin ids for coordinates already sliced to ``axes``."""
        coords = _as_matrix(coords)
        bins = np.searchsorted(self.edges, coords, side="right") - 1
        return np.clip(bins, 0, self.t - 1)

    def cell_index(self, coords) -> np.ndarray:
        """Flat lexicographic cell id for each row of ``coords``."""
        if self.s == 0:
            return np.zeros(_as_matrix(coords).shape[0], dtype=np.int64)
        bins = self.bin_of(coords)
        strides = self.t ** np.arange(self.s - 1, -1, -1, dtype=np.int64)
        return bins @ strides

    def cells(self) -> list[Cell]:
        out = []
        for flat in range(self.n_cells):
            bins = []
            rem = flat
            for k in range(self.s):
                stride = self.t ** (self.s - 1 - k)
                bins.append(rem // stride)
                rem %= stride
            lower = np.array([self.edges[b] for b in bins])
            upper = np.array([self.edges[b + 1] for b in bins])
            out.append(Cell(lower, upper, self.axes))
        return out


def build_histogram(t: int, s: int, axes: tuple[int, ...] | None = None) -> HistogramPartition:
    """Equal-width histogram partition of [0,1]^s with t bins per axis.

    Raises:
        CapacityError: if ``t < 1`` or ``t**s`` overflows the int64 grid index.
    """
    if t < 1:
        raise CapacityError(f"bins per axis must be >= 1, got {t}")
    if s < 0:
        raise CapacityError(f"number of axes must be >= 0, got {s}")
    if s > 0 and t > 1 and s * np.log(t) >= np.log(_INDEX_CAP):
        raise CapacityError(f"t**s = {t}**{s} overflows the grid index")
    if axes is None:
        axes = tuple(range(s))
    if len(axes) != s:
        raise CapacityError(f"expected {s} axes, got {len(axes)}")
    edges = np.linspace(0.0, 1.0, t + 1)
    return HistogramPartition(t=t, s=s, axes=tuple(int(a) for a in axes), edges=edges)


class TreePartition:
    """Binary-tree tiling of the unprotected axes.

    Nodes are stored in breadth-first order; leaves are numbered by their
    breadth-first position.  Split thresholds compare as ``x < thr -> left``,
    matching the package-wide boundary convention.
    """

    def __init__(self, depth: int, axes: tuple[int, ...]):
        self.depth = depth
        self.axes = tuple(int(a) for a in axes)
        m = len(self.axes)
        # node arrays, grown during construction
        self.node_axis: list[int] = [-1]
        self.node_threshold: list[float] = [np.nan]
        self.node_left: list[int] = [-1]
        self.node_right: list[int] = [-1]
        self.node_lower: list[np.ndarray] = [np.zeros(m)]
        self.node_upper: list[np.ndarray] = [np.ones(m)]
        self.leaf_id: np.ndarray = np.array([0], dtype=np.int64)
        self._axis_arr: np.ndarray | None = None

    # -- construction helpers -------------------------------------------------

    def _add_split(self, node: int, axis: int, threshold: float) -> tuple[int, int]:
        lo, hi = self.node_lower[node], self.node_upper[node]
        self.node_axis[node] = axis
        self.node_threshold[node] = threshold
        for side in (0, 1):
            child_lo, child_hi = lo.copy(), hi.copy()
            if side == 0:
                child_hi[axis] = threshold
            else:
                child_lo[axis] = threshold
            self.node_axis.append(-1)
            self.node_threshold.append(np.nan)
            self.node_left.append(-1)
            self.node_right.append(-1)
            self.node_lower.append(child_lo)
            self.node_upper.append(child_hi)
        left = len(self.node_axis) - 2
        self.node_left[node] = left
        self.node_right[node] = left + 1
        return left, left + 1

    def _finalize(self) -> "TreePartition":
        self._axis_arr = np.asarray(self.node_axis, dtype=np.int64)
        self._thr_arr = np.asarray(self.node_threshold, dtype=np.float64)
        self._left_arr = np.asarray(self.node_left, dtype=np.int64)
        self._right_arr = np.asarray(self.node_right, dtype=np.int64)
        leaf_nodes = [v for v in range(len(self.node_axis)) if self.node_left[v] < 0]
        self.leaf_nodes = np.asarray(leaf_nodes, dtype=np.int64)
        leaf_id = np.full(len(self.node_axis), -1, dtype=np.int64)
        leaf_id[self.leaf_nodes] = np.arange(len(leaf_nodes))
        self.leaf_id = leaf_id
        return self

    # -- queries ---------------------------------------------------------------

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.node_axis)

    def leaf_index(self, coords) -> np.ndarray:
        """Leaf id for each row of coordinates sliced to the tree axes."""
        coords = _as_matrix(coords)
        n = coords.shape[0]
        cur = np.zeros(n, dtype=np.int64)
        while True:
            internal = self._left_arr[cur] >= 0
            if not internal.any():
                break
            rows = np.flatnonzero(internal)
            nodes = cur[rows]
            go_left = coords[rows, self._axis_arr[nodes]] < self._thr_arr[nodes]
            cur[rows] = np.where(go_left, self._left_arr[nodes], self._right_arr[nodes])
        return self.leaf_id[cur]

    def potential_leaf_matrix(self, coords, mask) -> np.ndarray:
        """Boolean (n, n_leaves): leaves a row could occupy given its mask.

        A protected coordinate (mask 1) follows both children; an open one
        follows the side containing its value.
        """
        coords = _as_matrix(coords)
        mask = _as_matrix(mask).astype(bool)
        n = coords.shape[0]
        reach = np.zeros((n, self.n_nodes), dtype=bool)
        reach[:, 0] = True
        for v in range(self.n_nodes):
            if self._left_arr[v] < 0:
                continue
            rows = np.flatnonzero(reach[:, v])
            if rows.size == 0:
                continue
            ax = self._axis_arr[v]
            both = mask[rows, ax]
            go_left = coords[rows, ax] < self._thr_arr[v]
            reach[rows[both | go_left], self._left_arr[v]] = True
            reach[rows[both | ~go_left], self._right_arr[v]] = True
        return reach[:, self.leaf_nodes]

    def leaves(self) -> list[Cell]:
        return [
            Cell(self.node_lower[v].copy(), self.node_upper[v].copy(), self.axes)
            for v in self.leaf_nodes
        ]

    def to_nested(self, node: int = 0) -> dict:
        """Nested-node serialization of the tree."""
        if self._left_arr[node] < 0:
            return {"leaf": int(self.leaf_id[node])}
        return {
            "axis": int(self.axes[self._axis_arr[node]]),
            "threshold": float(self._thr_arr[node]),
            "left": self.to_nested(int(self._left_arr[node])),
            "right": self.to_nested(int(self._right_arr[node])),
        }

    @classmethod
    def from_nested(cls, nested: dict, depth: int, axes: tuple[int, ...]) -> "TreePartition":
        # breadth-first rebuild so node and leaf numbering match construction
        tree = cls(depth, axes)
        local = {a: k for k, a in enumerate(tree.axes)}
        queue: list[tuple[int, dict]] = [(0, nested)]
        while queue:
            node_id, spec = queue.pop(0)
            if "leaf" in spec:
                continue
            left, right = tree._add_split(node_id, local[spec["axis"]], spec["threshold"])
            queue.append((left, spec["left"]))
            queue.append((right, spec["right"]))
        return tree._finalize()


def _population_variance(values: np.ndarray) -> float:
    if values.size <= 1:
        return 0.0
    return float(np.var(values))


def max_edge_tree(
    x_pub,
    y_tilde,
    w_pub,
    p: int,
    axes: tuple[int, ...] | None = None,
    random_split: bool = False,
    rng: np.random.Generator | None = None,
) -> TreePartition:
    """Grow a depth-``p`` tree by halving longest edges at their midpoints.

    Each round splits every current cell.  Candidate axes are the cell's
    longest edges; among them the winner minimizes the summed label variance
    of the two children, computed only over samples whose mask is 0 on that
    axis.  Children inherit only the samples admissible on the chosen axis,
    so samples excluded there never re-enter deeper cells.  Ties (including
    cells with no admissible samples) go to the smallest axis index.

    With ``random_split`` the winner is drawn uniformly from the longest
    edges instead, which removes any dependence of the partition on the
    mask/label data.
    """
    x_pub = _as_matrix(x_pub)
    y_tilde = np.asarray(y_tilde, dtype=np.float64)
    n, m = x_pub.shape
    if w_pub is None:
        w_pub = np.zeros((n, m), dtype=np.int8)
    w_pub = _as_matrix(w_pub).astype(np.int8)
    if axes is None:
        axes = tuple(range(m))
    if m == 0:
        if p > 0:
            raise CapacityError("cannot split a tree with no axes")
        return TreePartition(0, axes)._finalize()
    if random_split and rng is None:
        rng = np.random.default_rng()

    tree = TreePartition(p, axes)
    frontier = [(0, np.arange(n))]
    for _ in range(p):
        nxt = []
        for node, members in frontier:
            lo, hi = tree.node_lower[node], tree.node_upper[node]
            widths = hi - lo
            longest = np.flatnonzero(widths == widths.max())
            if random_split:
                axis = int(rng.choice(longest))
            else:
                best = np.inf
                axis = int(longest[0])
                for ax in longest:
                    avail = members[w_pub[members, ax] == 0]
                    mid = (lo[ax] + hi[ax]) / 2.0
                    left = x_pub[avail, ax] < mid
                    crit = _population_variance(y_tilde[avail[left]]) + _population_variance(
                        y_tilde[avail[~left]]
                    )
                    if crit < best:
                        best = crit
                        axis = int(ax)
            mid = (lo[axis] + hi[axis]) / 2.0
            left_id, right_id = tree._add_split(node, axis, mid)
            avail = members[w_pub[members, axis] == 0]
            goes_left = x_pub[avail, axis] < mid
            nxt.append((left_id, avail[goes_left]))
            nxt.append((right_id, avail[~goes_left]))
        frontier = nxt
    return tree._finalize()


def _best_threshold(coords: np.ndarray, labels: np.ndarray, min_leaf: int, center: float):
    """Best split of a sorted-by-coordinate sample under weighted SSE.

    Returns (sse, threshold) or None when no threshold leaves ``min_leaf``
    samples on both sides.  Candidate thresholds are midpoints of gaps
    between consecutive distinct coordinates; SSE ties prefer the threshold
    closest to ``center``, then the smaller one.
    """
    m = coords.size
    if m < 2 * min_leaf:
        return None
    order = np.argsort(coords, kind="stable")
    cs = coords[order]
    ys = labels[order]
    # split after position i (1-based count on the left)
    counts = np.arange(1, m, dtype=np.float64)
    csum = np.cumsum(ys)[:-1]
    csum2 = np.cumsum(ys**2)[:-1]
    total, total2 = csum[-1] + ys[-1], csum2[-1] + ys[-1] ** 2
    sse_left = csum2 - csum**2 / counts
    right_counts = m - counts
    sse_right = (total2 - csum2) - (total - csum) ** 2 / right_counts
    sse = sse_left + sse_right
    feasible = (counts >= min_leaf) & (right_counts >= min_leaf) & (cs[1:] > cs[:-1])
    if not feasible.any():
        return None
    idx = np.flatnonzero(feasible)
    thresholds = (cs[idx] + cs[idx + 1]) / 2.0
    best = np.min(sse[idx])
    tied = np.abs(sse[idx] - best) == 0.0
    cand = thresholds[tied]
    pick = cand[np.lexsort((cand, np.abs(cand - center)))][0]
    return float(best), float(pick)


def cart_tree(
    x_pub,
    y_tilde,
    w_pub,
    p: int,
    min_leaf: int = 1,
    axes: tuple[int, ...] | None = None,
    stop_when_pure: bool = False,
) -> TreePartition:
    """Depth-``p`` tree with data-driven thresholds (weighted SSE criterion).

    All axes of a cell are candidates; per axis only samples with mask 0 are
    consulted, and children inherit the admissible samples of the winning
    axis, as in ``max_edge_tree``.  A cell becomes a leaf when no axis
    offers a threshold leaving ``min_leaf`` admissible samples on each side
    (or, with ``stop_when_pure``, when its labels are constant).  When every
    feasible split is equally good the smallest axis wins and the threshold
    nearest the cell's midpoint is used.
    """
    x_pub = _as_matrix(x_pub)
    y_tilde = np.asarray(y_tilde, dtype=np.float64)
    n, m = x_pub.shape
    if w_pub is None:
        w_pub = np.zeros((n, m), dtype=np.int8)
    w_pub = _as_matrix(w_pub).astype(np.int8)
    if min_leaf < 1:
        raise ValueError(f"min_leaf must be >= 1, got {min_leaf}")
    if axes is None:
        axes = tuple(range(m))
    if m == 0:
        return TreePartition(0, axes)._finalize()

    tree = TreePartition(p, axes)
    frontier = [(0, np.arange(n))]
    for _ in range(p):
        nxt = []
        for node, members in frontier:
            if members.size == 0:
                continue
            ym = y_tilde[members]
            if stop_when_pure and ym.size > 0 and ym.max() == ym.min():
                continue
            lo, hi = tree.node_lower[node], tree.node_upper[node]
            best = None
            for ax in range(m):
                avail = members[w_pub[members, ax] == 0]
                found = _best_threshold(
                    x_pub[avail, ax], y_tilde[avail], min_leaf, (lo[ax] + hi[ax]) / 2.0
                )
                if found is not None and (best is None or found[0] < best[0]):
                    best = (found[0], ax, found[1])
            if best is None:
                continue
            _, axis, thr = best
            left_id, right_id = tree._add_split(node, axis, thr)
            avail = members[w_pub[members, axis] == 0]
            goes_left = x_pub[avail, axis] < thr
            nxt.append((left_id, avail[goes_left]))
            nxt.append((right_id, avail[~goes_left]))
        frontier = nxt
    return tree._finalize()


@dataclass(frozen=True)
class ProductPartition:
    """Histogram on the protected axes crossed with a tree on the rest.

    The flat grid id of (histogram cell h, tree leaf l) is
    ``h * n_leaves + l``; ids therefore run over ``range(grid_count)`` in
    (cell, leaf)-lexicographic order.
    """

    hist: HistogramPartition
    tree: TreePartition
    d: int

    def __post_init__(self):
        overlap = set(self.hist.axes) & set(self.tree.axes)
        if overlap:
            raise ConfigError(f"axes assigned to both factors: {sorted(overlap)}")
        union = set(self.hist.axes) | set(self.tree.axes)
        if union != set(range(self.d)):
            raise ConfigError(f"axes {sorted(union)} do not cover all {self.d} features")

    @property
    def private_axes(self) -> tuple[int, ...]:
        return self.hist.axes

    @property
    def public_axes(self) -> tuple[int, ...]:
        return self.tree.axes

    @property
    def grid_count(self) -> int:
        return self.hist.n_cells * self.tree.n_leaves

    def grid_indices(self, x) -> np.ndarray:
        x = _as_matrix(x)
        if self.hist.s:
            h = self.hist.cell_index(x[:, list(self.hist.axes)])
        else:
            h = np.zeros(x.shape[0], dtype=np.int64)
        leaf = self.tree.leaf_index(x[:, list(self.tree.axes)])
        return h * self.tree.n_leaves + leaf

    def grid_index(self, x) -> int:
        return int(self.grid_indices(np.asarray(x).reshape(1, -1))[0])

    def potential_hist_cells(self, x, w) -> np.ndarray:
        """Sorted histogram cell ids compatible with the open coordinates."""
        if self.hist.s == 0:
            return np.zeros(1, dtype=np.int64)
        x = np.asarray(x, dtype=np.float64)
        w = np.asarray(w)
        choices = []
        for k, ax in enumerate(self.hist.axes):
            if w[ax]:
                choices.append(np.arange(self.hist.t, dtype=np.int64))
            else:
                choices.append(self.hist.bin_of(np.array([[x[ax]]]))[0])
        flat = np.zeros(1, dtype=np.int64)
        for k, c in enumerate(choices):
            stride = self.hist.t ** (self.hist.s - 1 - k)
            flat = (flat[:, None] + c[None, :] * stride).ravel()
        return flat

    def potential_grids(self, x, w) -> np.ndarray:
        """Sorted flat grid ids the point could occupy given its mask row.

        A grid qualifies iff its projection on every open axis (mask 0)
        contains the point's coordinate; the point's own grid always does.
        """
        x = np.asarray(x, dtype=np.float64)
        w = np.asarray(w)
        h = self.potential_hist_cells(x, w)
        reach = self.tree.potential_leaf_matrix(
            x[list(self.tree.axes)].reshape(1, -1),
            w[list(self.tree.axes)].reshape(1, -1),
        )[0]
        leaves = np.flatnonzero(reach).astype(np.int64)
        return (h[:, None] * self.tree.n_leaves + leaves[None, :]).ravel()

    def cell(self, j: int) -> Cell:
        """Geometric cell of a flat grid id, spanning all d axes."""
        h, l = divmod(int(j), self.tree.n_leaves)
        hist_cell = self.hist.cells()[h]
        leaf = self.tree.leaves()[l]
        lower = np.concatenate([hist_cell.lower, leaf.lower])
        upper = np.concatenate([hist_cell.upper, leaf.upper])
        return Cell(lower, upper, hist_cell.axes + leaf.axes)

    def cells(self) -> list[Cell]:
        hist_cells = self.hist.cells()
        leaves = self.tree.leaves()
        return [
            Cell(
                np.concatenate([hc.lower, lf.lower]),
                np.concatenate([hc.upper, lf.upper]),
                hc.axes + lf.axes,
            )
            for hc in hist_cells
            for lf in leaves
        ]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "hist": {"t": self.hist.t, "axes": list(self.hist.axes)},
            "tree": {
                "depth": self.tree.depth,
                "axes": list(self.tree.axes),
                "root": self.tree.to_nested(),
            },
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "ProductPartition":
        hist = build_histogram(spec["hist"]["t"], len(spec["hist"]["axes"]), tuple(spec["hist"]["axes"]))
        tree = TreePartition.from_nested(
            spec["tree"]["root"], spec["tree"]["depth"], tuple(spec["tree"]["axes"])
        )
        return cls(hist=hist, tree=tree, d=spec["d"])


def grid_index(pp: ProductPartition, x) -> int:
    """Flat grid id containing ``x`` (see ProductPartition.grid_index)."""
    return pp.grid_index(x)


def potential_grids(pp: ProductPartition, x, w) -> np.ndarray:
    """Sorted grid ids consistent with the open coordinates of ``x``."""
    return pp.potential_grids(x, w)
