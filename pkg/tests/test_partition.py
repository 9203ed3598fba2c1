import numpy as np
import pytest

from histoftree.errors import CapacityError
from histoftree.partition import (
    ProductPartition,
    build_histogram,
    cart_tree,
    grid_index,
    max_edge_tree,
    potential_grids,
)


def make_pp(x, y, w, t, s, p, d, rule="max_edge", min_leaf=1):
    priv = tuple(range(s))
    pub = tuple(range(s, d))
    x_pub = x[:, s:]
    w_pub = None if w is None else w[:, s:]
    if rule == "max_edge":
        tree = max_edge_tree(x_pub, y, w_pub, p, axes=pub)
    else:
        tree = cart_tree(x_pub, y, w_pub, p, min_leaf=min_leaf, axes=pub)
    return ProductPartition(hist=build_histogram(t, s, priv), tree=tree, d=d)


def brute_force_potential(pp, x, w):
    """Independent oracle: scan every cell's projection on the open axes."""
    out = []
    for j, cell in enumerate(pp.cells()):
        ok = True
        for k, ax in enumerate(cell.axes):
            if w[ax]:
                continue
            v = x[ax]
            inside = cell.lower[k] <= v < cell.upper[k] or (cell.upper[k] == 1.0 and v == 1.0)
            if not inside:
                ok = False
                break
        if ok:
            out.append(j)
    return np.asarray(out, dtype=np.int64)


class TestHistogram:
    def test_single_bin_is_unit_cube(self):
        hist = build_histogram(1, 3)
        cells = hist.cells()
        assert len(cells) == 1
        assert np.array_equal(cells[0].lower, np.zeros(3))
        assert np.array_equal(cells[0].upper, np.ones(3))

    def test_two_bins_tile_at_midpoint(self):
        hist = build_histogram(2, 1)
        cells = hist.cells()
        assert [(c.lower[0], c.upper[0]) for c in cells] == [(0.0, 0.5), (0.5, 1.0)]

    def test_three_by_three_enumeration(self):
        # oracle: enumerate bin-index pairs directly
        hist = build_histogram(3, 2)
        cells = hist.cells()
        assert len(cells) == 9
        expected = [(i, j) for i in range(3) for j in range(3)]
        for cell, (i, j) in zip(cells, expected):
            assert np.allclose(cell.lower, [i / 3, j / 3])
            assert np.allclose(cell.widths, 1 / 3)

    def test_lexicographic_index(self):
        hist = build_histogram(3, 2)
        for i in range(3):
            for j in range(3):
                center = np.array([[(i + 0.5) / 3, (j + 0.5) / 3]])
                assert hist.cell_index(center)[0] == 3 * i + j

    def test_capacity_errors(self):
        with pytest.raises(CapacityError):
            build_histogram(0, 2)
        with pytest.raises(CapacityError):
            build_histogram(2, 70)

    def test_boundary_half_open_with_closed_top(self):
        hist = build_histogram(2, 1)
        assert hist.bin_of(np.array([[0.5]]))[0, 0] == 1
        assert hist.bin_of(np.array([[1.0]]))[0, 0] == 1
        assert hist.bin_of(np.array([[0.0]]))[0, 0] == 0


FOUR_POINTS = np.array([[0.1, 0.5], [0.4, 0.5], [0.6, 0.5], [0.9, 0.5]])
FOUR_LABELS = np.array([0.0, 0.0, 1.0, 1.0])


class TestMaxEdgeTree:
    def test_zero_depth_single_leaf(self):
        tree = max_edge_tree(np.random.rand(10, 3), np.random.rand(10), None, 0)
        assert tree.n_leaves == 1
        assert np.allclose(tree.leaves()[0].widths, 1.0)

    def test_variance_picks_separating_axis(self):
        # axis 0 split gives child variances 0 + 0; axis 1 leaves the mixed
        # labels on one side for variance 0.25
        tree = max_edge_tree(FOUR_POINTS, FOUR_LABELS, None, 1)
        assert tree.axes[tree._axis_arr[0]] == 0
        assert tree._thr_arr[0] == 0.5

    def test_full_rounds_make_cubes(self):
        rng = np.random.default_rng(0)
        x = rng.random((200, 3))
        tree = max_edge_tree(x, rng.random(200), None, 6)
        for leaf in tree.leaves():
            assert np.all(leaf.widths == 0.25)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        x, y = rng.random((100, 3)), rng.random(100)
        w = (rng.random((100, 3)) < 0.3).astype(np.int8)
        t1 = max_edge_tree(x, y, w, 4)
        t2 = max_edge_tree(x, y, w, 4)
        assert t1.to_nested() == t2.to_nested()

    def test_monotone_refinement(self):
        # the deeper tree replays the shallow tree's splits and only refines
        # its leaves
        rng = np.random.default_rng(2)
        x, y = rng.random((150, 2)), rng.random(150)
        shallow = max_edge_tree(x, y, None, 3)
        deep = max_edge_tree(x, y, None, 4)
        n_internal = 2**3 - 1
        assert np.array_equal(shallow._axis_arr[:n_internal], deep._axis_arr[:n_internal])
        assert np.array_equal(shallow._thr_arr[:n_internal], deep._thr_arr[:n_internal])

    def test_random_split_mode_is_seeded_and_dyadic(self):
        rng = np.random.default_rng(3)
        x, y = rng.random((50, 3)), rng.random(50)
        a = max_edge_tree(x, y, None, 4, random_split=True, rng=np.random.default_rng(9))
        b = max_edge_tree(x, y, None, 4, random_split=True, rng=np.random.default_rng(9))
        assert a.to_nested() == b.to_nested()
        for leaf in a.leaves():
            for width in leaf.widths:
                assert width == 2.0 ** round(np.log2(width))

    @pytest.mark.parametrize("m,p", [(2, 3), (3, 5), (2, 6)])
    def test_leaf_width_bounds(self, m, p):
        # widths stay within one halving of the balanced side length
        rng = np.random.default_rng(p)
        x, y = rng.random((300, m)), rng.random(300)
        w = (rng.random((300, m)) < 0.4).astype(np.int8)
        tree = max_edge_tree(x, y, w, p)
        lo = 2.0 ** -np.ceil(p / m)
        hi = 2.0 ** -np.floor(p / m)
        for leaf in tree.leaves():
            assert np.all(leaf.widths >= lo - 1e-12)
            assert np.all(leaf.widths <= hi + 1e-12)
            diam = leaf.diameter()
            assert np.sqrt(m) * 2 ** (-p / m) / 2 - 1e-9 <= diam <= 2 * np.sqrt(m) * 2 ** (-p / m) + 1e-9


class TestCartTree:
    def test_zero_depth(self):
        tree = cart_tree(np.random.rand(10, 2), np.random.rand(10), None, 0)
        assert tree.n_leaves == 1

    def test_gap_midpoint_threshold(self):
        tree = cart_tree(FOUR_POINTS, FOUR_LABELS, None, 1, min_leaf=1)
        assert tree.axes[tree._axis_arr[0]] == 0
        assert tree._thr_arr[0] == 0.5

    def test_min_leaf_n_gives_root_only(self):
        tree = cart_tree(FOUR_POINTS, FOUR_LABELS, None, 3, min_leaf=4)
        assert tree.n_leaves == 1

    def test_constant_labels_tie_break_lowest_axis_midpoint(self):
        # symmetric coordinates so the center-most gap midpoint is the
        # geometric midpoint exactly
        pts = np.array([[a, b] for a in (0.25, 0.75) for b in (0.25, 0.75)])
        labels = np.ones(4)
        tree = cart_tree(pts, labels, None, 1, min_leaf=1)
        assert tree.axes[tree._axis_arr[0]] == 0
        assert tree._thr_arr[0] == 0.5

    def test_mask_excludes_samples_from_axis(self):
        # every sample is protected on axis 0, so the split must use axis 1
        x = np.array([[0.1, 0.2], [0.9, 0.8], [0.2, 0.3], [0.8, 0.7]])
        y = np.array([0.0, 1.0, 0.0, 1.0])
        w = np.zeros((4, 2), dtype=np.int8)
        w[:, 0] = 1
        tree = cart_tree(x, y, w, 1, min_leaf=1)
        assert tree.axes[tree._axis_arr[0]] == 1


class TestProductPartition:
    def test_grid_index_boundary_examples(self):
        rng = np.random.default_rng(4)
        x, y = rng.random((20, 2)), rng.random(20)
        pp = make_pp(x, y, None, t=2, s=1, p=0, d=2)
        assert grid_index(pp, np.array([0.5, 0.3])) == 1
        pp2 = make_pp(FOUR_POINTS[:, :1], FOUR_LABELS, None, t=1, s=0, p=1, d=1)
        assert grid_index(pp2, np.array([0.49])) == 0

    def test_cell_center_round_trip(self):
        rng = np.random.default_rng(5)
        x, y = rng.random((100, 4)), rng.random(100)
        pp = make_pp(x, y, None, t=3, s=2, p=3, d=4)
        for j, cell in enumerate(pp.cells()):
            center = np.zeros(4)
            for k, ax in enumerate(cell.axes):
                center[ax] = (cell.lower[k] + cell.upper[k]) / 2
            assert pp.grid_index(center) == j

    def test_exactly_one_grid_contains_each_point(self):
        rng = np.random.default_rng(6)
        x, y = rng.random((200, 3)), rng.random(200)
        pp = make_pp(x, y, None, t=2, s=1, p=4, d=3)
        cells = pp.cells()
        pts = rng.random((10_000, 3))
        hits = np.zeros(len(pts), dtype=int)
        owner = np.full(len(pts), -1)
        for j, cell in enumerate(cells):
            inside = np.ones(len(pts), dtype=bool)
            for k, ax in enumerate(cell.axes):
                v = pts[:, ax]
                inside &= (v >= cell.lower[k]) & (
                    (v < cell.upper[k]) | ((cell.upper[k] == 1.0) & (v == 1.0))
                )
            hits += inside
            owner[inside] = j
        assert np.all(hits == 1)
        assert np.array_equal(owner, pp.grid_indices(pts))

    def test_potential_grids_pinned_and_free(self):
        rng = np.random.default_rng(7)
        x, y = rng.random((50, 3)), rng.random(50)
        pp = make_pp(x, y, None, t=2, s=1, p=2, d=3)
        point = rng.random(3)
        assert np.array_equal(
            potential_grids(pp, point, np.zeros(3, dtype=int)),
            [pp.grid_index(point)],
        )
        assert np.array_equal(
            potential_grids(pp, point, np.ones(3, dtype=int)),
            np.arange(pp.grid_count),
        )

    def test_potential_grids_match_brute_force(self):
        rng = np.random.default_rng(8)
        for trial in range(25):
            d = int(rng.integers(2, 5))
            s = int(rng.integers(0, d))
            t = int(rng.integers(1, 4))
            p = int(rng.integers(0, 5))
            n = 60
            x, y = rng.random((n, d)), rng.random(n)
            w_data = (rng.random((n, d)) < 0.5).astype(np.int8)
            pp = make_pp(x, y, w_data, t=t, s=s, p=p, d=d)
            point = rng.random(d)
            w = (rng.random(d) < 0.5).astype(np.int8)
            got = potential_grids(pp, point, w)
            want = brute_force_potential(pp, point, w)
            assert np.array_equal(got, want)
            assert pp.grid_index(point) in got

    def test_potential_cardinality_bound(self):
        # protected tree axes at most double the reachable leaves per split
        rng = np.random.default_rng(9)
        for trial in range(40):
            d = int(rng.integers(2, 6))
            s = int(rng.integers(0, d))
            t = int(rng.integers(1, 4))
            p = int(rng.integers(0, 6))
            n = 80
            x, y = rng.random((n, d)), rng.random(n)
            pp = make_pp(x, y, None, t=t, s=s, p=p, d=d)
            w = (rng.random(d) < 0.5).astype(np.int8)
            tail_private = int(w[s:].sum())
            bound = t**s * 2 ** (p - (p // (d - s)) * (d - s - tail_private))
            assert len(potential_grids(pp, rng.random(d), w)) <= bound

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(10)
        x, y = rng.random((80, 3)), rng.random(80)
        pp = make_pp(x, y, None, t=2, s=1, p=3, d=3, rule="cart")
        clone = ProductPartition.from_dict(pp.to_dict())
        pts = rng.random((500, 3))
        assert np.array_equal(pp.grid_indices(pts), clone.grid_indices(pts))
        assert clone.grid_count == pp.grid_count
