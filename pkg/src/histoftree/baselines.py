"""The comparison methods of the benchmark and the regression CART they share.

Budget decompositions are part of each method's contract:

* label-only trees spend the whole budget on one Laplace label channel with
  noise scale ``label_range / eps``;
* the k-ary obfuscation approach splits the budget evenly over the user's
  protected coordinates plus the label channel,
  ``eps / (row private count + 1)`` each;
* the private histogram spends ``eps / 2`` on the cell-indicator channel
  and ``eps / 2`` on the label-times-indicator channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DataError, DomainError
from .partition import HistogramPartition, TreePartition, build_histogram, cart_tree

_MAX_HIST_CELLS = 5_000_000


@dataclass
class CartModel:
    """Greedy variance-reduction regression tree with leaf-mean predictions."""

    tree: TreePartition
    leaf_values: np.ndarray
    max_depth: int
    min_samples_leaf: int
    feature_axes: tuple[int, ...]

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        pts = x.reshape(1, -1) if squeeze else x
        leaves = self.tree.leaf_index(pts[:, list(self.feature_axes)])
        out = self.leaf_values[leaves]
        return float(out[0]) if squeeze else out


def fit_cart(X, Y, max_depth: int, min_samples_leaf: int = 1) -> CartModel:
    """Plain regression CART on raw data.

    Splits minimize the summed child squared error over exhaustive
    thresholds (gap midpoints between consecutive distinct coordinates);
    pure nodes and nodes that cannot leave ``min_samples_leaf`` samples on
    both sides stop splitting.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] == 0:
        raise DataError("cannot fit a tree on zero samples")
    tree = cart_tree(X, Y, None, max_depth, min_leaf=min_samples_leaf, stop_when_pure=True)
    leaves = tree.leaf_index(X)
    counts = np.bincount(leaves, minlength=tree.n_leaves)
    sums = np.bincount(leaves, weights=Y, minlength=tree.n_leaves)
    values = np.where(counts > 0, sums / np.maximum(counts, 1), Y.mean())
    return CartModel(
        tree=tree,
        leaf_values=values,
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
        feature_axes=tuple(range(X.shape[1])),
    )


def fit_label_dt(
    X,
    Y,
    eps: float,
    label_range: float,
    max_depth: int,
    min_samples_leaf: int,
    rng: np.random.Generator,
) -> CartModel:
    """Label-privatized tree: Laplace noise of scale ``label_range / eps`` on
    the labels, then a plain CART on all features."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    Y = np.asarray(Y, dtype=np.float64)
    y_tilde = Y + rng.laplace(size=Y.shape) * (label_range / eps)
    return fit_cart(X, y_tilde, max_depth, min_samples_leaf)


def fit_par_dt(
    X,
    Y,
    public_axes,
    eps: float,
    label_range: float,
    max_depth: int,
    min_samples_leaf: int,
    rng: np.random.Generator,
) -> CartModel:
    """Like ``fit_label_dt`` but restricted to the given open feature columns.

    With no usable columns the tree degenerates to the noisy label mean.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    public_axes = tuple(int(a) for a in public_axes)
    y_tilde = Y + rng.laplace(size=Y.shape) * (label_range / eps)
    if not public_axes:
        tree = cart_tree(np.zeros((X.shape[0], 0)), y_tilde, None, 0)
        return CartModel(tree, np.array([y_tilde.mean()]), max_depth, min_samples_leaf, ())
    model = fit_cart(X[:, list(public_axes)], y_tilde, max_depth, min_samples_leaf)
    model.feature_axes = public_axes
    return model


def krr_channel_budget(eps: float, n_private: int) -> float:
    """Even per-channel share for a user protecting ``n_private`` coordinates."""
    return eps / (n_private + 1)


def fit_krr(
    X,
    Y,
    W,
    eps: float,
    k: int,
    label_range: float,
    max_depth: int,
    min_samples_leaf: int,
    rng: np.random.Generator,
) -> CartModel:
    """Obfuscation baseline: randomize the protected coordinates themselves.

    Each protected coordinate is snapped to one of ``k`` equal bins, the bin
    id passes through k-ary randomized response at that user's per-channel
    budget, and the released bin maps back to its center.  The label takes
    its share through Laplace noise.  A plain CART is fit on the perturbed
    matrix.
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    X = np.asarray(X, dtype=np.float64).copy()
    Y = np.asarray(Y, dtype=np.float64)
    W = np.asarray(getattr(W, "w", W), dtype=np.int8)
    n, d = X.shape
    shares = krr_channel_budget(eps, W.sum(axis=1))
    y_tilde = Y + rng.laplace(size=n) * (label_range / shares)
    for col in range(d):
        rows = np.flatnonzero(W[:, col])
        if rows.size == 0:
            continue
        u = rng.random(rows.size)
        bins = np.clip((X[rows, col] * k).astype(np.int64), 0, k - 1)
        # stable keep probability: 1 / (1 + (k-1) exp(-eps_c/2))
        p_true = 1.0 / (1.0 + (k - 1) * np.exp(-shares[rows] / 2.0))
        chosen = bins.copy()
        flip = u >= p_true
        if flip.any():
            frac = (u[flip] - p_true[flip]) / (1.0 - p_true[flip])
            alt = np.minimum((frac * (k - 1)).astype(np.int64), k - 2)
            chosen[flip] = alt + (alt >= bins[flip])
        X[rows, col] = (chosen + 0.5) / k
    return fit_cart(X, y_tilde, max_depth, min_samples_leaf)


@dataclass
class PrivateHistModel:
    """All-axes private histogram with truncation of low-mass cells.

    Cell predictions are the ratio of the privatized joint channel to the
    privatized marginal channel; cells whose marginal estimate falls below
    the truncation threshold predict exactly 0.
    """

    hist: HistogramPartition
    cell_values: np.ndarray
    truncated: np.ndarray
    zeta: float
    eps_marginal: float
    eps_joint: float

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        pts = x.reshape(1, -1) if squeeze else x
        out = self.cell_values[self.hist.cell_index(pts)]
        return float(out[0]) if squeeze else out


def fit_private_histogram(
    X,
    Y,
    eps: float,
    t: int,
    zeta: float,
    m_bound: float,
    rng: np.random.Generator,
) -> PrivateHistModel:
    """Every-feature-private histogram estimator.

    Each user releases their Laplace-noised one-hot cell indicator (scale
    ``4 / eps``, half the budget) and the noised label-times-indicator
    vector (scale ``4 * m_bound / eps``, the other half).  Per cell the
    mean estimate is noisy-joint over noisy-marginal, truncated to 0 when
    the marginal mass estimate is below ``zeta``.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if zeta <= 0:
        raise ValueError(f"zeta must be positive, got {zeta}")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if np.any(np.abs(Y) > m_bound):
        raise DomainError(f"labels outside promised range [-{m_bound}, {m_bound}]")
    n, d = X.shape
    hist = build_histogram(t, d)
    cells = hist.n_cells
    if cells > _MAX_HIST_CELLS:
        raise CapacityError(f"{t}**{d} cells exceeds the supported histogram size")
    idx = hist.cell_index(X)
    counts = np.bincount(idx, minlength=cells).astype(np.float64)
    ysums = np.bincount(idx, weights=Y, minlength=cells)

    eps_marginal = eps / 2.0
    eps_joint = eps / 2.0
    scale_marginal = 2.0 / eps_marginal
    scale_joint = 2.0 * m_bound / eps_joint
    noise_marginal = np.zeros(cells)
    noise_joint = np.zeros(cells)
    chunk = max(1, 4_000_000 // cells)
    for start in range(0, n, chunk):
        rows = min(chunk, n - start)
        noise_marginal += rng.laplace(size=(rows, cells)).sum(axis=0) * scale_marginal
    for start in range(0, n, chunk):
        rows = min(chunk, n - start)
        noise_joint += rng.laplace(size=(rows, cells)).sum(axis=0) * scale_joint

    marginal = (counts + noise_marginal) / n
    joint = (ysums + noise_joint) / n
    truncated = marginal < zeta
    values = np.zeros(cells)
    values[~truncated] = joint[~truncated] / marginal[~truncated]
    return PrivateHistModel(
        hist=hist,
        cell_values=values,
        truncated=truncated,
        zeta=zeta,
        eps_marginal=eps_marginal,
        eps_joint=eps_joint,
    )
