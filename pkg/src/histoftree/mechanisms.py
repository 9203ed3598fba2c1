"""Local privatization primitives and a likelihood-ratio auditor.

Budget convention.  Each primitive takes the budget parameter exactly as it
appears in its release formula, and the worst-case likelihood ratio of the
channel it implements is then ``exp(eps / 2)``:

* ``laplace_label(eps)`` adds noise of scale ``4 * M / eps``; over labels in
  [-M, M] the density ratio is at most ``exp(eps * 2M / 4M) = exp(eps / 2)``.
* ``rr_indicator(eps)`` flips with probability ``1 / (1 + exp(eps / 4))``;
  two indicator bits can differ between neighbouring inputs, so the channel
  ratio is at most ``exp(eps / 4) ** 2 = exp(eps / 2)``.
* ``generalized_rr(eps)`` keeps the truth with odds ``exp(eps / 2)`` over
  each alternative.

A composed release that spends a fraction ``rho`` of the total budget
``epsilon`` on the label channel therefore passes ``2 * rho * epsilon`` to
the label primitive and ``2 * (1 - rho) * epsilon`` to the indicator
primitive, for a combined ratio of ``exp(rho * epsilon) *
exp((1 - rho) * epsilon) = exp(epsilon)``.  At the default ``rho = 0.5``
both parameters equal ``epsilon``.

Draw order is part of the contract: a record consumes one Laplace variate
for the label, then its indicator uniforms (one per support grid for the
paired mechanism, a single one for the generalized mechanism).  The batch
functions draw the whole label vector first and then one block of indicator
uniforms, user-major, which makes the aligned and personalized paths
bit-identical whenever the preference rows are aligned.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, UnsupportedMechanismError
from .partition import ProductPartition

PAIRED = "paired"
GENERALIZED = "generalized"


@dataclass(frozen=True)
class PrivacyBudget:
    """Total per-user budget and its split across the two channels.

    The label channel satisfies ``(rho * epsilon)``-LDP and the indicator
    channel ``((1 - rho) * epsilon)``-LDP w.r.t. the protected coordinates,
    so the composed release stays within ``epsilon``.
    """

    epsilon: float
    rho: float = 0.5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")

    @property
    def label_param(self) -> float:
        """Parameter handed to ``laplace_label`` (ratio exp(rho * epsilon))."""
        return 2.0 * self.rho * self.epsilon

    @property
    def indicator_param(self) -> float:
        """Parameter handed to the indicator mechanism."""
        return 2.0 * (1.0 - self.rho) * self.epsilon


@dataclass(frozen=True)
class MaskMatrix:
    """Per-user, per-feature privacy preferences; 1 marks a protected feature."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w)
        if w.ndim != 2:
            raise ValueError("mask must be an n x d matrix")
        if not np.isin(w, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "w", w.astype(np.int8))

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def d(self) -> int:
        return self.w.shape[1]

    @property
    def row_private_counts(self) -> np.ndarray:
        return self.w.sum(axis=1)

    @property
    def column_sums(self) -> np.ndarray:
        return self.w.sum(axis=0)

    def is_aligned(self) -> bool:
        return bool((self.w == self.w[0]).all()) if self.n else True


@dataclass
class PrivatizedRecord:
    """One user's released view: noisy label plus a sparse indicator vector.

    ``grid_indices`` is the sorted support (the user's potential grids);
    ``grid_values`` the debiased indicator estimates on it.  Everything off
    the support is an implicit zero.
    """

    y_tilde: float
    grid_indices: np.ndarray
    grid_values: np.ndarray
    mechanism: str
    expectation: bool = False

    def as_dict(self) -> dict[int, float]:
        return {int(j): float(v) for j, v in zip(self.grid_indices, self.grid_values)}


@dataclass
class PrivatizedBatch:
    """Column-compressed stack of privatized records (one segment per user)."""

    y_tilde: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    mechanism: str
    expectation: bool = False

    @property
    def n(self) -> int:
        return len(self.y_tilde)

    def record(self, i: int) -> PrivatizedRecord:
        sl = slice(self.indptr[i], self.indptr[i + 1])
        return PrivatizedRecord(
            float(self.y_tilde[i]),
            self.indices[sl].copy(),
            self.values[sl].copy(),
            self.mechanism,
            self.expectation,
        )


def records_to_batch(records: list[PrivatizedRecord]) -> PrivatizedBatch:
    counts = np.array([len(r.grid_indices) for r in records], dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return PrivatizedBatch(
        y_tilde=np.array([r.y_tilde for r in records], dtype=np.float64),
        indptr=indptr,
        indices=np.concatenate([r.grid_indices for r in records]) if records else np.zeros(0, np.int64),
        values=np.concatenate([r.grid_values for r in records]) if records else np.zeros(0),
        mechanism=records[0].mechanism if records else PAIRED,
        expectation=records[0].expectation if records else False,
    )


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def laplace_scale(m_bound: float, eps: float) -> float:
    """Noise scale of the label channel, ``4 * M / eps``."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return 4.0 * m_bound / eps


def laplace_label(y, m_bound: float, eps: float, rng: np.random.Generator):
    """Unbiased noisy label ``y + (4M / eps) * xi`` with standard Laplace xi.

    Raises DomainError when ``|y| > m_bound``; privacy accounting assumes
    the promised range, so callers clip beforehand rather than here.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(np.abs(y) > m_bound):
        raise DomainError(f"label outside promised range [-{m_bound}, {m_bound}]")
    scale = laplace_scale(m_bound, eps)
    noisy = y + scale * rng.laplace(size=y.shape)
    return float(noisy) if noisy.ndim == 0 else noisy


def _paired_constants(eps: float) -> tuple[float, float, float]:
    """(keep probability, flip offset q, debias factor C) of the paired RR."""
    e = math.exp(eps / 4.0)
    return e / (1.0 + e), 1.0 / (1.0 + e), (e + 1.0) / (e - 1.0)


def rr_indicator(bit: int, eps: float, rng: np.random.Generator) -> float:
    """Debiased randomized response for one indicator bit.

    Emits ``C * (bit - q)`` with probability ``exp(eps/4) / (1 + exp(eps/4))``
    and ``C * ((1 - bit) - q)`` otherwise, so the expectation equals ``bit``.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    keep, q, c = _paired_constants(eps)
    reported = bit if rng.random() < keep else 1 - bit
    return c * (reported - q)


def _paired_values(bits: np.ndarray, eps: float, uniforms: np.ndarray) -> np.ndarray:
    keep, q, c = _paired_constants(eps)
    reported = np.where(uniforms < keep, bits, 1.0 - bits)
    return c * (reported - q)


def generalized_rr(
    true_index: int, support, eps: float, rng: np.random.Generator
) -> dict[int, float]:
    """Debiased one-draw randomized response over an index set.

    One index is sampled, the truth with probability
    ``exp(eps/2) / (exp(eps/2) + |V| - 1)`` and every other element of the
    support uniformly; the emitted sparse vector has expectation equal to
    the one-hot encoding of ``true_index``.
    """
    support = np.asarray(support, dtype=np.int64)
    pos = np.flatnonzero(support == true_index)
    if pos.size != 1:
        raise DomainError(f"true index {true_index} not in the support")
    m = support.size
    chosen_pos, value_off, value_on = _generalized_draw(
        int(pos[0]), m, eps, float(rng.random())
    )
    out = {int(j): value_off for j in support}
    out[int(support[chosen_pos])] = value_off + value_on
    return out


def _generalized_draw(true_pos: int, m: int, eps: float, u: float):
    e2 = math.exp(eps / 2.0)
    denom = e2 + m - 1.0
    p_true = e2 / denom
    if u < p_true or m == 1:
        chosen = true_pos
    else:
        k = min(int((u - p_true) * denom), m - 2)
        chosen = k + (1 if k >= true_pos else 0)
    c = denom / (e2 - 1.0)
    return chosen, -1.0 / (e2 - 1.0), c


# ---------------------------------------------------------------------------
# composed per-record mechanisms
# ---------------------------------------------------------------------------


def _indicator_values(bits, true_pos, eps, rng, mechanism, expectation):
    """Shared value computation for a single record's support."""
    m = bits.size
    if expectation:
        return bits.astype(np.float64)
    if mechanism == PAIRED:
        return _paired_values(bits, eps, rng.random(m))
    if mechanism == GENERALIZED:
        chosen, off, on = _generalized_draw(true_pos, m, eps, float(rng.random()))
        vals = np.full(m, off)
        vals[chosen] += on
        return vals
    raise UnsupportedMechanismError(f"unknown indicator mechanism {mechanism!r}")


def privatize_aligned(
    x,
    y: float,
    pp: ProductPartition,
    budget: PrivacyBudget,
    m_bound: float,
    rng: np.random.Generator,
    mechanism: str = PAIRED,
    expectation: bool = False,
) -> PrivatizedRecord:
    """Release for the shared-preference setting.

    The support is every histogram cell crossed with the single tree leaf
    the open coordinates fall into; one indicator is randomized per
    histogram cell.
    """
    x = np.asarray(x, dtype=np.float64)
    leaf = int(pp.tree.leaf_index(x[list(pp.public_axes)].reshape(1, -1))[0])
    n_cells = pp.hist.n_cells
    if pp.hist.s:
        true_cell = int(pp.hist.cell_index(x[list(pp.private_axes)].reshape(1, -1))[0])
    else:
        true_cell = 0
    support = np.arange(n_cells, dtype=np.int64) * pp.tree.n_leaves + leaf
    bits = (np.arange(n_cells) == true_cell).astype(np.float64)
    y_tilde = float(y) if expectation else laplace_label(y, m_bound, budget.label_param, rng)
    values = _indicator_values(bits, true_cell, budget.indicator_param, rng, mechanism, expectation)
    return PrivatizedRecord(y_tilde, support, values, mechanism, expectation)


def privatize_personalized(
    x,
    y: float,
    w,
    pp: ProductPartition,
    budget: PrivacyBudget,
    m_bound: float,
    rng: np.random.Generator,
    mechanism: str = PAIRED,
    expectation: bool = False,
) -> PrivatizedRecord:
    """Release for user-specific preferences: indicators over the potential grids.

    Grids outside the potential set are already determined by the open
    coordinates and stay implicit zeros; on the support the debiased
    indicator estimate is unbiased for the true one-hot encoding.
    """
    x = np.asarray(x, dtype=np.float64)
    support = pp.potential_grids(x, w)
    true_grid = pp.grid_index(x)
    true_pos = int(np.flatnonzero(support == true_grid)[0])
    bits = (support == true_grid).astype(np.float64)
    y_tilde = float(y) if expectation else laplace_label(y, m_bound, budget.label_param, rng)
    values = _indicator_values(bits, true_pos, budget.indicator_param, rng, mechanism, expectation)
    return PrivatizedRecord(y_tilde, support, values, mechanism, expectation)


# ---------------------------------------------------------------------------
# batch mechanisms (vectorized, same draw layout)
# ---------------------------------------------------------------------------


def _segment_positions(counts: np.ndarray) -> np.ndarray:
    starts = np.cumsum(counts) - counts
    return np.arange(counts.sum(), dtype=np.int64) - np.repeat(starts, counts)


def _potential_support_csr(pp: ProductPartition, X: np.ndarray, W: np.ndarray):
    """CSR (indptr, indices) of every user's sorted potential-grid support."""
    n = X.shape[0]
    n_leaves = pp.tree.n_leaves
    pub = list(pp.public_axes)
    reach = pp.tree.potential_leaf_matrix(X[:, pub], W[:, pub])
    leaf_user, leaf_val = np.nonzero(reach)
    leaf_val = leaf_val.astype(np.int64)
    leaf_counts = reach.sum(axis=1).astype(np.int64)
    leaf_starts = np.cumsum(leaf_counts) - leaf_counts

    h_user = np.arange(n, dtype=np.int64)
    h_val = np.zeros(n, dtype=np.int64)
    s, t = pp.hist.s, pp.hist.t
    for k, ax in enumerate(pp.private_axes):
        stride = t ** (s - 1 - k)
        obs_bin = pp.hist.bin_of(X[:, [ax]])[:, 0]
        protected = W[h_user, ax].astype(bool)
        reps = np.where(protected, t, 1)
        pos = _segment_positions(reps)
        user2 = np.repeat(h_user, reps)
        base = np.repeat(h_val, reps)
        contrib = np.where(np.repeat(protected, reps), pos, obs_bin[user2])
        h_val = base + contrib * stride
        h_user = user2
    h_counts = np.bincount(h_user, minlength=n).astype(np.int64)

    reps = leaf_counts[h_user]
    user_f = np.repeat(h_user, reps)
    pos = _segment_positions(reps)
    lv = leaf_val[leaf_starts[user_f] + pos]
    indices = np.repeat(h_val, reps) * n_leaves + lv
    counts = h_counts * leaf_counts
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return indptr, indices


def _batch_indicator_values(indptr, indices, true_grid, eps, rng, mechanism, expectation):
    n = len(indptr) - 1
    m = np.diff(indptr)
    bits_mask = indices == np.repeat(true_grid, m)
    true_pos_global = np.flatnonzero(bits_mask)
    if true_pos_global.size != n:
        raise ConfigError("each support must contain its true grid exactly once")
    if expectation:
        return bits_mask.astype(np.float64)
    if mechanism == PAIRED:
        return _paired_values(bits_mask.astype(np.float64), eps, rng.random(indices.size))
    if mechanism == GENERALIZED:
        e2 = math.exp(eps / 2.0)
        denom = e2 + m - 1.0
        p_true = e2 / denom
        u = rng.random(n)
        true_pos = true_pos_global - indptr[:-1]
        k = np.minimum(((u - p_true) * denom).astype(np.int64), np.maximum(m - 2, 0))
        chosen = np.where((u < p_true) | (m == 1), true_pos, k + (k >= true_pos))
        values = np.full(indices.size, -1.0 / (e2 - 1.0))
        values[indptr[:-1] + chosen] += denom / (e2 - 1.0)
        return values
    raise UnsupportedMechanismError(f"unknown indicator mechanism {mechanism!r}")


def privatize_batch_aligned(
    X,
    Y,
    pp: ProductPartition,
    budget: PrivacyBudget,
    m_bound: float,
    rng: np.random.Generator,
    mechanism: str = PAIRED,
    expectation: bool = False,
    y_tilde: np.ndarray | None = None,
) -> PrivatizedBatch:
    """Stacked aligned releases; ``y_tilde`` skips the label draw when the
    caller already privatized the labels (the tree needs them first)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    if y_tilde is None:
        y_tilde = Y.copy() if expectation else laplace_label(Y, m_bound, budget.label_param, rng)
    n_cells, n_leaves = pp.hist.n_cells, pp.tree.n_leaves
    leaf = pp.tree.leaf_index(X[:, list(pp.public_axes)])
    indices = (np.arange(n_cells, dtype=np.int64)[None, :] * n_leaves + leaf[:, None]).ravel()
    indptr = np.arange(0, (n + 1) * n_cells, n_cells, dtype=np.int64)
    true_grid = pp.grid_indices(X)
    values = _batch_indicator_values(
        indptr, indices, true_grid, budget.indicator_param, rng, mechanism, expectation
    )
    return PrivatizedBatch(y_tilde, indptr, indices, values, mechanism, expectation)


def privatize_batch_personalized(
    X,
    Y,
    W,
    pp: ProductPartition,
    budget: PrivacyBudget,
    m_bound: float,
    rng: np.random.Generator,
    mechanism: str = PAIRED,
    expectation: bool = False,
    y_tilde: np.ndarray | None = None,
) -> PrivatizedBatch:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    W = np.asarray(W)
    if y_tilde is None:
        y_tilde = Y.copy() if expectation else laplace_label(Y, m_bound, budget.label_param, rng)
    indptr, indices = _potential_support_csr(pp, X, W)
    true_grid = pp.grid_indices(X)
    values = _batch_indicator_values(
        indptr, indices, true_grid, budget.indicator_param, rng, mechanism, expectation
    )
    return PrivatizedBatch(y_tilde, indptr, indices, values, mechanism, expectation)


# ---------------------------------------------------------------------------
# privacy audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrivacyAudit:
    """Result of the exhaustive likelihood-ratio enumeration."""

    mechanism: str
    eps_indicator: float
    eps_label: float
    max_ratio: float
    indicator_bound: float
    label_bound: float
    combined_ratio: float
    total_bound: float
    atoms: int
    passed: bool


def paired_atom_distribution(eps: float, n_cells: int) -> np.ndarray:
    """(inputs x atoms) output distribution of the paired RR over n_cells.

    Input ``a`` is the cell holding the protected point; an atom is the
    tuple of reported bits, encoded as an integer in [0, 2**n_cells).
    """
    keep, _, _ = _paired_constants(eps)
    dist = np.zeros((n_cells, 2**n_cells))
    for a in range(n_cells):
        bits = np.array([1 if j == a else 0 for j in range(n_cells)])
        for atom_id, atom in enumerate(itertools.product((0, 1), repeat=n_cells)):
            probs = np.where(np.array(atom) == bits, keep, 1.0 - keep)
            dist[a, atom_id] = probs.prod()
    return dist


def generalized_atom_distribution(eps: float, support_size: int) -> np.ndarray:
    """(inputs x atoms) distribution of the generalized RR; atoms are draws."""
    e2 = math.exp(eps / 2.0)
    denom = e2 + support_size - 1.0
    dist = np.full((support_size, support_size), 1.0 / denom)
    np.fill_diagonal(dist, e2 / denom)
    return dist


def audit_privacy_ratio(
    mechanism: str,
    eps_indicator: float,
    n_cells: int = 4,
    eps_label: float | None = None,
    tolerance: float = 1e-12,
) -> PrivacyAudit:
    """Exhaustively bound the indicator channel's likelihood ratio.

    Enumerates every output atom against every pair of protected inputs
    (the open coordinates held fixed) and returns the maximal ratio, which
    must not exceed ``exp(eps_indicator / 2)``.  The label channel has no
    finite atom set; its ratio bound
    ``exp(eps_label * |y - y'| / 4M) <= exp(eps_label / 2)`` is attached
    analytically, giving the composed bound ``exp((eps_ind + eps_label)/2)``.
    """
    if eps_indicator <= 0:
        raise ValueError(f"eps must be positive, got {eps_indicator}")
    if eps_label is None:
        eps_label = eps_indicator
    if mechanism == PAIRED:
        dist = paired_atom_distribution(eps_indicator, n_cells)
    elif mechanism == GENERALIZED:
        dist = generalized_atom_distribution(eps_indicator, n_cells)
    elif mechanism == "laplace":
        raise UnsupportedMechanismError(
            "the Laplace label channel is continuous; its bound is analytic"
        )
    else:
        raise UnsupportedMechanismError(f"unknown mechanism {mechanism!r}")

    max_ratio = 1.0
    n_inputs, n_atoms = dist.shape
    for a in range(n_inputs):
        for b in range(n_inputs):
            ratios = dist[a] / dist[b]
            max_ratio = max(max_ratio, float(ratios.max()))
    indicator_bound = math.exp(eps_indicator / 2.0)
    label_bound = math.exp(eps_label / 2.0)
    return PrivacyAudit(
        mechanism=mechanism,
        eps_indicator=eps_indicator,
        eps_label=eps_label,
        max_ratio=max_ratio,
        indicator_bound=indicator_bound,
        label_bound=label_bound,
        combined_ratio=max_ratio * label_bound,
        total_bound=math.exp((eps_indicator + eps_label) / 2.0),
        atoms=n_atoms,
        passed=max_ratio <= indicator_bound + tolerance,
    )
