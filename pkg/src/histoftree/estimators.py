"""Grid-average regression models over product partitions.

Fitting aggregates the released records per grid: the prediction of grid j
is the ratio of ``sum_i y_i * v_i[j]`` to ``sum_i v_i[j]``, clipped to the
promised label range.  Grids whose noisy denominator falls below the
reliability floor ``n / (2 * grid_count)`` fall back to the released global
label mean.  Cost is linear in the total support size of the records plus
one pass over the grids; partition construction is ``O(p * n * d)``.

``select_parameters`` performs the brute-force search over the number of
protected axes ``s`` and the tree depth ``p``, trading the noise-inflation
term (which grows with the tail weight of the preference matrix) against
the approximation term.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .mechanisms import (
    GENERALIZED,
    PAIRED,
    PrivacyBudget,
    PrivatizedBatch,
    laplace_label,
    privatize_batch_aligned,
    privatize_batch_personalized,
    records_to_batch,
)
from .partition import ProductPartition, build_histogram, cart_tree, max_edge_tree

MAX_EDGE = "max_edge"
CART = "cart"


def _mask_array(w) -> np.ndarray:
    return np.asarray(getattr(w, "w", w), dtype=np.int8)


def rank_private_axes(w) -> np.ndarray:
    """Feature axes sorted by how many users protect them, descending.

    Ties break toward the smaller axis index, so an aligned mask keeps the
    natural order.
    """
    w = _mask_array(w)
    column_sums = w.sum(axis=0)
    return np.lexsort((np.arange(w.shape[1]), -column_sums))


def tail_weight(p: int, w, s: int, order: np.ndarray | None = None) -> float:
    """Average over users of ``2 ** (protected tail count * p / (d - s))``.

    The tail is everything past the ``s`` most-protected axes in ranked
    order; the result is 1 exactly when no user protects a tail axis and
    grows up to ``2 ** p`` when everyone protects the whole tail.
    """
    w = _mask_array(w)
    d = w.shape[1]
    if s >= d:
        raise ValueError(f"s must be smaller than d={d}, got {s} (tree factor would be empty)")
    if order is None:
        order = rank_private_axes(w)
    tail_counts = w[:, order[s:]].sum(axis=1)
    return float(np.mean(np.exp2(tail_counts * (p / (d - s)))))


@dataclass(frozen=True)
class ParamSelection:
    """Outcome of the brute-force (s, p) search."""

    s: int
    p: int
    t: int
    tail_exponent: float
    objective: float


@dataclass(frozen=True)
class RateParams:
    """Smoothness-class constants; documentation companions, not tuning knobs.

    ``alpha`` is the Holder exponent of the regression function (1 = the
    Lipschitz case used by the selector); the remaining symbols bound the
    Lipschitz seminorm and the density of the feature distribution.
    """

    alpha: float = 1.0
    m_bound: float = 1.0
    lipschitz_constant: float | None = None
    density_upper: float | None = None
    density_lower: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")


def selection_objective(
    s: int, p: int, n: int, d: int, eps: float, delta_value: float, alpha: float, c_approx: float
) -> float:
    """Noise-inflation term plus (scaled) approximation term at one (s, p)."""
    dd = d - s
    first = float(np.exp2(p * (d + s) / dd)) * math.log(n) / (n * eps**2) * delta_value
    second = c_approx * float(np.exp2(-2.0 * alpha * p / dd))
    return first + second


def select_parameters(
    w, n: int, d: int, eps: float, alpha: float = 1.0, c_approx: float = 1.0
) -> ParamSelection:
    """Brute-force minimizer over s in {0..d-1}, p in {1..ceil(d log2 n)}.

    Ties prefer the smaller s, then the smaller p.  The bin count follows
    the selected depth as ``t = max(1, round(2 ** (p / (d - s))))``.
    """
    if n < 2 or d < 2:
        raise ValueError("selection needs n >= 2 and d >= 2")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    w = _mask_array(w)
    order = rank_private_axes(w)
    ranked = w[:, order]
    suffix = np.flip(np.cumsum(np.flip(ranked, axis=1), axis=1), axis=1)
    p_max = math.ceil(d * math.log2(n))
    best: tuple[float, int, int] | None = None
    for s in range(d):
        dd = d - s
        tail = suffix[:, s]
        for p in range(1, p_max + 1):
            delta_value = float(np.mean(np.exp2(tail * (p / dd))))
            obj = selection_objective(s, p, n, d, eps, delta_value, alpha, c_approx)
            if best is None or obj < best[0]:
                best = (obj, s, p)
    obj, s, p = best
    dd = d - s
    t = max(1, int(np.round(np.exp2(p / dd))))
    delta_star = float(np.mean(np.exp2(suffix[:, s] * (p / dd))))
    return ParamSelection(
        s=s, p=p, t=t, tail_exponent=float(np.log2(delta_star)) / p, objective=obj
    )


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class HistOfTreeModel:
    """Per-grid predictions over a product partition."""

    pp: ProductPartition
    grid_values: np.ndarray
    fallback_value: float
    m_bound: float
    budget: PrivacyBudget | None = None
    mechanism: str | None = None
    rule: str | None = None
    seed: int | None = None
    selection: ParamSelection | None = None

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        pts = x.reshape(1, -1) if squeeze else x
        if pts.shape[1] != self.pp.d:
            raise DomainError(f"expected {self.pp.d} features, got {pts.shape[1]}")
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise DomainError("prediction points must lie in [0, 1]^d")
        out = self.grid_values[self.pp.grid_indices(pts)]
        return float(out[0]) if squeeze else out

    def to_json_dict(self) -> dict:
        meta = {
            "epsilon": self.budget.epsilon if self.budget else None,
            "rho": self.budget.rho if self.budget else None,
            "m_bound": self.m_bound,
            "s": self.pp.hist.s,
            "p": self.pp.tree.depth,
            "t": self.pp.hist.t,
            "seed": self.seed,
            "mechanism": self.mechanism,
            "rule": self.rule,
        }
        return {
            "format": "histoftree-model-v1",
            "partition": self.pp.to_dict(),
            "grid_values": [float(v) for v in self.grid_values],
            "fallback_value": float(self.fallback_value),
            "metadata": meta,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "HistOfTreeModel":
        if doc.get("format") != "histoftree-model-v1":
            raise ConfigError(f"unrecognized model format {doc.get('format')!r}")
        meta = doc["metadata"]
        budget = None
        if meta.get("epsilon") is not None:
            budget = PrivacyBudget(meta["epsilon"], meta.get("rho") or 0.5)
        return cls(
            pp=ProductPartition.from_dict(doc["partition"]),
            grid_values=np.asarray(doc["grid_values"], dtype=np.float64),
            fallback_value=float(doc["fallback_value"]),
            m_bound=float(meta["m_bound"]),
            budget=budget,
            mechanism=meta.get("mechanism"),
            rule=meta.get("rule"),
            seed=meta.get("seed"),
        )

    @classmethod
    def load(cls, path) -> "HistOfTreeModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def fit(records, pp: ProductPartition, m_bound: float, budget: PrivacyBudget | None = None) -> HistOfTreeModel:
    """Aggregate released records into per-grid predictions.

    Accepts a list of ``PrivatizedRecord`` or an already-stacked
    ``PrivatizedBatch``; raises ConfigError when any record refers to a
    grid the partition does not have.
    """
    if isinstance(records, PrivatizedBatch):
        batch = records
    else:
        records = list(records)
        batch = records_to_batch(records)
    if batch.n == 0:
        raise ConfigError("cannot fit on zero records")
    G = pp.grid_count
    if batch.indices.size and (batch.indices.min() < 0 or int(batch.indices.max()) >= G):
        raise ConfigError("records refer to grids outside this partition")
    den = np.bincount(batch.indices, weights=batch.values, minlength=G)
    user_of = np.repeat(np.arange(batch.n), np.diff(batch.indptr))
    num = np.bincount(batch.indices, weights=batch.values * batch.y_tilde[user_of], minlength=G)
    floor = batch.n / (2.0 * G)
    fallback = float(np.clip(np.mean(batch.y_tilde), -m_bound, m_bound))
    values = np.full(G, fallback)
    reliable = den > floor
    values[reliable] = np.clip(num[reliable] / den[reliable], -m_bound, m_bound)
    return HistOfTreeModel(
        pp=pp,
        grid_values=values,
        fallback_value=fallback,
        m_bound=m_bound,
        budget=budget,
        mechanism=batch.mechanism,
    )


def predict(model: HistOfTreeModel, x) -> float:
    """Prediction at one point (see ``HistOfTreeModel.predict``)."""
    return model.predict(np.asarray(x, dtype=np.float64).reshape(-1))


# ---------------------------------------------------------------------------
# end-to-end pipelines
# ---------------------------------------------------------------------------


def _build_tree(x_pub, y_tilde, w_pub, p, axes, rule, min_leaf, rng=None):
    if rule == MAX_EDGE:
        return max_edge_tree(x_pub, y_tilde, w_pub, p, axes=axes)
    if rule == "random":
        return max_edge_tree(x_pub, y_tilde, w_pub, p, axes=axes, random_split=True, rng=rng)
    if rule == CART:
        return cart_tree(x_pub, y_tilde, w_pub, p, min_leaf=min_leaf, axes=axes)
    raise ConfigError(f"unknown partition rule {rule!r}")


def fit_aligned_hist_of_tree(
    X,
    Y,
    private_axes,
    p: int,
    t: int,
    budget: PrivacyBudget,
    m_bound: float,
    rng: np.random.Generator,
    rule: str = MAX_EDGE,
    mechanism: str = PAIRED,
    min_leaf: int = 1,
    expectation: bool = False,
) -> HistOfTreeModel:
    """Pipeline for the shared-preference setting.

    Labels are privatized first, the tree on the open axes is grown from
    the privatized labels, then the per-cell indicators are released and
    aggregated.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    private_axes = tuple(int(a) for a in private_axes)
    public_axes = tuple(a for a in range(X.shape[1]) if a not in private_axes)
    y_tilde = Y.copy() if expectation else laplace_label(Y, m_bound, budget.label_param, rng)
    tree = _build_tree(X[:, list(public_axes)], y_tilde, None, p, public_axes, rule, min_leaf, rng)
    pp = ProductPartition(
        hist=build_histogram(t, len(private_axes), private_axes), tree=tree, d=X.shape[1]
    )
    batch = privatize_batch_aligned(
        X, Y, pp, budget, m_bound, rng, mechanism=mechanism, expectation=expectation, y_tilde=y_tilde
    )
    model = fit(batch, pp, m_bound, budget)
    model.rule = rule
    return model


def fit_personalized_hist_of_tree(
    X,
    Y,
    w,
    s: int,
    p: int,
    t: int,
    budget: PrivacyBudget,
    m_bound: float,
    rng: np.random.Generator,
    rule: str = MAX_EDGE,
    mechanism: str = PAIRED,
    min_leaf: int = 1,
    expectation: bool = False,
) -> HistOfTreeModel:
    """Pipeline for user-specific preferences.

    The ``s`` most-protected axes (ranked by column sums) go to the
    histogram factor; the tree on the remaining axes only consults samples
    whose mask is 0 on the candidate axis; indicators are released over
    each user's potential grids.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    w = _mask_array(w)
    order = rank_private_axes(w)
    private_axes = tuple(int(a) for a in order[:s])
    public_axes = tuple(int(a) for a in order[s:])
    y_tilde = Y.copy() if expectation else laplace_label(Y, m_bound, budget.label_param, rng)
    tree = _build_tree(
        X[:, list(public_axes)], y_tilde, w[:, list(public_axes)], p, public_axes, rule, min_leaf, rng
    )
    pp = ProductPartition(
        hist=build_histogram(t, len(private_axes), private_axes), tree=tree, d=X.shape[1]
    )
    batch = privatize_batch_personalized(
        X, Y, w, pp, budget, m_bound, rng, mechanism=mechanism, expectation=expectation, y_tilde=y_tilde
    )
    model = fit(batch, pp, m_bound, budget)
    model.rule = rule
    return model


def fit_ad_hist_of_tree(
    X,
    Y,
    w,
    eps: float,
    m_bound: float,
    rng: np.random.Generator,
    c_approx: float = 1.0,
    t_offset: int = 0,
    rho: float = 0.5,
    rule: str = MAX_EDGE,
    mechanism: str = GENERALIZED,
    min_leaf: int = 1,
    expectation: bool = False,
) -> HistOfTreeModel:
    """Data-driven variant: pick (s, p, t) from the preference matrix, then fit.

    ``t_offset`` shifts the selected bin count by one grid step (floored at
    one bin) and ``c_approx`` rescales the approximation term, the two
    knobs the benchmark sweeps.
    """
    X = np.asarray(X, dtype=np.float64)
    w = _mask_array(w)
    n, d = X.shape
    sel = select_parameters(w, n, d, eps, alpha=1.0, c_approx=c_approx)
    t = max(1, sel.t + t_offset)
    model = fit_personalized_hist_of_tree(
        X,
        Y,
        w,
        s=sel.s,
        p=sel.p,
        t=t,
        budget=PrivacyBudget(eps, rho),
        m_bound=m_bound,
        rng=rng,
        rule=rule,
        mechanism=mechanism,
        min_leaf=min_leaf,
        expectation=expectation,
    )
    model.selection = sel
    return model
