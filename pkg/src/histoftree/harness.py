"""Synthetic data, preference masks, CSV ingestion, and the experiment runner.

The runner follows the benchmark protocol: per replication a fresh seed
substream, a disjoint train/test split, one fit per (method, budget, grid
point), and test mean squared error recorded per row.  A method's headline
number at a budget is the grid point with the smallest mean MSE across
replications; ratios are taken against the non-private tree's headline
number on the identical splits.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import fit_cart, fit_krr, fit_label_dt, fit_par_dt, fit_private_histogram
from .errors import ConfigError, DataError
from .estimators import (
    fit_ad_hist_of_tree,
    fit_aligned_hist_of_tree,
    fit_personalized_hist_of_tree,
)
from .mechanisms import GENERALIZED, MaskMatrix, PrivacyBudget

SYNTHETIC_D = 5
SYNTHETIC_SIGNAL_AXES = (0, 1, 4)
# sup |signal| = 3 sin(1) < 3, plus a five-sigma allowance for the unit noise
SYNTHETIC_M_BOUND = 8.0

NONPRIVATE_METHODS = frozenset({"dt"})


# ---------------------------------------------------------------------------
# data and masks
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Feature matrix in [0,1]^d with labels promised to lie in [-M, M]."""

    x: np.ndarray
    y: np.ndarray
    m_bound: float
    label_range: float
    source: str
    clipped: int = 0

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


def _resolve_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gen_synthetic(n: int, seed) -> Dataset:
    """Uniform features on [0,1]^5, label = sin(x0) + sin(x1) + sin(x4) + noise.

    Unit Gaussian noise; labels are clipped to the promised range (signal
    bound plus five sigmas) and clipping events are counted.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    rng = _resolve_rng(seed)
    x = rng.random((n, SYNTHETIC_D))
    y = np.sin(x[:, SYNTHETIC_SIGNAL_AXES]).sum(axis=1) + rng.standard_normal(n)
    clipped = int(np.count_nonzero(np.abs(y) > SYNTHETIC_M_BOUND))
    y = np.clip(y, -SYNTHETIC_M_BOUND, SYNTHETIC_M_BOUND)
    return Dataset(
        x=x,
        y=y,
        m_bound=SYNTHETIC_M_BOUND,
        label_range=float(y.max() - y.min()) if n > 1 else 0.0,
        source="synthetic",
        clipped=clipped,
    )


def gen_mask_aligned(n: int, d: int, s_star: int) -> MaskMatrix:
    """Everyone protects exactly the first ``s_star`` features."""
    if not 0 <= s_star <= d:
        raise ValueError(f"s_star must lie in [0, {d}], got {s_star}")
    w = np.zeros((n, d), dtype=np.int8)
    w[:, :s_star] = 1
    return MaskMatrix(w)


def gen_mask_gamma(n: int, d: int, gamma: float) -> MaskMatrix:
    """Power-law preference tail: user i protects feature l iff
    ``i + 1 <= n / (l + 1)**gamma`` (0-based indices).

    Smaller gamma keeps later columns protected for more users (a thicker
    tail); gamma = 0 protects everything.
    """
    rows = np.arange(1, n + 1)[:, None]
    cols = np.arange(1, d + 1)[None, :].astype(np.float64)
    return MaskMatrix((rows <= n / cols**gamma).astype(np.int8))


def default_sensitive_count(d: int, log_base: str = "e") -> int:
    """Number of leading sensitive features, ``ceil(log(sqrt(d)))``.

    The log base is configurable because the two natural readings disagree
    for large d; natural log is the default.
    """
    if d < 1:
        raise ValueError(f"d must be positive, got {d}")
    log = math.log if log_base == "e" else math.log2
    return max(1, math.ceil(log(math.sqrt(d))))


def gen_mask_realdata(n: int, d: int, s_star: int | None = None, log_base: str = "e") -> MaskMatrix:
    """Benchmark mask for sensitivity-ranked features: user i protects
    feature l iff ``i + 1 <= n / 10**floor(l / s_star)`` (0-based).

    The first ``s_star`` columns are fully protected, the next block for a
    tenth of the users, and so on; columns are assumed pre-ranked by
    sensitivity.
    """
    if s_star is None:
        s_star = default_sensitive_count(d, log_base)
    rows = np.arange(1, n + 1)[:, None]
    cols = np.arange(d)[None, :]
    return MaskMatrix((rows <= n / 10.0 ** (cols // s_star)).astype(np.int8))


def build_mask(spec: dict, n: int, d: int) -> MaskMatrix:
    """Mask factory used by experiment configs (kind + parameters)."""
    kind = spec.get("kind")
    if kind == "aligned":
        return gen_mask_aligned(n, d, int(spec["s_star"]))
    if kind == "gamma":
        return gen_mask_gamma(n, d, float(spec["gamma"]))
    if kind == "realdata":
        return gen_mask_realdata(n, d, spec.get("s_star"), spec.get("log_base", "e"))
    if kind == "none":
        return gen_mask_aligned(n, d, 0)
    raise ConfigError(f"unknown mask kind {kind!r}")


def ingest_csv(path, label_column: str, m_policy="absmax") -> Dataset:
    """Load a rectangular numeric CSV and min-max scale every feature column.

    Constant columns scale to 0.  The label column is left unscaled; the
    promised bound M comes from ``m_policy``: the default ``"absmax"`` takes
    ``max |y|`` (so nothing is clipped), a float forces that bound and clips.
    The observed label range is recorded for the baselines' noise scale.
    """
    try:
        fh = open(path, newline="")
    except OSError as ex:
        raise DataError(f"cannot open {path}: {ex}") from ex
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not in header {header}")
        rows = []
        for r, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"row {r} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for name, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(f"non-numeric value {cell!r} at row {r}, column {name!r}") from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path} has a header but no data rows")
    table = np.asarray(rows, dtype=np.float64)
    label_idx = header.index(label_column)
    y = table[:, label_idx]
    x = np.delete(table, label_idx, axis=1)
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = hi - lo
    constant = span == 0
    span = np.where(constant, 1.0, span)
    x = (x - lo) / span
    x[:, constant] = 0.0
    label_range = float(y.max() - y.min())
    clipped = 0
    if m_policy == "absmax":
        m_bound = float(np.max(np.abs(y))) or 1.0
    else:
        m_bound = float(m_policy)
        clipped = int(np.count_nonzero(np.abs(y) > m_bound))
        y = np.clip(y, -m_bound, m_bound)
    return Dataset(
        x=x, y=y, m_bound=m_bound, label_range=label_range, source=str(path), clipped=clipped
    )


# ---------------------------------------------------------------------------
# metrics and statistics
# ---------------------------------------------------------------------------


def mse(predictions, truths) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape:
        raise ValueError(f"shape mismatch {predictions.shape} vs {truths.shape}")
    return float(np.mean((predictions - truths) ** 2))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sv = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    significant: bool


def _exact_two_sided_p(double_ranks: np.ndarray, double_w_plus: int) -> float:
    """P[|W+ - mu| >= |w - mu|] by subset-sum counting over sign patterns."""
    total = int(double_ranks.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in double_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    deviations = np.abs(2 * np.arange(total + 1) - total)
    observed = abs(2 * double_w_plus - total)
    return float(counts[deviations >= observed].sum() / counts.sum())


def wilcoxon_signed_rank(a, b, exact_limit: int = 20) -> WilcoxonResult:
    """Two-sided paired signed-rank test; zero differences are dropped.

    Uses the exact null distribution up to ``exact_limit`` non-zero
    differences and the tie-corrected normal approximation with continuity
    correction above it.  Raises ValueError when every difference is zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    diff = diff[diff != 0.0]
    n = diff.size
    if n == 0:
        raise ValueError("all paired differences are zero; the test is undefined")
    ranks = _average_ranks(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks.sum()) - w_plus
    statistic = min(w_plus, w_minus)
    if n <= exact_limit:
        double_ranks = np.rint(2 * ranks).astype(np.int64)
        p = _exact_two_sided_p(double_ranks, int(round(2 * w_plus)))
    else:
        mu = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(diff), return_counts=True)
        sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - float(
            ((tie_counts**3 - tie_counts) / 48.0).sum()
        )
        dev = w_plus - mu
        dev -= 0.5 * np.sign(dev)
        z = dev / math.sqrt(sigma2)
        p = math.erfc(abs(z) / math.sqrt(2.0))
    p = min(1.0, max(0.0, p))
    return WilcoxonResult(statistic=statistic, p_value=p, significant=p < 0.05)


def rank_sum_summary(means_by_dataset: dict) -> dict[str, float]:
    """Per-method rank sums: rank methods by mean MSE within each dataset
    (1 = best, ties averaged), then sum ranks across datasets."""
    sums: dict[str, float] = {}
    for _, method_means in sorted(means_by_dataset.items()):
        methods = sorted(method_means)
        ranks = _average_ranks(np.array([method_means[m] for m in methods]))
        for m, r in zip(methods, ranks):
            sums[m] = sums.get(m, 0.0) + float(r)
    return sums


# ---------------------------------------------------------------------------
# experiment configuration and runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSpec:
    method: str
    grid: tuple = ()

    def __post_init__(self):
        if not self.grid:
            raise ConfigError(f"method {self.method!r} has an empty parameter grid")


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple
    eps_list: tuple
    reps: int
    seed: int
    data: dict
    mask: dict
    split_fraction: float = 0.8
    threads: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        if not self.methods:
            raise ConfigError("no methods configured")
        if not all(e > 0 for e in self.eps_list):
            raise ConfigError("privacy budgets must be positive")
        if not 0 < self.split_fraction < 1:
            raise ConfigError(f"split fraction must lie in (0,1), got {self.split_fraction}")

    def to_json_dict(self) -> dict:
        return {
            "methods": [{"method": m.method, "grid": list(m.grid)} for m in self.methods],
            "eps_list": list(self.eps_list),
            "reps": self.reps,
            "seed": self.seed,
            "data": self.data,
            "mask": self.mask,
            "split_fraction": self.split_fraction,
            "threads": self.threads,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            methods = tuple(
                MethodSpec(m["method"], tuple(dict(g) for g in m["grid"])) for m in doc["methods"]
            )
            return cls(
                methods=methods,
                eps_list=tuple(float(e) for e in doc["eps_list"]),
                reps=int(doc["reps"]),
                seed=int(doc["seed"]),
                data=dict(doc["data"]),
                mask=dict(doc["mask"]),
                split_fraction=float(doc.get("split_fraction", 0.8)),
                threads=int(doc.get("threads", 1)),
            )
        except KeyError as ex:
            raise ConfigError(f"experiment config is missing key {ex}") from ex

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_json_dict(json.load(fh))
        except OSError as ex:
            raise DataError(f"cannot open {path}: {ex}") from ex
        except json.JSONDecodeError as ex:
            raise DataError(f"{path} is not valid JSON: {ex}") from ex


def params_string(point: dict) -> str:
    return ";".join(f"{k}={point[k]}" for k in sorted(point))


@dataclass
class RunRow:
    method: str
    epsilon: float
    params: str
    replication: int
    mse: float
    seconds: float
    error: str = ""

    def key(self):
        return (self.method, self.epsilon, self.params, self.replication)


RESULT_COLUMNS = ("method", "epsilon", "params", "replication", "mse", "seconds", "error")


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def sort(self) -> None:
        self.rows.sort(key=RunRow.key)

    def to_csv(self, path) -> None:
        self.sort()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RESULT_COLUMNS)
            for r in self.rows:
                writer.writerow(
                    [r.method, repr(r.epsilon), r.params, r.replication, repr(r.mse), repr(r.seconds), r.error]
                )

    # -- aggregation --------------------------------------------------------

    def point_series(self) -> dict:
        """(method, epsilon, params) -> replication-ordered MSE array."""
        series: dict = {}
        for r in sorted(self.rows, key=RunRow.key):
            series.setdefault((r.method, r.epsilon, r.params), []).append(r.mse)
        return {k: np.asarray(v) for k, v in series.items()}

    def best_points(self) -> dict:
        """(method, epsilon) -> (params, mean, median, per-rep series).

        The headline grid point minimizes the mean MSE over replications;
        points whose fits all failed are skipped.
        """
        best: dict = {}
        for (method, eps, params), vals in self.point_series().items():
            ok = vals[~np.isnan(vals)]
            if ok.size == 0:
                continue
            mean = float(ok.mean())
            cur = best.get((method, eps))
            if cur is None or mean < cur[1]:
                best[(method, eps)] = (params, mean, float(np.median(ok)), vals)
        return best

    def aggregate(self) -> dict:
        """Headline numbers, ratios against the non-private tree, rank sums,
        and signed-rank comparisons of the best private method per budget."""
        best = self.best_points()
        dt_best = [v for (m, _), v in best.items() if m == "dt"]
        dt_mean = dt_best[0][1] if dt_best else None
        per_method: dict = {}
        eps_values = sorted({eps for (_, eps) in best if not math.isinf(eps)})
        for (method, eps), (params, mean, median, series) in sorted(best.items()):
            entry = {
                "params": params,
                "mean_mse": mean,
                "median_mse": median,
                "ratio_vs_dt": mean / dt_mean if dt_mean else None,
            }
            per_method.setdefault(method, {})[repr(eps)] = entry
        comparisons: dict = {}
        for eps in eps_values:
            at_eps = {m: v for (m, e), v in best.items() if e == eps}
            if len(at_eps) < 2:
                continue
            champion = min(at_eps, key=lambda m: at_eps[m][1])
            tests = {}
            for other, (_, _, _, series) in sorted(at_eps.items()):
                if other == champion:
                    continue
                a, b = at_eps[champion][3], series
                paired = ~(np.isnan(a) | np.isnan(b))
                if paired.sum() < 2 or np.all(a[paired] == b[paired]):
                    continue
                res = wilcoxon_signed_rank(a[paired], b[paired])
                tests[other] = {"p_value": res.p_value, "significant": res.significant}
            comparisons[repr(eps)] = {"best_method": champion, "tests": tests}
        means_for_ranks = {
            "dataset": {
                m: min(e["mean_mse"] for e in eps_entries.values())
                for m, eps_entries in per_method.items()
            }
        }
        return {
            "methods": per_method,
            "dt_mean_mse": dt_mean,
            "rank_sums": rank_sum_summary(means_for_ranks),
            "wilcoxon": comparisons,
        }


# -- method dispatch ---------------------------------------------------------


def _aligned_private_axes(mask: MaskMatrix) -> tuple[int, ...]:
    full = mask.column_sums == mask.n
    empty = mask.column_sums == 0
    if not np.all(full | empty):
        raise ConfigError("mask is not aligned; pass an explicit 's' in the grid point")
    return tuple(int(a) for a in np.flatnonzero(full))


def _fit_and_predict(method, point, eps, x_train, y_train, mask, ds, x_test):
    rng = point.pop("_rng")
    depth = int(point.get("max_depth", 4))
    leaf = int(point.get("min_samples_leaf", 1))
    if method.startswith("hist_of_tree"):
        budget = PrivacyBudget(eps, float(point.get("rho", 0.5)))
        common = dict(
            p=int(point["p"]),
            t=int(point["t"]),
            budget=budget,
            m_bound=ds.m_bound,
            rng=rng,
            rule=point.get("rule", "max_edge"),
            mechanism=point.get("mechanism", GENERALIZED),
            min_leaf=leaf,
        )
        if "s" in point:
            model = fit_personalized_hist_of_tree(x_train, y_train, mask.w, s=int(point["s"]), **common)
        else:
            model = fit_aligned_hist_of_tree(x_train, y_train, _aligned_private_axes(mask), **common)
        return model.predict(x_test)
    if method.startswith("ad_hist_of_tree"):
        model = fit_ad_hist_of_tree(
            x_train,
            y_train,
            mask.w,
            eps,
            ds.m_bound,
            rng,
            c_approx=float(point.get("c_approx", 1.0)),
            t_offset=int(point.get("t_offset", 0)),
            rho=float(point.get("rho", 0.5)),
            rule=point.get("rule", "max_edge"),
            mechanism=point.get("mechanism", GENERALIZED),
        )
        return model.predict(x_test)
    if method == "hist":
        model = fit_private_histogram(
            x_train, y_train, eps, int(point["t"]), float(point["zeta"]), ds.m_bound, rng
        )
        return model.predict(x_test)
    if method == "krr":
        model = fit_krr(
            x_train, y_train, mask.w, eps, int(point["k"]), ds.label_range, depth, leaf, rng
        )
        return model.predict(x_test)
    if method == "par_dt":
        public = tuple(int(a) for a in np.flatnonzero(mask.column_sums == 0))
        model = fit_par_dt(x_train, y_train, public, eps, ds.label_range, depth, leaf, rng)
        return model.predict(x_test)
    if method == "label_dt":
        model = fit_label_dt(x_train, y_train, eps, ds.label_range, depth, leaf, rng)
        return model.predict(x_test)
    if method == "dt":
        model = fit_cart(x_train, y_train, depth, leaf)
        return model.predict(x_test)
    raise ConfigError(f"unknown method {method!r}")


def split_indices(rng: np.random.Generator, n: int, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint train/test index split covering all n rows."""
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    perm = rng.permutation(n)
    return perm[:n_train], perm[n_train:]


def _run_replication(config: ExperimentConfig, shared: Dataset | None, rep: int) -> list:
    rng_data = np.random.default_rng(np.random.SeedSequence((config.seed, rep, 0)))
    if config.data["kind"] == "synthetic":
        ds = gen_synthetic(int(config.data["n"]), rng_data)
    else:
        ds = shared
    train_idx, test_idx = split_indices(rng_data, ds.n, config.split_fraction)
    n_train = len(train_idx)
    x_train, y_train = ds.x[train_idx], ds.y[train_idx]
    x_test, y_test = ds.x[test_idx], ds.y[test_idx]
    mask = build_mask(config.mask, n_train, ds.d)
    rows = []
    for mi, spec in enumerate(config.methods):
        eps_values = (math.inf,) if spec.method in NONPRIVATE_METHODS else config.eps_list
        for ei, eps in enumerate(eps_values):
            for pi, point in enumerate(spec.grid):
                run_point = dict(point)
                run_point["_rng"] = np.random.default_rng(
                    np.random.SeedSequence((config.seed, rep, 1, mi, ei, pi))
                )
                started = time.perf_counter()
                try:
                    preds = _fit_and_predict(
                        spec.method, run_point, eps, x_train, y_train, mask, ds, x_test
                    )
                    value, err = mse(preds, y_test), ""
                except Exception as ex:  # recorded, never fatal to the sweep
                    value, err = math.nan, f"{type(ex).__name__}: {ex}"
                rows.append(
                    RunRow(
                        method=spec.method,
                        epsilon=eps,
                        params=params_string(point),
                        replication=rep,
                        mse=value,
                        seconds=time.perf_counter() - started,
                        error=err,
                    )
                )
    return rows


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Execute the full sweep; failed fits become rows with an error note."""
    shared = None
    if config.data["kind"] == "csv":
        shared = ingest_csv(
            config.data["path"], config.data["label"], config.data.get("m_policy", "absmax")
        )
        if shared.n < 2:
            raise DataError("need at least two rows to split")
    elif config.data["kind"] != "synthetic":
        raise ConfigError(f"unknown data kind {config.data.get('kind')!r}")
    table = ResultTable()
    if config.threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(_run_replication, config, shared, rep) for rep in range(config.reps)]
            for fut in futures:
                table.rows.extend(fut.result())
    else:
        for rep in range(config.reps):
            table.rows.extend(_run_replication(config, shared, rep))
    table.sort()
    return table


# ---------------------------------------------------------------------------
# default parameter grids (benchmark vocabulary)
# ---------------------------------------------------------------------------


def hist_of_tree_grid(
    p_values=(1, 2, 4, 6),
    t_values=(1, 2, 3),
    rho_values=(0.5,),
    rule="max_edge",
    mechanism=GENERALIZED,
    s_values=None,
):
    grid = []
    for p in p_values:
        for t in t_values:
            for rho in rho_values:
                base = {"p": p, "t": t, "rho": rho, "rule": rule, "mechanism": mechanism}
                if s_values is None:
                    grid.append(base)
                else:
                    grid.extend({**base, "s": s} for s in s_values)
    return tuple(grid)


def ad_hist_of_tree_grid(
    c_values=(0.01, 0.1, 1.0), offsets=(-1, 0, 1), rho=0.5, rule="max_edge", mechanism=GENERALIZED
):
    return tuple(
        {"c_approx": c, "t_offset": off, "rho": rho, "rule": rule, "mechanism": mechanism}
        for c in c_values
        for off in offsets
    )


def hist_grid(t_values=(1, 2, 3, 4), zeta_values=(0.01, 0.05)):
    return tuple({"t": t, "zeta": z} for t in t_values for z in zeta_values)


def tree_grid(depths=(1, 2, 4, 6, 8), leaves=(1, 10, 100)):
    return tuple({"max_depth": d, "min_samples_leaf": m} for d in depths for m in leaves)


def krr_grid(k_values=(2, 3, 4, 5), depths=(1, 2, 4, 6, 8), leaves=(1, 10, 100)):
    return tuple(
        {"k": k, "max_depth": d, "min_samples_leaf": m}
        for k in k_values
        for d in depths
        for m in leaves
    )
