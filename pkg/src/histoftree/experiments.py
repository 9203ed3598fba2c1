"""Canned synthetic sweeps: budget trade-off, sample-size consistency,
depth/bin sensitivity, and preference-tail adaptivity.

Each builder runs the experiment protocol and returns aggregate rows (one
per plotted point, medians over replications of the headline grid point),
ready for CSV export and the figure pipeline.
"""

from __future__ import annotations

import csv

import numpy as np

from .harness import (
    ExperimentConfig,
    MethodSpec,
    ResultTable,
    ad_hist_of_tree_grid,
    hist_of_tree_grid,
    run_experiment,
)

TRADE_OFF_COLUMNS = ("sstar", "eps", "method", "mse", "mean_mse", "best_params", "reps")
CONSISTENCY_COLUMNS = ("n", "sstar", "method", "mse", "mean_mse", "best_params", "reps")
PARAMETER_COLUMNS = ("t", "p", "mse", "mean_mse", "reps")
SELECT_S_COLUMNS = ("gamma", "label", "mse", "mean_mse", "best_params", "reps")

FIGURE_COLUMNS = {
    "trade-off": TRADE_OFF_COLUMNS,
    "consistency": CONSISTENCY_COLUMNS,
    "parameter": PARAMETER_COLUMNS,
    "select-s": SELECT_S_COLUMNS,
}

TIDY_COLUMNS = {
    "trade-off": ("sstar", "eps", "method", "mse"),
    "consistency": ("n", "sstar", "method", "mse"),
    "parameter": ("t", "p", "mse"),
    "select-s": ("gamma", "label", "mse"),
}


def _subseed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence((seed,) + tags).generate_state(1)[0])


def write_rows_csv(rows: list[dict], columns: tuple[str, ...], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])


def read_rows_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def _run(methods, eps_list, reps, seed, n, mask, threads=1) -> ResultTable:
    config = ExperimentConfig(
        methods=tuple(methods),
        eps_list=tuple(eps_list),
        reps=reps,
        seed=seed,
        data={"kind": "synthetic", "n": n},
        mask=mask,
        threads=threads,
    )
    return run_experiment(config)


def default_curve_grid():
    """Curves carry a fixed bin count (the captioned t = 2); depth and the
    budget split are tuned per point."""
    return hist_of_tree_grid(p_values=(1, 2, 4, 6), t_values=(2,), rho_values=(0.5, 0.7, 0.9))


def trade_off_rows(
    n: int,
    s_star_list,
    eps_list,
    reps: int,
    seed: int,
    grid=None,
    threads: int = 1,
) -> list[dict]:
    """Median MSE of the headline grid point per (aligned s*, budget)."""
    grid = grid or default_curve_grid()
    rows = []
    for s_star in s_star_list:
        table = _run(
            [MethodSpec("hist_of_tree", grid)],
            eps_list,
            reps,
            _subseed(seed, 1, s_star),
            n,
            {"kind": "aligned", "s_star": int(s_star)},
            threads,
        )
        for (method, eps), (params, mean, median, _) in sorted(table.best_points().items()):
            rows.append(
                {
                    "sstar": int(s_star),
                    "eps": eps,
                    "method": method,
                    "mse": median,
                    "mean_mse": mean,
                    "best_params": params,
                    "reps": reps,
                }
            )
    return rows


def consistency_rows(
    n_list,
    s_star_list,
    eps: float,
    reps: int,
    seed: int,
    grid=None,
    threads: int = 1,
) -> list[dict]:
    """Median MSE versus sample size at a fixed budget."""
    grid = grid or default_curve_grid()
    rows = []
    for n in n_list:
        for s_star in s_star_list:
            table = _run(
                [MethodSpec("hist_of_tree", grid)],
                [eps],
                reps,
                _subseed(seed, 2, int(n), s_star),
                int(n),
                {"kind": "aligned", "s_star": int(s_star)},
                threads,
            )
            for (method, _), (params, mean, median, _) in sorted(table.best_points().items()):
                rows.append(
                    {
                        "n": int(n),
                        "sstar": int(s_star),
                        "method": method,
                        "mse": median,
                        "mean_mse": mean,
                        "best_params": params,
                        "reps": reps,
                    }
                )
    return rows


def parameter_rows(
    n: int,
    eps: float,
    s_star: int,
    t_values,
    p_values,
    reps: int,
    seed: int,
    rho_values=(0.5, 0.7, 0.9),
    threads: int = 1,
) -> list[dict]:
    """Median MSE per (t, p) point, each at its best budget split."""
    grid = hist_of_tree_grid(
        p_values=tuple(p_values), t_values=tuple(t_values), rho_values=tuple(rho_values)
    )
    table = _run(
        [MethodSpec("hist_of_tree", grid)],
        [eps],
        reps,
        _subseed(seed, 3, s_star),
        n,
        {"kind": "aligned", "s_star": int(s_star)},
        threads,
    )
    series = table.point_series()
    rows = []
    for t in t_values:
        for p in p_values:
            medians, means = [], []
            for rho in rho_values:
                point = {"p": p, "t": t, "rho": rho, "rule": "max_edge", "mechanism": "generalized"}
                vals = series[("hist_of_tree", eps, _params_of(point))]
                ok = vals[~np.isnan(vals)]
                medians.append(float(np.median(ok)))
                means.append(float(ok.mean()))
            pick = int(np.argmin(means))
            rows.append(
                {"t": t, "p": p, "mse": medians[pick], "mean_mse": means[pick], "reps": reps}
            )
    rows.sort(key=lambda r: (r["t"], r["p"]))
    return rows


def _params_of(point: dict) -> str:
    from .harness import params_string

    return params_string(point)


def select_s_rows(
    n: int,
    gamma_list,
    eps: float,
    reps: int,
    seed: int,
    s_values=None,
    fixed_grid=None,
    ad_grid=None,
    threads: int = 1,
) -> list[dict]:
    """Fixed-s models versus the data-driven variant across preference tails.

    Each fixed ``s`` is registered as its own method so its headline grid
    point is selected independently; the adaptive rows carry the label
    ``adaptive``.  The fixed curves carry the captioned bin count t = 2
    (with one bin the protected axes collapse and every s draws the same
    model family), depth tuned per point.
    """
    if s_values is None:
        s_values = tuple(range(0, 5))
    fixed_grid = fixed_grid or hist_of_tree_grid(p_values=(1, 2, 4, 6), t_values=(2,))
    ad_grid = ad_grid or ad_hist_of_tree_grid()
    rows = []
    for gamma in gamma_list:
        methods = [
            MethodSpec(f"hist_of_tree_s{s}", tuple({**pt, "s": int(s)} for pt in fixed_grid))
            for s in s_values
        ]
        methods.append(MethodSpec("ad_hist_of_tree", ad_grid))
        table = _run(
            methods,
            [eps],
            reps,
            _subseed(seed, 4, int(float(gamma) * 1000)),
            n,
            {"kind": "gamma", "gamma": float(gamma)},
            threads,
        )
        for (method, _), (params, mean, median, _) in sorted(table.best_points().items()):
            label = "adaptive" if method == "ad_hist_of_tree" else f"s={method.rsplit('_s', 1)[1]}"
            rows.append(
                {
                    "gamma": float(gamma),
                    "label": label,
                    "mse": median,
                    "mean_mse": mean,
                    "best_params": params,
                    "reps": reps,
                }
            )
    return rows


def tidy_rows(fig_id: str, header: list[str], rows: list[dict]) -> list[dict]:
    """Project aggregate (or already-tidy) rows onto the figure schema."""
    if fig_id not in TIDY_COLUMNS:
        raise KeyError(fig_id)
    wanted = TIDY_COLUMNS[fig_id]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise ValueError(f"input is missing columns {missing} for figure {fig_id!r}")
    return [{c: row[c] for c in wanted} for row in rows]
