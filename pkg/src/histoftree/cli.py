"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal failure
(including a failed privacy audit).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, DomainError
from .estimators import HistOfTreeModel, PrivacyBudget, fit_aligned_hist_of_tree, fit_personalized_hist_of_tree, select_parameters
from .experiments import (
    FIGURE_COLUMNS,
    TIDY_COLUMNS,
    consistency_rows,
    parameter_rows,
    read_rows_csv,
    select_s_rows,
    tidy_rows,
    trade_off_rows,
    write_rows_csv,
)
from .harness import (
    ExperimentConfig,
    MethodSpec,
    ad_hist_of_tree_grid,
    build_mask,
    default_sensitive_count,
    gen_mask_realdata,
    hist_grid,
    hist_of_tree_grid,
    ingest_csv,
    krr_grid,
    run_experiment,
    tree_grid,
)
from .mechanisms import GENERALIZED, PAIRED, audit_privacy_ratio

FIG_IDS = ("trade-off", "consistency", "parameter", "select-s")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the contract wants 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v != "")
    except ValueError:
        raise _UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v != "")
    except ValueError:
        raise _UsageError(f"expected a comma-separated list of integers, got {text!r}") from None


def _default_threads() -> int:
    env = os.environ.get("HISTOFTREE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def build_parser() -> _Parser:
    parser = _Parser(prog="histoftree", description="Locally private regression benchmark CLI")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[], help="run one of the synthetic experiment grids")
    sim.add_argument("--fig", choices=FIG_IDS, required=True, help="which experiment to run")
    sim.add_argument("--n", type=int, default=10000, help="sample size (per replication)")
    sim.add_argument("--n-list", type=_ints, default=None, help="sample sizes for the consistency sweep")
    sim.add_argument("--eps", type=_floats, default=None, help="comma-separated privacy budgets")
    sim.add_argument("--sstar", type=_ints, default=None, help="aligned protected-feature counts")
    sim.add_argument("--gamma", type=_floats, default=None, help="preference-tail exponents")
    sim.add_argument("--s-list", type=_ints, default=None, help="fixed s values for select-s")
    sim.add_argument("--t-list", type=_ints, default=(1, 2, 3), help="bin counts for the parameter sweep")
    sim.add_argument("--p-list", type=_ints, default=tuple(range(1, 9)), help="depths for the parameter sweep")
    sim.add_argument("--reps", type=int, default=50, help="replications per grid point")
    sim.add_argument("--seed", type=int, default=0, help="experiment seed")
    sim.add_argument("--threads", type=int, default=_default_threads(), help="parallel replications")
    sim.add_argument("--out", required=True, help="aggregate CSV to write")
    sim.set_defaults(func=_cmd_simulate)

    bench = sub.add_parser("bench", help="run every method's grid on a CSV dataset")
    bench.add_argument("--config", default=None, help="declarative experiment config (JSON); overrides the other flags")
    bench.add_argument("--csv", default=None, help="dataset path (header + numeric columns)")
    bench.add_argument("--label-col", default=None, help="name of the label column")
    bench.add_argument("--mask-mode", choices=("aligned", "personalized"), default="aligned")
    bench.add_argument("--sstar", type=int, default=None, help="protected-feature count (aligned mode)")
    bench.add_argument("--eps", type=_floats, default=(1.0, 2.0, 4.0), help="privacy budgets")
    bench.add_argument("--reps", type=int, default=50, help="replications")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--threads", type=int, default=_default_threads())
    bench.add_argument("--quick", action="store_true", help="use reduced parameter grids")
    bench.add_argument("--out", required=True, help="output prefix (writes <out>_results.csv and <out>_aggregate.json)")
    bench.set_defaults(func=_cmd_bench)

    sel = sub.add_parser("select-params", help="data-driven choice of (s, p, t)")
    sel.add_argument("--n", type=int, required=True)
    sel.add_argument("--d", type=int, required=True)
    sel.add_argument("--eps", type=float, required=True)
    sel.add_argument("--gamma", type=float, default=None, help="preference-tail exponent mask")
    sel.add_argument("--sstar", type=int, default=None, help="aligned mask")
    sel.add_argument("--mask-csv", default=None, help="explicit 0/1 mask matrix, no header")
    sel.add_argument("--c-approx", type=float, default=1.0, help="approximation-term constant")
    sel.set_defaults(func=_cmd_select_params)

    audit = sub.add_parser("audit", help="exhaustive privacy-ratio check of a mechanism")
    audit.add_argument("--mechanism", choices=("paired-rr", "generalized-rr"), required=True)
    audit.add_argument("--eps", type=float, required=True, help="total per-user budget")
    audit.add_argument("--support-size", type=int, default=4, help="indicator cells to enumerate")
    audit.set_defaults(func=_cmd_audit)

    fit_p = sub.add_parser("fit", help="fit one model on a CSV dataset and save it")
    fit_p.add_argument("--csv", required=True)
    fit_p.add_argument("--label-col", required=True)
    fit_p.add_argument("--eps", type=float, required=True)
    fit_p.add_argument("--rho", type=float, default=0.5)
    fit_p.add_argument("--s", type=int, required=True, help="protected-feature count")
    fit_p.add_argument("--p", type=int, required=True, help="tree depth")
    fit_p.add_argument("--t", type=int, required=True, help="histogram bins per axis")
    fit_p.add_argument("--rule", choices=("max_edge", "cart", "random"), default="max_edge")
    fit_p.add_argument("--mechanism", choices=(PAIRED, GENERALIZED), default=GENERALIZED)
    fit_p.add_argument("--mask-mode", choices=("aligned", "personalized"), default="aligned")
    fit_p.add_argument("--seed", type=int, default=0)
    fit_p.add_argument("--out", required=True, help="model JSON path")
    fit_p.set_defaults(func=_cmd_fit)

    pred = sub.add_parser("predict", help="evaluate a saved model on feature rows")
    pred.add_argument("--model", required=True, help="model JSON path")
    pred.add_argument("--csv", required=True, help="feature rows, already scaled to [0,1]")
    pred.add_argument("--label-col", default=None, help="column to ignore if present")
    pred.add_argument("--out", required=True, help="prediction CSV to write")
    pred.set_defaults(func=_cmd_predict)

    figs = sub.add_parser("figures-data", help="reshape an aggregate CSV into a tidy figure CSV")
    figs.add_argument("--in", dest="in_path", required=True)
    figs.add_argument("--fig-id", choices=FIG_IDS, required=True)
    figs.add_argument("--out", required=True)
    figs.set_defaults(func=_cmd_figures_data)
    return parser


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    if args.reps < 1:
        raise _UsageError("--reps must be at least 1")
    if args.sstar is not None and args.gamma is not None:
        raise _UsageError("--sstar and --gamma are mutually exclusive mask choices")
    common = dict(reps=args.reps, seed=args.seed, threads=args.threads)
    if args.fig == "trade-off":
        rows = trade_off_rows(
            n=args.n,
            s_star_list=args.sstar or (1, 2, 3, 4),
            eps_list=args.eps or (1.0, 2.0, 4.0, 8.0),
            **common,
        )
    elif args.fig == "consistency":
        rows = consistency_rows(
            n_list=args.n_list or (1000, 4000, 16000),
            s_star_list=args.sstar or (1, 2),
            eps=(args.eps or (4.0,))[0],
            **common,
        )
    elif args.fig == "parameter":
        if args.gamma is not None:
            raise _UsageError("--gamma does not apply to the parameter sweep")
        rows = parameter_rows(
            n=args.n,
            eps=(args.eps or (4.0,))[0],
            s_star=(args.sstar or (2,))[0],
            t_values=args.t_list,
            p_values=args.p_list,
            **common,
        )
    else:
        if args.sstar is not None:
            raise _UsageError("select-s uses --gamma masks, not --sstar")
        rows = select_s_rows(
            n=args.n,
            gamma_list=args.gamma or (0.5, 1.0, 2.0),
            eps=(args.eps or (4.0,))[0],
            s_values=args.s_list,
            **common,
        )
    write_rows_csv(rows, FIGURE_COLUMNS[args.fig], args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def bench_methods(d: int, mask_mode: str, quick: bool = False) -> tuple[MethodSpec, ...]:
    """The benchmark's method grids (reduced when ``quick``)."""
    if quick:
        p_values, t_values, rho_values = (2, 4), (1, 2), (0.5,)
        c_values, offsets = (0.1, 1.0), (0,)
        depths, leaves, k_values = (2, 4), (1, 10), (2, 4)
        hist_t, zetas = (1, 2), (0.01,)
    else:
        p_values, t_values, rho_values = (1, 2, 4, 6), (1, 2, 3), (0.5, 0.7, 0.9)
        c_values, offsets = (0.01, 0.1, 1.0), (-1, 0, 1)
        depths, leaves, k_values = (1, 2, 4, 6, 8), (1, 10, 100), (2, 3, 4, 5)
        hist_t, zetas = (1, 2, 3, 4), (0.01, 0.05)
    s_values = None
    if mask_mode == "personalized":
        s_values = tuple(range(1, min(4, d)))
    specs = []
    for rule in ("max_edge", "cart"):
        specs.append(
            MethodSpec(
                f"hist_of_tree_{'me' if rule == 'max_edge' else 'cart'}",
                hist_of_tree_grid(p_values, t_values, rho_values, rule=rule, s_values=s_values),
            )
        )
        specs.append(
            MethodSpec(
                f"ad_hist_of_tree_{'me' if rule == 'max_edge' else 'cart'}",
                ad_hist_of_tree_grid(c_values, offsets, rule=rule),
            )
        )
    specs.append(MethodSpec("hist", hist_grid(hist_t, zetas)))
    specs.append(MethodSpec("krr", krr_grid(k_values, depths, leaves)))
    specs.append(MethodSpec("par_dt", tree_grid(depths, leaves)))
    specs.append(MethodSpec("label_dt", tree_grid(depths, leaves)))
    specs.append(MethodSpec("dt", tree_grid(depths, leaves)))
    return tuple(specs)


def _cmd_bench(args) -> int:
    if args.config is not None:
        config = ExperimentConfig.from_json_file(args.config)
    else:
        if args.csv is None or args.label_col is None:
            raise _UsageError("either --config or both --csv and --label-col are required")
        if args.reps < 1:
            raise _UsageError("--reps must be at least 1")
        ds = ingest_csv(args.csv, args.label_col)
        if args.mask_mode == "aligned":
            s_star = args.sstar if args.sstar is not None else default_sensitive_count(ds.d)
            if not 0 <= s_star <= ds.d:
                raise _UsageError(f"--sstar must lie in [0, {ds.d}]")
            mask = {"kind": "aligned", "s_star": s_star}
        else:
            mask = {"kind": "realdata"}
        config = ExperimentConfig(
            methods=bench_methods(ds.d, args.mask_mode, args.quick),
            eps_list=args.eps,
            reps=args.reps,
            seed=args.seed,
            data={"kind": "csv", "path": args.csv, "label": args.label_col},
            mask=mask,
            threads=args.threads,
        )
    table = run_experiment(config)
    results_path = f"{args.out}_results.csv"
    aggregate_path = f"{args.out}_aggregate.json"
    table.to_csv(results_path)
    with open(aggregate_path, "w") as fh:
        json.dump(table.aggregate(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {results_path} and {aggregate_path}")
    return 0


def _cmd_select_params(args) -> int:
    chosen = [v is not None for v in (args.gamma, args.sstar, args.mask_csv)]
    if sum(chosen) != 1:
        raise _UsageError("give exactly one of --gamma, --sstar, --mask-csv")
    if args.gamma is not None:
        mask = build_mask({"kind": "gamma", "gamma": args.gamma}, args.n, args.d)
    elif args.sstar is not None:
        mask = build_mask({"kind": "aligned", "s_star": args.sstar}, args.n, args.d)
    else:
        try:
            w = np.loadtxt(args.mask_csv, delimiter=",", dtype=np.int64, ndmin=2)
        except OSError as ex:
            raise DataError(f"cannot open {args.mask_csv}: {ex}") from ex
        except ValueError as ex:
            raise DataError(f"mask file is not a numeric 0/1 matrix: {ex}") from ex
        from .mechanisms import MaskMatrix

        mask = MaskMatrix(w)
    sel = select_parameters(mask.w, args.n, args.d, args.eps, c_approx=args.c_approx)
    print(
        json.dumps(
            {"s": sel.s, "p": sel.p, "t": sel.t, "tail_exponent": sel.tail_exponent, "objective": sel.objective}
        )
    )
    return 0


def _cmd_audit(args) -> int:
    if args.eps <= 0:
        raise _UsageError("--eps must be positive")
    if args.support_size < 2:
        raise _UsageError("--support-size must be at least 2")
    mech = PAIRED if args.mechanism == "paired-rr" else GENERALIZED
    report = audit_privacy_ratio(mech, args.eps, n_cells=args.support_size)
    print(f"mechanism:            {args.mechanism} over {args.support_size} cells ({report.atoms} atoms)")
    print(f"indicator max ratio:  {report.max_ratio:.12f}")
    print(f"indicator bound:      {report.indicator_bound:.12f}  (exp(eps/2))")
    print(f"label channel bound:  {report.label_bound:.12f}  (analytic)")
    print(f"combined ratio:       {report.combined_ratio:.12f} <= exp(eps) = {report.total_bound:.12f}")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 3


def _cmd_fit(args) -> int:
    ds = ingest_csv(args.csv, args.label_col)
    if not 0 <= args.s < ds.d:
        raise _UsageError(f"--s must lie in [0, {ds.d - 1}]")
    budget = PrivacyBudget(args.eps, args.rho)
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 0)))
    if args.mask_mode == "aligned":
        model = fit_aligned_hist_of_tree(
            ds.x, ds.y, tuple(range(args.s)), args.p, args.t, budget, ds.m_bound, rng,
            rule=args.rule, mechanism=args.mechanism,
        )
    else:
        mask = gen_mask_realdata(ds.n, ds.d)
        model = fit_personalized_hist_of_tree(
            ds.x, ds.y, mask.w, args.s, args.p, args.t, budget, ds.m_bound, rng,
            rule=args.rule, mechanism=args.mechanism,
        )
    model.seed = args.seed
    model.save(args.out)
    print(f"wrote model with {model.pp.grid_count} grids to {args.out}")
    return 0


def _cmd_predict(args) -> int:
    model = HistOfTreeModel.load(args.model)
    import csv as _csv

    try:
        fh = open(args.csv, newline="")
    except OSError as ex:
        raise DataError(f"cannot open {args.csv}: {ex}") from ex
    with fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{args.csv} is empty")
        drop = None
        if args.label_col is not None and args.label_col in header:
            drop = header.index(args.label_col)
        rows = []
        for r, row in enumerate(reader, start=2):
            cells = [c for i, c in enumerate(row) if i != drop]
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise DataError(f"non-numeric value at row {r} of {args.csv}") from None
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.pp.d:
        raise DataError(f"model expects {model.pp.d} features, file has {x.shape[1] if x.ndim == 2 else '?'}")
    preds = model.predict(x)
    with open(args.out, "w", newline="") as out:
        writer = _csv.writer(out, lineterminator="\n")
        writer.writerow(["prediction"])
        for v in preds:
            writer.writerow([repr(float(v))])
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def _cmd_figures_data(args) -> int:
    try:
        header, rows = read_rows_csv(args.in_path)
    except OSError as ex:
        raise DataError(f"cannot open {args.in_path}: {ex}") from ex
    try:
        projected = tidy_rows(args.fig_id, header, rows)
    except ValueError as ex:
        raise DataError(str(ex)) from ex
    write_rows_csv(projected, TIDY_COLUMNS[args.fig_id], args.out)
    print(f"wrote {len(projected)} tidy rows to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as ex:  # raised by list-parsing argument types
        print(f"error: {ex}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _UsageError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1
    except ConfigError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1
    except (DataError, DomainError) as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 2
    except Exception as ex:  # pragma: no cover - safety net
        print(f"internal error: {type(ex).__name__}: {ex}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
