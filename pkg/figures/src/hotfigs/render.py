"""Render the benchmark's tidy CSVs into deterministic SVG figures.

Usage: ``hotfigs <fig-id> <tidy.csv> <out.svg>``

Four panels are supported; each expects exactly the columns its tidy schema
defines and draws the plotted numbers as-is (all statistics come from the
benchmark CLI, never from here).  Output bytes are reproducible: the SVG
hash salt is pinned and no timestamp metadata is embedded.
"""

from __future__ import annotations

import csv
import sys
from collections import OrderedDict

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "hotfigs"

import matplotlib.pyplot as plt

SCHEMAS = {
    "trade-off": ("sstar", "eps", "method", "mse"),
    "consistency": ("n", "sstar", "method", "mse"),
    "parameter": ("t", "p", "mse"),
    "select-s": ("gamma", "label", "mse"),
}

USAGE = f"usage: hotfigs <{'|'.join(sorted(SCHEMAS))}> <in.csv> <out.svg>"


class SchemaError(Exception):
    pass


def read_tidy(fig_id: str, path: str) -> list[dict]:
    try:
        fh = open(path, newline="")
    except OSError as ex:
        raise SchemaError(f"cannot open {path}: {ex}") from ex
    with fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        wanted = SCHEMAS[fig_id]
        missing = sorted(set(wanted) - set(header))
        extra = sorted(set(header) - set(wanted))
        if missing or extra:
            raise SchemaError(
                f"column mismatch for {fig_id!r}: missing {missing or 'none'}, unexpected {extra or 'none'}"
            )
        return list(reader)


def _series(rows: list[dict], key_fields: tuple[str, ...], x_field: str, numeric_x: bool):
    """Group rows into line series keyed by the non-axis columns."""
    series: "OrderedDict[tuple, list]" = OrderedDict()
    for row in rows:
        key = tuple(row[f] for f in key_fields)
        x = float(row[x_field]) if numeric_x else row[x_field]
        series.setdefault(key, []).append((x, float(row["mse"])))
    for pts in series.values():
        pts.sort(key=lambda xy: xy[0])
    return series


def render(fig_id: str, in_path: str, out_path: str) -> None:
    """Draw one panel; raises SchemaError on malformed input."""
    if fig_id not in SCHEMAS:
        raise SchemaError(f"unknown figure id {fig_id!r}; expected one of {sorted(SCHEMAS)}")
    rows = read_tidy(fig_id, in_path)
    fig, ax = plt.subplots(figsize=(4.2, 3.2), dpi=100)

    if fig_id == "trade-off":
        # uneven budget axis: budgets sit at equally spaced category ticks
        eps_values = sorted({float(r["eps"]) for r in rows})
        positions = {e: i for i, e in enumerate(eps_values)}
        for (method, sstar), pts in _series(rows, ("method", "sstar"), "eps", True).items():
            xs = [positions[x] for x, _ in pts]
            ax.plot(xs, [y for _, y in pts], marker="o", label=f"{method} s*={sstar}")
        ax.set_xticks(range(len(eps_values)))
        ax.set_xticklabels([f"{e:g}" for e in eps_values])
        ax.set_xlabel("privacy budget")
        ax.set_yscale("log")
    elif fig_id == "consistency":
        for (method, sstar), pts in _series(rows, ("method", "sstar"), "n", True).items():
            ax.plot([x for x, _ in pts], [y for _, y in pts], marker="o", label=f"{method} s*={sstar}")
        ax.set_xscale("log")
        ax.set_xlabel("sample size")
    elif fig_id == "parameter":
        for (t,), pts in _series(rows, ("t",), "p", True).items():
            ax.plot([x for x, _ in pts], [y for _, y in pts], marker="o", label=f"t={t}")
        ax.set_xlabel("tree depth")
        ax.set_yscale("log")
    else:  # select-s
        for (label,), pts in _series(rows, ("label",), "gamma", True).items():
            ax.plot([x for x, _ in pts], [y for _, y in pts], marker="o", label=label)
        ax.set_xlabel("preference tail exponent")

    ax.set_ylabel("test MSE")
    if rows:
        ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 3:
        print(USAGE, file=sys.stderr)
        return 1
    fig_id, in_path, out_path = argv
    if fig_id not in SCHEMAS:
        print(f"unknown figure id {fig_id!r}\n{USAGE}", file=sys.stderr)
        return 1
    try:
        render(fig_id, in_path, out_path)
    except SchemaError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
