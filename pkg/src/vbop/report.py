"""Figure rendering and cross-run comparison for recorded artifacts.

The pipeline commands emit plot-ready delimited files; this module turns a
run directory of those files into PNG figures and one combined report table.
When several evaluation summaries exist under one run (for example the
variational model and its deterministic baseline), their error numbers are
emitted side by side in `comparison.csv` and a bar chart.
"""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_DPI = 130


def _load_table(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _col(header, data, name):
    return data[:, header.index(name)]


def render_trace(trace_csv, out_png) -> None:
    header, data = _load_table(trace_csv)
    epochs = _col(header, data, "epoch")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(epochs, _col(header, data, "total_loss"), lw=1.2, color="tab:blue")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("total loss")
    ax2.plot(epochs, _col(header, data, "kl"), lw=1.0, label="complexity")
    ax2.plot(epochs, _col(header, data, "nll"), lw=1.0, label="likelihood")
    ax2.set_xlabel("epoch")
    ax2.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_png, dpi=FIG_DPI)
    plt.close(fig)


def render_realization(csv_path, out_png) -> None:
    header, data = _load_table(csv_path)
    y = _col(header, data, "y_1")
    order = np.argsort(y)
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.fill_between(y[order], _col(header, data, "ci_lo")[order],
                    _col(header, data, "ci_hi")[order],
                    alpha=0.3, color="tab:blue", label="interval")
    ax.plot(y[order], _col(header, data, "mean")[order], color="tab:blue",
            lw=1.3, label="predictive mean")
    if "truth" in header:
        ax.plot(y[order], _col(header, data, "truth")[order], "k--", lw=1.0,
                label="ground truth")
    ax.set_xlabel("query location")
    ax.set_ylabel("target")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=FIG_DPI)
    plt.close(fig)


def render_field_grids(eval_dir, out_png) -> None:
    eval_dir = Path(eval_dir)
    names = ["field_mean.csv", "field_abs_error.csv", "field_std.csv"]
    titles = ["predictive mean", "absolute error", "std deviation"]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    for ax, name, title in zip(axes, names, titles):
        table = np.loadtxt(eval_dir / name, delimiter=",", ndmin=2)
        im = ax.imshow(table.T, origin="lower", aspect="auto",
                       extent=(0, 1, 0, 1), cmap="viridis")
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("x")
        ax.set_ylabel("t")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_png, dpi=FIG_DPI)
    plt.close(fig)


def render_pdf(pdf_csv, out_png, truth_csv=None) -> None:
    header, data = _load_table(pdf_csv)
    support = _col(header, data, "support")
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.fill_between(support, _col(header, data, "band_lo"),
                    _col(header, data, "band_hi"), alpha=0.3,
                    color="tab:blue", label="band")
    ax.plot(support, _col(header, data, "mean_density"), color="tab:blue",
            lw=1.3, label="mean density")
    if truth_csv is not None and Path(truth_csv).exists():
        th, td = _load_table(truth_csv)
        ax.plot(_col(th, td, "support"), _col(th, td, "density"), "k--",
                lw=1.0, label="ground truth")
    ax.set_xlabel("target value")
    ax.set_ylabel("density")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=FIG_DPI)
    plt.close(fig)


def read_summary(path) -> dict:
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            out[row["metric"]] = float(row["value"])
    return out


def collect_summaries(run_dir) -> dict:
    """All evaluation summaries under a run, keyed by their directory label."""
    run_dir = Path(run_dir)
    found = {}
    for path in sorted(run_dir.rglob("summary.csv")):
        label = path.parent.relative_to(run_dir).as_posix()
        found[label if label != "." else "run"] = read_summary(path)
    return found


def write_comparison(summaries: dict, out_csv) -> None:
    """One row per evaluated model, metrics side by side."""
    metrics = sorted({k for s in summaries.values() for k in s})
    with open(out_csv, "w") as fh:
        fh.write("label," + ",".join(metrics) + "\n")
        for label in sorted(summaries):
            vals = [repr(summaries[label][m]) if m in summaries[label] else ""
                    for m in metrics]
            fh.write(label + "," + ",".join(vals) + "\n")


def render_comparison(summaries: dict, out_png) -> None:
    labels = sorted(summaries)
    values = [summaries[l].get("nmse", np.nan) for l in labels]
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.bar(labels, values, color="tab:blue", width=0.5)
    ax.set_ylabel("NMSE")
    ax.set_yscale("log")
    for tick in ax.get_xticklabels():
        tick.set_rotation(20)
    fig.tight_layout()
    fig.savefig(out_png, dpi=FIG_DPI)
    plt.close(fig)


def generate_report(run_dir, out_dir=None) -> list:
    """Render every known artifact under `run_dir` to PNG figures.

    Returns the list of written paths. Figures land in `<out_dir>/figures`,
    the combined table in `<out_dir>/comparison.csv`.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def slug(path):
        rel = path.relative_to(run_dir).as_posix()
        return rel.replace("/", "_").rsplit(".", 1)[0]

    for trace in sorted(run_dir.rglob("trace.csv")):
        target = fig_dir / f"{slug(trace)}.png"
        render_trace(trace, target)
        written.append(target)
    for real in sorted(run_dir.rglob("realization_*.csv")):
        target = fig_dir / f"{slug(real)}.png"
        render_realization(real, target)
        written.append(target)
    for mean_grid in sorted(run_dir.rglob("field_mean.csv")):
        target = fig_dir / f"{slug(mean_grid.parent / 'fields')}.png"
        render_field_grids(mean_grid.parent, target)
        written.append(target)
    for pdf in sorted(run_dir.rglob("pdf_*.csv")):
        if pdf.name.endswith("_truth.csv"):
            continue
        truth = pdf.with_name(pdf.stem + "_truth.csv")
        target = fig_dir / f"{slug(pdf)}.png"
        render_pdf(pdf, target, truth_csv=truth)
        written.append(target)

    summaries = collect_summaries(run_dir)
    if summaries:
        table = out_dir / "comparison.csv"
        write_comparison(summaries, table)
        written.append(table)
        target = fig_dir / "comparison.png"
        render_comparison(summaries, target)
        written.append(target)
    return written
