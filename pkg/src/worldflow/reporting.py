"""Rendering of run outputs: metric tables and matplotlib figures.

The report path works entirely from the files a run wrote (summary.json and
the CSV tables), so it can be pointed at any past run directory.  Figures
are rendered to PNG next to the tables; the backend is forced to Agg so
reports work in headless environments.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["metric_table", "render_report", "load_summary"]


def load_summary(rundir) -> dict:
    path = Path(rundir) / "summary.json"
    if not path.is_file():
        raise FileNotFoundError(f"no summary.json in {rundir}; run a scenario there first")
    with open(path) as fh:
        return json.load(fh)


def metric_table(summary: dict) -> str:
    """Fixed-width table of every metric, threshold, and verdict."""
    rows = [("metric", "value", "threshold", "verdict")]
    for m in summary["metrics"]:
        if m["threshold"] is None:
            thr, verdict = "-", "info"
        else:
            cmp = "<=" if m.get("mode", "max") == "max" else ">="
            thr = f"{cmp} {m['threshold']:.3g}"
            verdict = "pass" if m["passed"] else "FAIL"
        rows.append((m["name"], f"{m['value']:.6g}", thr, verdict))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for i, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    status = "PASS" if summary["passed"] else "FAIL"
    lines.append("")
    lines.append(
        f"scenario {summary['scenario']}: {status} "
        f"(seed {summary['seed']}, {summary['runtime_s']:.2f} s)"
    )
    for note in summary.get("notes", []):
        lines.append(f"note: {note}")
    return "\n".join(lines)


def _read_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    cols = {}
    for i, name in enumerate(header):
        vals = [row[i] for row in rows]
        try:
            cols[name] = np.asarray([float(v) for v in vals])
        except ValueError:
            cols[name] = np.asarray(vals)
    return cols


def _save(fig, rundir: Path, name: str, written: list) -> None:
    path = rundir / name
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    written.append(path)


def _fig_conservation(cols, rundir, written):
    t = cols["time"]
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax0.plot(t, np.abs(cols["norm"] - cols["norm"][0]) / cols["norm"][0], label="norm")
    ax0.plot(t, np.abs(cols["mu_total"] - cols["mu_total"][0]) / cols["mu_total"][0], label="mu")
    ax0.set_yscale("symlog", linthresh=1e-16)
    ax0.set_xlabel("t")
    ax0.set_ylabel("relative drift")
    ax0.legend()
    ax1.plot(t, cols["energy"])
    ax1.set_xlabel("t")
    ax1.set_ylabel("energy")
    fig.suptitle("conservation")
    _save(fig, rundir, "conservation.png", written)


def _fig_trajectories(cols, rundir, written):
    ids = cols["world_id"].astype(int)
    t = cols["time"]
    fig, ax = plt.subplots(figsize=(6, 4))
    if "q1" in cols:
        for wid in np.unique(ids):
            sel = ids == wid
            ax.plot(cols["q0"][sel], cols["q1"][sel], lw=0.6)
        ax.set_xlabel("q0")
        ax.set_ylabel("q1")
    else:
        for wid in np.unique(ids):
            sel = ids == wid
            ax.plot(t[sel], cols["q0"][sel], lw=0.6, color="tab:blue", alpha=0.5)
        ax.set_xlabel("t")
        ax.set_ylabel("q")
    ax.set_title("world trajectories")
    _save(fig, rundir, "trajectories.png", written)


def _fig_equivariance(cols, rundir, written):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(cols["q0"], cols["rho_field"], label="field density", lw=1.5)
    ax.plot(cols["q0"], cols["rho_pushforward"], "--", label="transported density", lw=1.2)
    ax.set_xlabel("q")
    ax.set_ylabel("density")
    ax.legend()
    ax.set_title("density transport vs field")
    _save(fig, rundir, "equivariance.png", written)


def _fig_measures(cols, rundir, written):
    t = cols["time"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, vals in cols.items():
        if name.startswith("p_"):
            ax.plot(t, vals, label=name)
    for name, vals in cols.items():
        if name.startswith("flux_"):
            ax.plot(t, vals, ":", label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("probability / flux")
    ax.legend(fontsize=8)
    ax.set_title("region measures")
    _save(fig, rundir, "measures.png", written)


def _fig_probabilities(cols, rundir, written):
    x = np.arange(len(cols["outcome"]))
    width = 0.35
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - width / 2, cols["p_worlds"], width, label="world fraction")
    ax.bar(x + width / 2, cols["p_born"], width, label="band mass")
    ax.set_xticks(x, [f"{v:g}" for v in cols["outcome"]])
    ax.set_xlabel("outcome")
    ax.set_ylabel("probability")
    ax.legend()
    ax.set_title("outcome statistics")
    _save(fig, rundir, "outcome_probabilities.png", written)


def _fig_collapse(cols, rundir, written):
    fig, ax = plt.subplots(figsize=(6, 4))
    dist = np.maximum(cols["distance"], 1e-18)
    ax.semilogy(cols["time"], dist)
    ax.set_xlabel("t")
    ax.set_ylabel("|q_full - q_collapsed|")
    ax.set_title("full vs collapsed guidance")
    _save(fig, rundir, "collapse.png", written)


def _fig_convergence(cols, rundir, written):
    ks = cols["k"]
    errs = cols["error"]
    uniq = np.unique(ks)
    means = np.asarray([errs[ks == k].mean() for k in uniq])
    slope, intercept = np.polyfit(np.log10(uniq), np.log10(means), 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(ks, errs, ".", alpha=0.4, label="per seed")
    ax.loglog(uniq, means, "o-", label="mean")
    ax.loglog(uniq, 10**intercept * uniq**slope, "--", label=f"fit slope {slope:.3f}")
    ax.set_xlabel("ensemble size K")
    ax.set_ylabel("outcome frequency error")
    ax.legend()
    ax.set_title("finite-ensemble convergence")
    _save(fig, rundir, "miw_convergence.png", written)


def _fig_toy_density(cols, rundir, written):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(cols["y"], cols["expected"], label="closed form", lw=1.5)
    ax.plot(cols["y"], cols["density"], "--", label="lattice transport", lw=1.2)
    ax.set_xlabel("y")
    ax.set_ylabel("induced density")
    ax.legend()
    ax.set_title("pushforward density, monotone map")
    _save(fig, rundir, "toy_density.png", written)


_FIGURES = {
    "norms.csv": _fig_conservation,
    "trajectories.csv": _fig_trajectories,
    "equivariance.csv": _fig_equivariance,
    "measures.csv": _fig_measures,
    "probabilities.csv": _fig_probabilities,
    "collapse.csv": _fig_collapse,
    "convergence.csv": _fig_convergence,
    "induced_density.csv": _fig_toy_density,
}


def render_report(rundir) -> tuple[str, list]:
    """Render the metric table and every figure the run's CSVs support.

    Returns the table text and the list of files written (figures plus
    report.txt).  Missing CSVs are skipped: a scenario only produces the
    tables its analyses declare.
    """
    rundir = Path(rundir)
    summary = load_summary(rundir)
    table = metric_table(summary)
    written: list = []
    for fname, renderer in _FIGURES.items():
        path = rundir / fname
        if path.is_file():
            renderer(_read_csv(path), rundir, written)
    report_path = rundir / "report.txt"
    with open(report_path, "w") as fh:
        fh.write(table + "\n")
    written.append(report_path)
    return table, written
