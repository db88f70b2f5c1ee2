"""Figure rendering for finished runs.

Reads the delimited outputs a run directory already contains (report.csv,
tradeoff.csv) and renders matplotlib figures next to them. The harness
itself never plots; this module is the only place figures come from.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

__all__ = ["read_csv", "render_report", "render_tradeoff", "render_run"]

_BAR_COLORS = {"latentqp": "#2a6f97", "cwk": "#e07a5f", "ad": "#81b29a"}


def read_csv(path) -> tuple[list[dict], str]:
    """Rows as dicts plus the stamp comment line (config hash + seed)."""
    stamp = ""
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("#"):
            stamp = first[1:].strip()
        else:
            fh.seek(0)
        rows = list(csv.DictReader(fh))
    return rows, stamp


def _maybe_float(s: str) -> float | None:
    return None if s == "NA" else float(s)


def _stamp(fig, stamp: str) -> None:
    if stamp:
        fig.text(0.99, 0.01, stamp, ha="right", va="bottom", fontsize=6, color="0.5")


def render_report(report_csv, out_dir) -> list[str]:
    """Grouped ASR bars and mean-l2 bars per (protocol, budget) panel."""
    rows, stamp = read_csv(report_csv)
    if not rows:
        return []
    panels = sorted({(r["protocol"], r["budget"]) for r in rows})
    methods = sorted({r["method"] for r in rows})
    written = []

    for metric, columns, fname, ylabel in (
            ("asr", ("asr_best", "asr_mean", "asr_worst"), "asr.png", "attack success rate"),
            ("l2", ("l2_best", "l2_mean", "l2_worst"), "energy_l2.png", "mean l2 of successes")):
        fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.4),
                                 squeeze=False, sharey=True)
        for ax, (protocol, budget) in zip(axes[0], panels):
            sub = {r["method"]: r for r in rows
                   if r["protocol"] == protocol and r["budget"] == budget}
            width = 0.8 / max(len(methods), 1)
            for mi, method in enumerate(methods):
                r = sub.get(method)
                if r is None:
                    continue
                vals = [_maybe_float(r[c]) for c in columns]
                xs = [j + mi * width for j in range(len(columns))]
                ax.bar(xs, [0.0 if v is None else v for v in vals], width=width,
                       label=method, color=_BAR_COLORS.get(method))
            ax.set_xticks([j + 0.4 - width / 2 for j in range(len(columns))])
            ax.set_xticklabels([c.split("_")[-1] for c in columns])
            ax.set_title(f"{protocol}, budget {budget}", fontsize=10)
        axes[0][0].set_ylabel(ylabel)
        axes[0][-1].legend(fontsize=8)
        _stamp(fig, stamp)
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def render_tradeoff(tradeoff_csv, out_dir) -> list[str]:
    """ASR vs mean perturbation energy as the loss weight sweeps its grid."""
    rows, stamp = read_csv(tradeoff_csv)
    if not rows:
        return []
    fig, (ax_curve, ax_asr) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    series = sorted({(r["method"], r["K"], r["budget"]) for r in rows})
    for method, k, budget in series:
        pts = [r for r in rows if (r["method"], r["K"], r["budget"]) == (method, k, budget)]
        pts.sort(key=lambda r: float(r["lambda"]))
        lam = [float(r["lambda"]) for r in pts]
        asr = [float(r["asr"]) for r in pts]
        l2 = [_maybe_float(r["mean_l2"]) for r in pts]
        label = f"{method} K={k} ({budget})"
        color = _BAR_COLORS.get(method)
        have = [(a, e) for a, e in zip(asr, l2) if e is not None]
        if have:
            ax_curve.plot([e for _, e in have], [a for a, _ in have], "o-",
                          label=label, color=color)
        ax_asr.plot(lam, asr, "o-", label=label, color=color)
    ax_curve.set_xlabel("mean l2 of successes")
    ax_curve.set_ylabel("attack success rate")
    ax_asr.set_xlabel("loss weight")
    ax_asr.set_ylabel("attack success rate")
    ax_asr.legend(fontsize=8)
    _stamp(fig, stamp)
    fig.tight_layout()
    path = os.path.join(out_dir, "tradeoff.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return [path]


def render_run(run_dir, out_dir=None) -> list[str]:
    """Render every figure the run's delimited outputs support."""
    out_dir = out_dir or run_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []
    report_csv = os.path.join(run_dir, "report.csv")
    if os.path.exists(report_csv):
        written += render_report(report_csv, out_dir)
    tradeoff_csv = os.path.join(run_dir, "tradeoff.csv")
    if os.path.exists(tradeoff_csv):
        written += render_tradeoff(tradeoff_csv, out_dir)
    return written
