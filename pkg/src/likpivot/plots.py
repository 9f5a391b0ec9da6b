"""Report figures rendered to files (no interactive backend).

Each plotting helper takes the already-computed report dictionaries and
writes one PNG next to the delimited output, so batch runs leave both
machine-readable tables and ready-made figures behind.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy import stats

__all__ = [
    "plot_slope_report",
    "plot_pvalue_ecdf",
    "plot_chi2_qq",
]

_FIG_KW = dict(figsize=(5.2, 3.6), dpi=150)


def plot_slope_report(report: dict, path) -> None:
    """Log-log metric-vs-n plot with the fitted and claimed slopes."""
    ns = np.asarray(report["n_grid"], float)
    metric = np.asarray(report["metric"], float)
    se = np.asarray(report["mc_se"], float)
    fig, ax = plt.subplots(**_FIG_KW)
    ax.errorbar(ns, metric, yerr=2 * se, fmt="o", capsize=3, label="metric")
    if report.get("slope") is not None and np.all(metric > 0):
        coef = np.polyfit(np.log(ns), np.log(metric), 1)
        xs = np.linspace(ns.min(), ns.max(), 50)
        ax.plot(xs, np.exp(np.polyval(coef, np.log(xs))), "-",
                label=f"fit slope {report['slope']:.2f}")
        anchor = metric[0] * (xs / ns[0]) ** report["claim"]
        ax.plot(xs, anchor, "--", color="gray", label=f"claim slope {report['claim']:.2f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("sample size n")
    ax.set_ylabel("metric")
    ax.set_title(report.get("experiment", "slope experiment"))
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_pvalue_ecdf(pvalues, path, title: str = "bootstrap p-values") -> None:
    """Empirical CDF of p-values against the uniform diagonal."""
    p = np.sort(np.asarray(pvalues, float))
    fig, ax = plt.subplots(**_FIG_KW)
    ax.step(p, np.arange(1, p.size + 1) / p.size, where="post", label="empirical")
    ax.plot([0, 1], [0, 1], "--", color="gray", label="uniform")
    ax.set_xlabel("p-value")
    ax.set_ylabel("ECDF")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_chi2_qq(w_values, q: int, factor: float, path) -> None:
    """Chi-square Q-Q plot of W before and after Bartlett correction."""
    w = np.sort(np.asarray(w_values, float))
    m = w.size
    probs = (np.arange(1, m + 1) - 0.5) / m
    quantiles = stats.chi2(df=q).ppf(probs)
    fig, ax = plt.subplots(**_FIG_KW)
    ax.plot(quantiles, w, ",", alpha=0.6, label="uncorrected")
    ax.plot(quantiles, w / factor, ",", alpha=0.6, label="corrected")
    lim = quantiles[-1]
    ax.plot([0, lim], [0, lim], "--", color="gray", lw=1)
    ax.set_xlabel(f"chi-square({q}) quantiles")
    ax.set_ylabel("ordered W")
    ax.set_title("Bartlett correction")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
