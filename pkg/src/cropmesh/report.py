"""Figures and aggregate tables written next to run and sweep outputs."""

from __future__ import annotations

import csv
import statistics
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

QUANTILES = (10, 50, 90)
# keep PNG bytes stable between identical runs
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def _cdf(ax, values, label):
    v = np.sort(np.asarray(values, float))
    if len(v) == 0:
        return
    ax.step(v, np.arange(1, len(v) + 1) / len(v), where="post", label=label)


def plot_run(report, run_dir, title: str = "") -> list[Path]:
    """Normalized real-time throughput CDF and delivered rate per epoch."""
    run_dir = Path(run_dir)
    out = []
    fig, ax = plt.subplots(figsize=(5, 3.5))
    _cdf(ax, report.realtime_normalized(), "real-time flows")
    ax.set_xlabel("throughput / demand")
    ax.set_ylabel("fraction of flows")
    ax.set_xlim(0, 1.05)
    ax.set_title(title)
    out.append(_save(fig, run_dir / "normalized_cdf.png"))

    per_epoch: dict = {}
    kinds = report.kinds
    for fid, epoch, _, delivered in report.rows:
        per_epoch.setdefault(kinds[fid], {}).setdefault(epoch, 0.0)
        per_epoch[kinds[fid]][epoch] += delivered
    fig, ax = plt.subplots(figsize=(6, 3.5))
    horizon = max((e for _, e, _, _ in report.rows), default=0) + 1
    epochs = np.arange(horizon)
    series = [(k, np.array([per_epoch[k].get(e, 0.0) for e in epochs])) for k in sorted(per_epoch)]
    if series:
        ax.stackplot(epochs, *[s for _, s in series], labels=[k for k, _ in series])
        ax.legend(loc="upper right")
    ax.set_xlabel("epoch")
    ax.set_ylabel("delivered Mbps")
    ax.set_title(title)
    out.append(_save(fig, run_dir / "delivered.png"))
    return out


SWEEP_FIELDS = ["row", "policy", "seed", "total_mb", "realtime_mb", "collection_mb",
                "normalized_mean"] + [f"normalized_p{q}" for q in QUANTILES] + ["mean_wait_epochs", "violations"]


def sweep_rows(results) -> list[dict]:
    """One row per run plus one median row per policy, in input order."""
    rows = []
    by_policy: dict = {}
    for policy, seed, summary in results:
        q = summary["realtime_normalized_quantiles"]
        row = {
            "row": "run", "policy": policy, "seed": seed,
            "total_mb": summary["total_mb"],
            "realtime_mb": summary["totals_mb"].get("realtime", 0.0),
            "collection_mb": summary["totals_mb"].get("collection", 0.0),
            "normalized_mean": summary["realtime_normalized_mean"],
            **{f"normalized_p{p}": q[f"p{p}"] for p in QUANTILES},
            "mean_wait_epochs": summary["mean_wait_epochs"],
            "violations": len(summary["violations"]),
        }
        rows.append(row)
        by_policy.setdefault(policy, []).append(row)
    for policy, runs in by_policy.items():
        med = {"row": "median", "policy": policy, "seed": ""}
        for k in SWEEP_FIELDS[3:]:
            med[k] = statistics.median(r[k] for r in runs)
        rows.append(med)
    return rows


def write_sweep_csv(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def plot_sweep(rows, normalized: dict, out_dir) -> list[Path]:
    """Median total data per policy and pooled normalized-throughput CDFs."""
    out_dir = Path(out_dir)
    med = [r for r in rows if r["row"] == "median"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([r["policy"] for r in med], [r["total_mb"] / 1000 for r in med])
    ax.set_ylabel("median total data (GB)")
    ax.tick_params(axis="x", rotation=30)
    paths = [_save(fig, out_dir / "total_data.png")]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for policy, values in normalized.items():
        _cdf(ax, values, policy)
    ax.set_xlabel("throughput / demand")
    ax.set_ylabel("fraction of flows")
    ax.set_xlim(0, 1.05)
    ax.legend(loc="upper left")
    paths.append(_save(fig, out_dir / "normalized_cdf.png"))
    return paths
