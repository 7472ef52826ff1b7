"""Command-line entry point: ``cropmesh fit|run|sweep|oracle-gap``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .baselines import PolicyId, make_planner, parse_policy
from .config import ConfigError, RunConfig
from .mesh import TopologyError
from .propagation import FIXTURE_TRACE, FitError, Mode, ThroughputModel, fit_trace, fixture_model, read_trace
from .sim import Simulator
from .workload import WorkloadError, generate_scenario1, generate_scenario2, load_workload

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("cropmesh")

# (mode, distance or None for cutoff, expected, description)
ANCHORS = (
    (Mode.AC5, 80.0, 100.0, "AC5 at 80 m, Mbps"),
    (Mode.UC24, 80.0, 7.5, "UC24 at 80 m, Mbps"),
    (Mode.UC5, None, 40.0, "UC5 cutoff, m"),
)


def _out_root(arg, cfg_out=None) -> Path:
    return Path(arg or cfg_out or os.environ.get("CROPMESH_OUT") or "runs")


def _parse_seeds(text) -> list[int]:
    seeds = []
    for part in (text or "").split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


# -- fit --------------------------------------------------------------------

def anchor_residuals(model: ThroughputModel) -> list[dict]:
    rows = []
    for mode, d, want, what in ANCHORS:
        if mode not in model:
            continue
        got = model.cutoff(mode) if d is None else float(model.throughput(mode, d))
        rows.append({"anchor": what, "expected": want, "fitted": got, "relative_error": (got - want) / want})
    if Mode.AC24 in model and Mode.AC5 in model:
        want = float(model.throughput(Mode.AC5, 100.0)) / 2.5
        got = float(model.throughput(Mode.AC24, 100.0))
        rows.append({"anchor": "AC24 at 100 m vs AC5/2.5, Mbps", "expected": want, "fitted": got,
                     "relative_error": (got - want) / want})
    return rows


def cmd_fit(args) -> int:
    trace = Path(args.trace) if args.trace else FIXTURE_TRACE
    points = read_trace(trace)
    model = fit_trace(trace)
    for mode in Mode:
        if mode not in points:
            log.warning("trace has no %s points; runs needing %s will be rejected", mode.value, mode.value)
    out_dir = _out_root(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "models.json"
    path.write_text(json.dumps(model.to_json(), indent=2, sort_keys=True) + "\n")
    for row in anchor_residuals(model):
        print(f"{row['anchor']:<32} expected {row['expected']:8.2f}  fitted {row['fitted']:8.2f}  "
              f"({100 * row['relative_error']:+.1f}%)")
    print(f"wrote {path}")
    return 0


# -- run --------------------------------------------------------------------

def load_model(cfg: RunConfig) -> ThroughputModel:
    model = fit_trace(cfg.trace) if cfg.trace else fixture_model()
    need = {Mode.UC24, Mode.AC5}
    if parse_policy(cfg.policy) is PolicyId.TwoFourAboveCanopy:
        need.add(Mode.AC24)
    missing = sorted(m.value for m in need if m not in model)
    if missing:
        raise ConfigError(f"trace lacks modes {missing} needed by policy {cfg.policy}")
    return model


def build_scenario(cfg: RunConfig, model: ThroughputModel):
    w = cfg.workload
    if "file" in w:
        sc = load_workload(w["file"], w.get("topology_file"), cfg.sim.get("horizon"))
    else:
        layout = cfg.topology.get("gateways", "centered")
        if w["generator"] == "scenario1":
            sc = generate_scenario1(cfg.workload_seed, w["scale"], gateways=layout)
        else:
            sc = generate_scenario2(cfg.workload_seed, w["scale"], model, gateways=layout)
    if any(d.above_canopy for d in sc.topology.devices) and Mode.AC24 not in model:
        raise ConfigError("workload has above-canopy devices but the trace lacks ac24")
    n = sc.topology.num_routers
    for rid in (cfg.topology.get("channels24") or {}):
        if int(rid) >= n:
            raise ConfigError(f"channels24 names router {rid}, grid has {n}")
    return sc


def execute(cfg: RunConfig, out_root: Path, emit_workload: bool = False, figures: bool = True):
    """Run one configuration; returns (run_dir, report)."""
    from .report import plot_run

    model = load_model(cfg)
    sc = build_scenario(cfg, model)
    planner = make_planner(cfg.policy, sc.topology, model, cfg.te_params(), cfg.seed)
    for rid, ch in (cfg.topology.get("channels24") or {}).items():
        planner.initial_channels[int(rid)] = ch
    params = cfg.sim_params()
    if "file" not in cfg.workload:
        params = _with_horizon(params, sc.horizon)
    report = Simulator(sc, model, planner, params).run(keep_plans=True)
    run_dir = out_root / cfg.run_dir_name()
    report.write(run_dir)
    (run_dir / "config.json").write_text(json.dumps(cfg.effective(), indent=2, sort_keys=True) + "\n")
    if emit_workload:
        sc.write(run_dir / "workload.json")
    if figures:
        plot_run(report, run_dir, f"{cfg.policy}, seed {cfg.seed}")
    return run_dir, report


def _with_horizon(params, horizon):
    from dataclasses import replace
    return params if params.horizon == horizon else replace(params, horizon=horizon)


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig().validated()
    return cfg.override(policy=args.policy, seed=args.seed, scale=args.scale, trace=args.trace)


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    out_root = _out_root(args.out, cfg.out)
    run_dir, report = execute(cfg, out_root, args.emit_workload)
    s = report.summary()
    print(f"{cfg.policy} seed {cfg.seed}: total {s['total_mb']:.1f} MB, "
          f"real-time normalized mean {s['realtime_normalized_mean']:.3f} -> {run_dir}")
    if args.compare:
        other = cfg.override(policy=args.compare)
        other_dir, other_report = execute(other, out_root, figures=False)
        o = other_report.summary()
        cmp = {
            "policy": cfg.policy, "baseline": other.policy, "seed": cfg.seed,
            "total_mb": s["total_mb"], "baseline_total_mb": o["total_mb"],
            "total_ratio": s["total_mb"] / o["total_mb"] if o["total_mb"] else None,
            "normalized_mean": s["realtime_normalized_mean"],
            "baseline_normalized_mean": o["realtime_normalized_mean"],
            "normalized_ratio": (s["realtime_normalized_mean"] / o["realtime_normalized_mean"]
                                 if o["realtime_normalized_mean"] else None),
            "runs": [run_dir.name, other_dir.name],
        }
        (run_dir / f"compare-{other.policy}.json").write_text(json.dumps(cmp, indent=2, sort_keys=True) + "\n")
        print(f"vs {other.policy}: total-data ratio {cmp['total_ratio']:.3f}, "
              f"normalized ratio {cmp['normalized_ratio']:.3f}")
    return 0


# -- sweep ------------------------------------------------------------------

def _sweep_one(job):
    cfg_dict, out_root = job
    cfg = RunConfig.from_dict(cfg_dict)
    run_dir, report = execute(cfg, Path(out_root), figures=False)
    return cfg.policy, cfg.seed, report.summary(), report.realtime_normalized().tolist(), run_dir.name


def cmd_sweep(args) -> int:
    from .report import plot_sweep, sweep_rows, write_sweep_csv

    base = _config_from_args(args)
    policies = [parse_policy(p).value for p in (args.policies or base.policy).split(",") if p.strip()]
    seeds = _parse_seeds(args.seeds)
    root = _out_root(args.out, base.out) / f"sweep-{base.config_hash()}"
    runs_dir = root / "runs"
    jobs = [(base.override(policy=p, seed=s).to_dict(), str(runs_dir)) for p in policies for s in seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows = sweep_rows([(p, s, summ) for p, s, summ, _, _ in results])
    root.mkdir(parents=True, exist_ok=True)
    path = write_sweep_csv(root / "sweep.csv", rows)
    pooled: dict = {}
    for p, _, _, norm, _ in results:
        pooled.setdefault(p, []).extend(norm)
    plot_sweep(rows, pooled, root)
    for r in rows:
        if r["row"] == "median":
            print(f"{r['policy']:<10} median total {r['total_mb']:10.1f} MB  "
                  f"normalized mean {r['normalized_mean']:.3f}")
    print(f"wrote {path}")
    return 0


# -- oracle-gap ---------------------------------------------------------------

def cmd_oracle_gap(args) -> int:
    from .oracle import gap_report, write_gap_report

    seeds = _parse_seeds(args.seeds)
    model = fit_trace(args.trace) if args.trace else fixture_model()
    report = gap_report(seeds, model)
    path = write_gap_report(_out_root(args.out) / "oracle_gap.json", report)
    print(f"cornet/optimal median {report['cornet_ratio_median']:.3f}, naive/optimal median "
          f"{report['naive_ratio_median']:.3f}, cornet >= naive on {report['cornet_ge_naive']}/{len(seeds)}")
    print(f"wrote {path}")
    return 0


# -- entry --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cropmesh", description="Two-tier farm WiFi mesh traffic engineering simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit throughput curves to a measurement trace")
    f.add_argument("--trace", help="CSV with mode,distance_m,throughput_mbps (default: bundled fixture)")
    f.add_argument("--out", help="output directory (default: $CROPMESH_OUT or ./runs)")
    f.set_defaults(func=cmd_fit)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--policy", help="override the policy")
        sp.add_argument("--seed", type=int, help="override the seed")
        sp.add_argument("--scale", type=float, help="override the workload scale")
        sp.add_argument("--trace", help="override the trace file")
        sp.add_argument("--out", help="output root (default: config out, $CROPMESH_OUT, or ./runs)")

    r = sub.add_parser("run", help="simulate one configuration")
    common(r)
    r.add_argument("--emit-workload", action="store_true", help="also write a replayable workload JSON")
    r.add_argument("--compare", metavar="POLICY", help="rerun with POLICY on the same seed and report ratios")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run policies x seeds and aggregate")
    common(s)
    s.add_argument("--policies", help="comma-separated policy ids (default: the config's policy)")
    s.add_argument("--seeds", default="0-9", help="comma list or ranges, e.g. 0-9 or 1,3,5")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle-gap", help="greedy vs exhaustive optimum on tiny instances")
    o.add_argument("--seeds", default="0-99")
    o.add_argument("--trace")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle_gap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FitError, WorkloadError, TopologyError) as exc:
        print(f"cropmesh: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"cropmesh: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
