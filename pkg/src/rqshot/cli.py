"""Command-line workflow: gen -> screen -> calibrate -> train -> eval -> report.

Every command is idempotent (outputs are overwritten, never appended), and
every stochastic step derives its streams from the master seed, so a whole
pipeline rerun with the same config reproduces its result files byte for
byte.  Exit codes: 0 success, 1 usage error, 2 validation/oracle failure,
3 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bm
from .config import RunConfig, load_config
from .instance import Instance, generate_instance
from .learner import CheckpointError, PolicyCheckpoint, TrainConfig, train
from .qaoa import Angles, CorrelationSampler, statevector_depth1, zz_all_edges
from .seeding import make_rng

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_MISSING = 3


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _instance_paths(spec: str) -> list[Path]:
    p = Path(spec)
    if p.is_dir():
        return sorted(q for q in p.glob("*.json") if not q.name.endswith(".cap.json"))
    if p.exists():
        return [p]
    raise FileNotFoundError(f"no instance file or directory at {spec}")


def cmd_gen(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        inst = generate_instance(args.n, args.d, args.seed + i)
        inst.category = args.category
        inst.save(out / f"{inst.instance_id}.json")
        print(f"wrote {inst.instance_id}: {inst.graph.edge_count} edges, e_opt={inst.e_opt:.6f}")
    return EXIT_OK


def cmd_screen(args, cfg: RunConfig) -> int:
    dcfg = cfg.driver_config()
    for path in _instance_paths(args.instances):
        inst = Instance.load(path)
        label, mean_ratio = bm.hard_screen(
            inst, dcfg, n_trials=cfg.screen_trials, cap=cfg.screen_cap,
            master_seed=cfg.master_seed,
        )
        inst.category = label
        inst.save(path)
        print(f"{inst.instance_id}: mean uniform ratio {mean_ratio:.4f} -> {label}")
    return EXIT_OK


def cmd_calibrate(args, cfg: RunConfig) -> int:
    inst = Instance.load(args.instance)
    result = bm.calibrate_cap(
        inst, cfg.driver_config(), n_cal=cfg.cal_trials, target=cfg.cal_target,
        grid=cfg.cap_grid, resolution=cfg.cal_resolution, master_seed=cfg.master_seed,
    )
    out = Path(args.out) if args.out else Path(args.instance).with_suffix(".cap.json")
    _write_json(out, {"instance_id": inst.instance_id, **result.to_dict()})
    flag = " (budget-limited)" if result.budget_limited else ""
    print(f"{inst.instance_id}: cap {result.cap}{flag}, SR at cap {result.sr_at_cap:.3f}")
    return EXIT_OK


def _resolve_cap(arg: str, inst: Instance, caps_dir: str | None) -> int:
    if arg is not None:
        p = Path(arg)
        if p.exists():
            return int(json.loads(p.read_text())["cap"])
        return int(arg)
    if caps_dir is not None:
        p = Path(caps_dir) / f"{inst.instance_id}.cap.json"
        if not p.exists():
            raise FileNotFoundError(f"no calibration file for {inst.instance_id} in {caps_dir}")
        return int(json.loads(p.read_text())["cap"])
    raise FileNotFoundError("no cap given: pass --cap or --caps-dir")


def cmd_train(args, cfg: RunConfig) -> int:
    inst = Instance.load(args.instance)
    tcfg = TrainConfig.preset(args.preset)
    if args.episodes is not None:
        tcfg.episodes = args.episodes
    cap = _resolve_cap(args.cap, inst, args.caps_dir)
    ckpt = train(inst, cap, tcfg, cfg.driver_config(), master_seed=cfg.master_seed)
    ckpt.save(args.out)
    sr = "n/a" if ckpt.validation_sr is None else f"{ckpt.validation_sr:.3f}"
    print(
        f"trained {inst.instance_id} at cap {cap} ({tcfg.episodes} episodes): "
        f"best validation SR {sr}, final lambda "
        f"{ckpt.lambda_trace[-1] if ckpt.lambda_trace else tcfg.lambda0:.3f}"
    )
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    policies: dict[str, object] = {}
    checkpoint = None
    for name in args.policies.split(","):
        name = name.strip()
        if name == "rl":
            if not args.checkpoint:
                raise FileNotFoundError("rl policy requested but no --checkpoint given")
            checkpoint = PolicyCheckpoint.load(args.checkpoint, expected_bins=cfg.bins)
            policies[name] = bm.make_policy("rl", checkpoint)
        else:
            policies[name] = bm.make_policy(name)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = 1 if args.log_steps else cfg.jobs  # step logs only survive the serial path
    all_records: list[bm.EvaluationRecord] = []
    trial_lines: list[str] = []
    step_lines: list[str] = []
    for path in _instance_paths(args.instances):
        inst = Instance.load(path)
        if inst.e_opt is None:
            raise FileNotFoundError(f"{inst.instance_id} has no recorded optimum; run gen/screen")
        cap = _resolve_cap(args.cap, inst, args.caps_dir)
        records, trials = bm.evaluate_methods(
            inst, policies, cap, cfg.driver_config(), n_trials=cfg.eval_trials,
            master_seed=cfg.master_seed, jobs=jobs,
        )
        all_records.extend(records)
        for policy_name, results in trials.items():
            for t, r in enumerate(results):
                head = {"instance_id": inst.instance_id, "policy": policy_name, "trial": t,
                        "cap": cap}
                trial_lines.append(json.dumps({**head, **r.to_dict()}, sort_keys=True))
                if args.log_steps:
                    for s in r.steps:
                        step_lines.append(json.dumps({**head, **s.to_dict()}, sort_keys=True))
                    step_lines.append(json.dumps({**head, "summary": r.to_dict()}, sort_keys=True))
        print(f"evaluated {inst.instance_id} at cap {cap} over {cfg.eval_trials} trials")

    bm.write_records_csv(all_records, out / "records.csv")
    (out / "trials.jsonl").write_text("\n".join(trial_lines) + ("\n" if trial_lines else ""))
    if args.log_steps:
        (out / "steps.jsonl").write_text("\n".join(step_lines) + ("\n" if step_lines else ""))
    print(f"wrote {out / 'records.csv'} ({len(all_records)} rows)")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    records: list[bm.EvaluationRecord] = []
    src = Path(args.records)
    if src.is_dir():
        for f in sorted(src.glob("**/records.csv")):
            records.extend(bm.read_records_csv(f))
    elif src.exists():
        records.extend(bm.read_records_csv(src))
    else:
        raise FileNotFoundError(f"no records at {src}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    operational, excluded = bm.operational_filter(records, cfg.operational_floor)
    held = [r for r in operational if r.category not in ("training", "validation")]

    views = {
        "complete": records,
        "operational": operational,
        "held_out_operational": held,
    }
    lines = ["shot-allocation benchmark report", "=" * 34, ""]
    for name, rows in views.items():
        lines.append(f"[{name}] {len(rows)} policy-instance rows")
        for agg in bm.aggregate(rows, "policy"):
            red = "n/a" if agg["mean_reduction"] is None else f"{agg['mean_reduction']:.1%}"
            esp = "n/a" if agg["mean_esp_ratio"] is None else f"{agg['mean_esp_ratio']:.3f}"
            lines.append(
                f"  {agg['group']:<10} pairs={agg['pairs']:<4} mean SR={agg['mean_sr']:.3f} "
                f"reduction={red} ESP ratio={esp}"
            )
        lines.append("")

    bm.write_rows_csv(bm.aggregate(operational, "policy"), out / "aggregate_by_policy.csv")
    bm.write_rows_csv(bm.aggregate(operational, "category"), out / "aggregate_by_category.csv")
    bm.write_rows_csv(bm.aggregate(operational, "size"), out / "aggregate_by_size.csv")
    bm.write_records_csv(operational, out / "operational_records.csv")
    bm.write_records_csv(records, out / "complete_records.csv")

    # metric-robustness view: pairwise reductions under four summary metrics
    uniform_rows = {r.instance_id: r for r in operational if r.policy == "uniform"}
    method_names = sorted({r.policy for r in operational} - {"uniform"})
    if method_names and uniform_rows:
        lines.append("metric robustness (mean pairwise reduction vs uniform)")
        for name in method_names:
            rows = [r for r in operational if r.policy == name and r.instance_id in uniform_rows]
            by_metric = {"median": [], "mean": [], "p90": [], "restart": []}
            for r in rows:
                u = uniform_rows[r.instance_id].summary
                s = r.summary
                if u.median_shots:
                    by_metric["median"].append(1 - s.median_shots / u.median_shots)
                if u.mean_shots:
                    by_metric["mean"].append(1 - s.mean_shots / u.mean_shots)
                if u.p90_shots:
                    by_metric["p90"].append(1 - s.p90_shots / u.p90_shots)
                if s.restart_cost is not None and u.restart_cost:
                    by_metric["restart"].append(1 - s.restart_cost / u.restart_cost)
            cells = "  ".join(
                f"{metric}={np.mean(vals):.1%}" if vals else f"{metric}=n/a"
                for metric, vals in by_metric.items()
            )
            lines.append(f"  {name:<10} {cells}")
        lines.append("")

    # SR-floor coverage for each non-uniform policy pair on matched instances
    names = sorted({r.policy for r in records} - {"uniform"})
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            sr_a = {r.instance_id: r.summary.sr for r in operational if r.policy == a}
            sr_b = {r.instance_id: r.summary.sr for r in operational if r.policy == b}
            matched = sorted(set(sr_a) & set(sr_b))
            if not matched:
                continue
            pairs = [(sr_a[k], sr_b[k]) for k in matched]
            rows = bm.sr_floor_coverage(pairs, [0.90, 0.92, 0.94, 0.95])
            lines.append(f"SR-floor coverage ({a} vs {b}, {len(pairs)} matched instances)")
            for row in rows:
                lines.append(
                    f"  tau={row['tau']:.2f}  {a}={row['first']}/{len(pairs)} "
                    f"{b}={row['second']}/{len(pairs)}  delta={row['delta']:+d}"
                )
            lines.append("")

    summary = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(summary)
    print(summary, end="")
    return EXIT_OK


def cmd_oracle_check(args, cfg: RunConfig) -> int:
    """Closed form vs statevector, plus estimator sanity; nonzero exit on failure."""
    rng = make_rng(args.seed, "oracle")
    worst = 0.0
    for _ in range(args.cases):
        n = int(rng.integers(2, args.n_max + 1))
        degrees = [d for d in range(1, n) if (n * d) % 2 == 0]
        d = degrees[int(rng.integers(len(degrees)))]
        inst = generate_instance(n, d, int(rng.integers(0, 2**31)), compute_opt=False)
        g = inst.graph
        if g.edge_count == 0:
            continue
        a = Angles(gamma=float(rng.uniform(0, 2 * np.pi)), beta=float(rng.uniform(0, np.pi)))
        state = statevector_depth1(g, a)
        idx = np.arange(1 << g.node_count)
        z = 1 - 2 * ((idx[:, None] >> np.arange(g.node_count)) & 1)
        probs = np.abs(state) ** 2
        pos = {u: q for q, u in enumerate(g.nodes)}
        closed = zz_all_edges(g, a)
        for (u, v), cf in closed.items():
            sv = float(np.sum(probs * z[:, pos[u]] * z[:, pos[v]]))
            worst = max(worst, abs(sv - cf))
    print(f"closed form vs statevector: max |delta| = {worst:.3e} over {args.cases} cases")
    failed = worst > 1e-9

    # estimator sanity: unbiasedness of the sampled mean at k=256
    inst = generate_instance(6, 3, seed=7, compute_opt=False)
    from .qaoa import optimize_angles

    a = optimize_angles(inst.graph)
    sampler = CorrelationSampler(inst.graph, a, mode="statevector_sampled")
    exact = sampler.exact_values()
    edge = max(exact, key=lambda e: abs(exact[e]))
    reps, k = 2000, 256
    est_rng = make_rng(args.seed, "oracle-estimator")
    means = [sampler.estimate(sampler.draw(k, est_rng)).values[edge] for _ in range(reps)]
    m = exact[edge]
    se = np.sqrt((1 - m**2) / k / reps)
    bias = abs(np.mean(means) - m)
    print(f"estimator bias at k={k}: {bias:.5f} (4-sigma band {4 * se:.5f})")
    failed = failed or bias > 4 * se

    if failed:
        print("ORACLE CHECK FAILED")
        return EXIT_VALIDATION
    print("oracle check passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rqshot",
        description="Adaptive shot allocation for depth-1 recursive QAOA on weighted Max-Cut.",
    )
    parser.add_argument("--config", help="INI config file (defaults reproduce the reference protocol)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--jobs", type=int, help="trial-level parallelism (default serial)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate regular Gaussian instances with exact optima")
    p.add_argument("-n", type=int, required=True, help="node count")
    p.add_argument("-d", type=int, required=True, help="degree")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, dest="seed")
    p.add_argument("--category", default="unscreened")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("screen", help="annotate instances as hard/easy under uniform allocation")
    p.add_argument("--instances", required=True)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("calibrate", help="two-stage uniform cap calibration")
    p.add_argument("--instance", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="train the residual Double Q policy on one instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--cap", help="cap value or calibration JSON path")
    p.add_argument("--caps-dir", help="directory of <instance_id>.cap.json files")
    p.add_argument("--preset", choices=("standard", "aggressive"), default="standard")
    p.add_argument("--episodes", type=int, help="override the preset's episode count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate policies on instances under calibrated caps")
    p.add_argument("--instances", required=True)
    p.add_argument("--policies", default="uniform,heuristic")
    p.add_argument("--checkpoint")
    p.add_argument("--cap", help="cap value or calibration JSON applied to every instance")
    p.add_argument("--caps-dir")
    p.add_argument("--log-steps", action="store_true", help="also write per-step logs (serial)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate evaluation records into CSV tables")
    p.add_argument("--records", required=True, help="records.csv or a directory of them")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle-check", help="validate the closed form against the statevector")
    p.add_argument("--n-max", type=int, default=12, dest="n_max")
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--seed", type=int, default=0, dest="seed")
    p.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.command != "gen":
            cfg.master_seed = args.seed
        if args.jobs is not None:
            cfg.jobs = args.jobs
        return args.func(args, cfg)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
