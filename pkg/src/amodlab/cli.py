"""Command-line surface: data generation, ingestion, training, evaluation,
analysis, and plot-data emission.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. Every
failure prints a single machine-parseable line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import date
from pathlib import Path

import numpy as np

from .analysis import (
    UndefinedRatio,
    aggregate_scores,
    pairwise_wilcoxon,
    policy_report,
)
from .dispatch import GreedyPolicy
from .hexgrid import build_hex_grid
from .nets import load_checkpoint
from .runconfig import ConfigError, RunConfig
from .sim import EpisodeLog, rollout
from .streams import ingest_trips
from .training import (
    NetSet,
    ActorPolicy,
    Trainer,
    VALIDATION_SEED_BASE,
)

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _fail(code: int, reason: str) -> int:
    print(f"error: {reason}", file=sys.stderr)
    return code


# -- gen-data -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .streams import validate_stream

    cfg = RunConfig.load(args.config, overrides=args.set)
    out = Path(args.out) if args.out else cfg.run_dir() / "streams"
    cap = cfg.data.get("max_per_step_cap")
    total = 0
    for kind in ("train", "val", "test"):
        streams = cfg.build_streams(kind)
        kind_dir = out / kind
        kind_dir.mkdir(parents=True, exist_ok=True)
        for i, stream in enumerate(streams):
            stream.save(kind_dir / f"{i:03d}.stream")
            if cap is not None:
                flagged = validate_stream(stream, cap)
                if flagged:
                    print(
                        f"warning: {kind}/{i:03d} exceeds {cap} requests/step "
                        f"at steps {flagged[:5]}{'...' if len(flagged) > 5 else ''}",
                        file=sys.stderr,
                    )
        total += len(streams)
        print(f"{kind}: {len(streams)} streams -> {kind_dir}")
    print(f"wrote {total} streams")
    return 0


# -- ingest ---------------------------------------------------------------


def cmd_ingest(args) -> int:
    grid = build_hex_grid(args.zones, args.scale)
    kwargs = {}
    if args.anchor:
        lat, lon = args.anchor.split(",")
        kwargs["anchor"] = (float(lat), float(lon))
    stream = ingest_trips(
        args.trips,
        grid,
        window=(date.fromisoformat(args.date), args.hour),
        subsample_every=args.subsample_every,
        holidays=tuple(date.fromisoformat(h) for h in args.holiday),
        **kwargs,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stream.save(out)
    print(f"{len(stream)} requests ({stream.max_per_step} max per step) -> {out}")
    return 0


# -- train ----------------------------------------------------------------


def _train_one_seed(cfg: RunConfig, seed: int, resume: bool) -> dict:
    env_cfg = cfg.build_env()
    train_cfg = cfg.build_training()
    seed_dir = cfg.run_dir() / f"seed_{seed}"
    trainer = Trainer(
        env_cfg,
        cfg.build_streams("train"),
        cfg.build_streams("val"),
        train_cfg,
        seed=seed,
        out_dir=seed_dir,
    )
    last = seed_dir / "last.npz"
    if resume and last.exists():
        meta = trainer.load_checkpoint(last)
        print(f"seed {seed}: resumed at step {meta['step']}")
    trainer.run()
    return {
        "seed": seed,
        "best_validation": trainer.best_validation,
        "steps": trainer.sched.step,
    }


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config, overrides=args.set)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else cfg.seeds
    run_dir = cfg.run_dir()
    if args.dry_run:
        est_updates = max(0, cfg.build_training().total_steps - cfg.build_training().warmup_steps)
        print(json.dumps(cfg.to_dict(), indent=2, default=str))
        print(f"would train seeds {seeds}: {cfg.build_training().total_steps} steps each "
              f"({est_updates} gradient steps), output {run_dir}")
        return 0
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.yaml")
    results = []
    failures = []
    if args.workers > 1:
        import multiprocessing as mp

        ctx = mp.get_context("spawn")
        with ctx.Pool(processes=args.workers) as pool:
            handles = {
                seed: pool.apply_async(_train_one_seed, (cfg, seed, args.resume))
                for seed in seeds
            }
            for seed, h in handles.items():
                try:
                    results.append(h.get())
                except Exception as exc:  # noqa: BLE001 - seed isolation
                    failures.append((seed, str(exc)))
    else:
        for seed in seeds:
            try:
                results.append(_train_one_seed(cfg, seed, args.resume))
            except Exception as exc:  # noqa: BLE001 - seed isolation
                failures.append((seed, str(exc)))
    for r in results:
        print(f"seed {r['seed']}: best validation {r['best_validation']:.3f} "
              f"after {r['steps']} steps")
    for seed, reason in failures:
        print(f"seed {seed}: FAILED ({reason})", file=sys.stderr)
    if failures and not results:
        return _fail(EXIT_RUNTIME, "all seeds failed")
    print(f"run directory: {run_dir}")
    return 0


# -- eval -----------------------------------------------------------------


def _load_actor(cfg: RunConfig, seed_dir: Path, which: str) -> NetSet:
    nets = NetSet.build(seed=0, cfg=cfg.build_training())
    path = seed_dir / f"{which}.npz"
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    load_checkpoint(path, nets={"actor": nets.actor})
    return nets


def _eval_policy(policy, env_cfg, streams) -> dict[str, tuple[float, EpisodeLog]]:
    out = {}
    for i, stream in enumerate(streams):
        label = stream.metadata.get("label", f"{i:03d}")
        log = rollout(policy, env_cfg, stream, seed=VALIDATION_SEED_BASE + i, mode="test")
        out[label] = (log.total_profit(), log)
    return out


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config, overrides=args.set)
    env_cfg = cfg.build_env()
    streams = cfg.build_streams(args.streams)
    run_dir = cfg.run_dir()
    eval_dir = run_dir / "eval"
    logs_dir = eval_dir / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else cfg.seeds

    rows: list[dict] = []
    greedy_scores: dict[str, float] = {}
    for label, (profit, log) in _eval_policy(GreedyPolicy(), env_cfg, streams).items():
        greedy_scores[label] = profit
        log.save(logs_dir / f"greedy__{label}.jsonl")
        rows.append({"policy": "greedy", "seed": "", "date": label, "profit": profit})

    per_seed: dict[int, dict[str, float]] = {}
    for seed in seeds:
        seed_dir = run_dir / f"seed_{seed}"
        nets = _load_actor(cfg, seed_dir, args.checkpoint)
        scored = _eval_policy(ActorPolicy(nets.actor), env_cfg, streams)
        per_seed[seed] = {}
        for label, (profit, log) in scored.items():
            per_seed[seed][label] = profit
            log.save(logs_dir / f"{cfg.algorithm}__seed{seed}__{label}.jsonl")
            rows.append(
                {"policy": cfg.algorithm, "seed": seed, "date": label, "profit": profit}
            )

    summary = aggregate_scores(per_seed, baseline=greedy_scores)
    with (eval_dir / "scores.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["policy", "seed", "date", "profit"])
        writer.writeheader()
        writer.writerows(rows)

    print(f"{'date':<12} {'greedy':>10} {cfg.algorithm:>10} {'delta':>8}")
    for d in summary.dates:
        delta = summary.delta_pct.get(d) if summary.delta_pct else None
        delta_s = f"{delta:+.1f}%" if delta is not None else "n/a"
        print(f"{d:<12} {greedy_scores.get(d, float('nan')):>10.3f} "
              f"{summary.per_date_mean[d]:>10.3f} {delta_s:>8}")
    mean_greedy = float(np.mean(list(greedy_scores.values())))
    mean_delta = (
        f"{summary.mean_delta_pct:+7.1f}%" if summary.mean_delta_pct is not None else "n/a"
    )
    print(f"{'mean':<12} {mean_greedy:>10.3f} {summary.mean_score:>10.3f} {mean_delta:>8}")
    print(f"scores -> {eval_dir / 'scores.csv'}")
    return 0


# -- analyze ----------------------------------------------------------------


def _load_eval_logs(run_dir: Path) -> dict[str, dict[str, list[EpisodeLog]]]:
    logs_dir = run_dir / "eval" / "logs"
    if not logs_dir.exists():
        raise FileNotFoundError(f"no eval logs under {run_dir}; run `amodlab eval` first")
    by_policy: dict[str, dict[str, list[EpisodeLog]]] = {}
    for path in sorted(logs_dir.glob("*.jsonl")):
        parts = path.stem.split("__")
        policy, label = parts[0], parts[-1]
        by_policy.setdefault(policy, {}).setdefault(label, []).append(EpisodeLog.load(path))
    return by_policy


def cmd_analyze(args) -> int:
    out_rows = []
    all_scores: dict[str, dict[str, float]] = {}
    for run in args.run:
        run_dir = Path(run)
        analysis_dir = run_dir / "analysis"
        analysis_dir.mkdir(parents=True, exist_ok=True)
        by_policy = _load_eval_logs(run_dir)
        for policy, by_date in by_policy.items():
            report = policy_report(f"{run_dir.name}/{policy}", by_date)
            text = report.to_text()
            print(text)
            print()
            (analysis_dir / f"report_{policy}.txt").write_text(text + "\n")
            key = f"{run_dir.name}/{policy}"
            all_scores[key] = report.per_date_profit
            r = report.rejection
            out_rows.append(
                {
                    "run": run_dir.name,
                    "policy": policy,
                    "rejection_overall": r.overall,
                    "rejection_empty_dest": r.empty_destination,
                    "rejection_crowded_dest": r.crowded_destination,
                    "crowding_gap": r.crowding_gap,
                    "overperformance": report.overperformance,
                }
            )
        # per-date delta series vs. the greedy column of the eval table
        scores_csv = run_dir / "eval" / "scores.csv"
        if scores_csv.exists():
            rows = list(csv.DictReader(scores_csv.open()))
            greedy = {r["date"]: float(r["profit"]) for r in rows if r["policy"] == "greedy"}
            learned: dict[tuple[str, str], list[float]] = {}
            for r in rows:
                if r["policy"] != "greedy":
                    learned.setdefault((r["policy"], r["date"]), []).append(float(r["profit"]))
            with (analysis_dir / "deltas.csv").open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["policy", "date", "profit", "greedy", "delta_pct"])
                for (policy, d), profits in sorted(learned.items()):
                    mean = float(np.mean(profits))
                    if d in greedy and greedy[d] != 0:
                        writer.writerow(
                            [policy, d, mean, greedy[d],
                             100.0 * (mean - greedy[d]) / abs(greedy[d])]
                        )

        # validation curves export (one row per validation event)
        curves_path = analysis_dir / "validation_curves.csv"
        with curves_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "step", "score"])
            for vfile in sorted(run_dir.glob("seed_*/validation.jsonl")):
                seed = vfile.parent.name.removeprefix("seed_")
                for line in vfile.read_text().splitlines():
                    rec = json.loads(line)
                    writer.writerow([seed, rec["step"], rec["score"]])

    n_common = min(
        (len(set(a) & set(b)) for a in all_scores.values() for b in all_scores.values()),
        default=0,
    )
    if len(all_scores) >= 2 and n_common >= 5:
        print(f"{'pair':<48} {'p-value':>8}")
        for (a, b), p in pairwise_wilcoxon(all_scores).items():
            print(f"{a} vs {b:<30} {p:>8.4f}")
    elif len(all_scores) >= 2:
        print(f"(skipping Wilcoxon: only {n_common} paired dates, need >= 5)")

    first = Path(args.run[0]) / "analysis"
    with (first / "breakdown.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(out_rows[0].keys()))
        writer.writeheader()
        writer.writerows(out_rows)
    print(f"analysis -> {first}")
    return 0


# -- plot -------------------------------------------------------------------


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for run in args.run:
        run_dir = Path(run)
        out_dir = run_dir / "plots"
        out_dir.mkdir(parents=True, exist_ok=True)

        # validation curves
        fig, ax = plt.subplots(figsize=(7, 4))
        any_curve = False
        for vfile in sorted(run_dir.glob("seed_*/validation.jsonl")):
            recs = [json.loads(line) for line in vfile.read_text().splitlines()]
            if not recs:
                continue
            any_curve = True
            ax.plot(
                [r["step"] for r in recs],
                [r["score"] for r in recs],
                label=vfile.parent.name,
            )
        if any_curve:
            ax.set_xlabel("training step")
            ax.set_ylabel("validation profit")
            ax.axhline(0.0, color="black", lw=0.8)
            ax.legend()
            fig.tight_layout()
            fig.savefig(out_dir / "validation.png", dpi=150)
        plt.close(fig)

        # per-date profit deltas vs greedy
        scores_csv = run_dir / "eval" / "scores.csv"
        if scores_csv.exists():
            rows = list(csv.DictReader(scores_csv.open()))
            greedy = {r["date"]: float(r["profit"]) for r in rows if r["policy"] == "greedy"}
            learned: dict[str, list[float]] = {}
            name = ""
            for r in rows:
                if r["policy"] != "greedy":
                    name = r["policy"]
                    learned.setdefault(r["date"], []).append(float(r["profit"]))
            if learned:
                dates = sorted(learned)
                deltas = [
                    100.0 * (float(np.mean(learned[d])) - greedy[d]) / abs(greedy[d])
                    for d in dates
                ]
                fig, ax = plt.subplots(figsize=(7, 4))
                ax.bar(range(len(dates)), deltas)
                ax.set_xticks(range(len(dates)))
                ax.set_xticklabels(dates, rotation=45, ha="right", fontsize=7)
                ax.axhline(0.0, color="black", lw=0.8)
                ax.set_ylabel(f"{name} vs greedy [%]")
                fig.tight_layout()
                fig.savefig(out_dir / "delta_vs_greedy.png", dpi=150)
                plt.close(fig)
                with (out_dir / "delta_vs_greedy.csv").open("w", newline="") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(["date", "delta_pct"])
                    writer.writerows(zip(dates, deltas))
        print(f"plots -> {out_dir}")
    return 0


# -- entry ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amodlab",
        description="Desk-scale laboratory for profit-maximizing AMoD dispatching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic request streams")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ingest", help="ingest a trip-record table into a stream")
    p.add_argument("--trips", required=True)
    p.add_argument("--zones", type=int, required=True, choices=(5, 11, 38))
    p.add_argument("--scale", default="small", choices=("small", "large"))
    p.add_argument("--date", required=True, help="ISO date, e.g. 2015-01-15")
    p.add_argument("--hour", type=int, required=True)
    p.add_argument("--subsample-every", type=int, default=1)
    p.add_argument("--holiday", action="append", default=[])
    p.add_argument("--anchor", default=None, help="LAT,LON mapped to the grid origin")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one algorithm on one instance")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seeds", default=None, help="comma-separated override")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="deterministic test-mode evaluation")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--streams", default="test", choices=("val", "test"))
    p.add_argument("--checkpoint", default="best", choices=("best", "last"))
    p.add_argument("--seeds", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="policy reports, Wilcoxon tables, curve exports")
    p.add_argument("--run", action="append", required=True, help="run directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="static figures + tidy plot data")
    p.add_argument("--run", action="append", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, UndefinedRatio) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except Exception as exc:  # noqa: BLE001 - single-line runtime failures
        return _fail(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
