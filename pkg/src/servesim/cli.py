"""Command-line front end.

Subcommands:
    run            simulate each configured (policy, balancer) pair once
    sweep          rerun the experiment at several arrival-rate factors
    validate-trace parse a trace file and print its basic statistics
    synth          generate a synthetic trace file from the config

Exit codes: 0 on success, 1 on config/trace validation problems, 2 on
unexpected runtime failures. Outputs are byte-identical across reruns with
the same config and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .cluster import run_cluster
from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    load_config_file,
    resolve_trace,
)
from .metrics import (
    summarize,
    write_records_csv,
    write_summary_csv,
    write_summary_json,
)
from .policies import InfeasibleRequestError
from .workload import (
    TraceFormatError,
    load_trace,
    scale_qps,
    write_trace,
)

_VALIDATION_ERRORS = (ConfigError, TraceFormatError, InfeasibleRequestError, FileNotFoundError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="servesim",
        description="Trace-driven simulator for LLM serving schedulers and load balancers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument(
            "--out-dir", type=Path, default=Path("out"), help="directory for result files"
        )
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry by dotted path (repeatable)",
        )

    p_run = sub.add_parser("run", help="run each configured (policy, balancer) pair")
    common(p_run)

    p_sweep = sub.add_parser("sweep", help="rerun at each sweep_factors arrival-rate factor")
    common(p_sweep)

    p_val = sub.add_parser("validate-trace", help="check a trace file and print statistics")
    p_val.add_argument("trace", type=Path)
    p_val.add_argument(
        "--format",
        choices=("combined", "arrivals", "sizes"),
        default="combined",
        help="trace layout (default: combined)",
    )

    p_synth = sub.add_parser("synth", help="write the configured synthetic trace to a file")
    common(p_synth)
    p_synth.add_argument("--out", type=Path, required=True, help="output trace path")

    return parser


def _load_experiment(args) -> ExperimentConfig:
    raw = load_config_file(args.config) if args.config else {}
    raw = apply_overrides(raw, args.overrides)
    if args.seed is not None:
        raw["seed"] = args.seed
    return config_from_dict(raw)


def _combos(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    policies = cfg.policies or [cfg.cluster.engine.policy]
    balancers = cfg.balancers or [cfg.cluster.balancer.name]
    return [(p, b) for p in policies for b in balancers]


def _settings_for(cfg: ExperimentConfig, policy: str, balancer: str):
    cluster = dataclasses.replace(
        cfg.cluster,
        engine=dataclasses.replace(cfg.cluster.engine, policy=policy),
        balancer=dataclasses.replace(cfg.cluster.balancer, name=balancer),
    )
    return cluster


def cmd_run(args) -> int:
    cfg = _load_experiment(args)
    trace = resolve_trace(cfg)
    out_dir = args.out_dir
    rows = []
    for policy, balancer in _combos(cfg):
        settings = _settings_for(cfg, policy, balancer)
        records = run_cluster(settings, trace)
        write_records_csv(out_dir / f"records_{policy}_{balancer}.csv", records)
        summary = summarize(records)
        rows.append({"policy": policy, "balancer": balancer, **summary.to_dict()})
    write_summary_csv(out_dir / "summary.csv", rows)
    write_summary_json(out_dir / "summary.json", rows)
    for row in rows:
        print(
            f"{row['policy']}/{row['balancer']}: n={row['n_requests']} "
            f"ttft_p50={row['ttft_p50']:.4f}s ttft_p95={row['ttft_p95']:.4f}s "
            f"gen_p50={row['gen_time_p50']:.4f}s preempt={row['preemption_rate']:.4%}"
        )
    print(f"wrote {out_dir}/summary.csv and {out_dir}/summary.json")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_experiment(args)
    trace = resolve_trace(cfg)
    out_dir = args.out_dir
    rows = []
    for factor in cfg.sweep_factors:
        scaled = scale_qps(trace, factor)
        for policy, balancer in _combos(cfg):
            settings = _settings_for(cfg, policy, balancer)
            records = run_cluster(settings, scaled)
            summary = summarize(records)
            rows.append(
                {"factor": factor, "policy": policy, "balancer": balancer, **summary.to_dict()}
            )
    write_summary_csv(out_dir / "sweep.csv", rows)
    write_summary_json(out_dir / "sweep.json", rows)
    for row in rows:
        print(
            f"x{row['factor']:g} {row['policy']}/{row['balancer']}: "
            f"ttft_p50={row['ttft_p50']:.4f}s ttft_p95={row['ttft_p95']:.4f}s"
        )
    print(f"wrote {out_dir}/sweep.csv and {out_dir}/sweep.json")
    return 0


def cmd_validate_trace(args) -> int:
    rows = load_trace(args.trace, args.format)
    print(f"format: {args.format}")
    print(f"requests: {len(rows)}")
    if args.format == "arrivals":
        if rows:
            print(f"duration_s: {rows[-1] - rows[0]:.3f}")
        return 0
    if args.format == "combined":
        if rows:
            print(f"duration_s: {rows[-1].arrival_time - rows[0].arrival_time:.3f}")
        pairs = [(e.prompt_len, e.output_len) for e in rows]
    else:
        pairs = rows
    if pairs:
        mean_in = sum(p for p, _ in pairs) / len(pairs)
        mean_out = sum(o for _, o in pairs) / len(pairs)
        print(f"mean_prompt_tokens: {mean_in:.3f}")
        print(f"mean_output_tokens: {mean_out:.3f}")
        print(f"implied_beta: {(mean_in + mean_out) / mean_out:.6f}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_experiment(args)
    if cfg.workload.synth is None:
        raise ConfigError("synth needs a workload.synth section (or no workload at all)")
    from .workload import synthesize

    entries = synthesize(cfg.workload.synth)
    write_trace(args.out, entries, "combined")
    print(f"wrote {len(entries)} requests to {args.out}")
    return 0


_COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "validate-trace": cmd_validate_trace,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - last-resort runtime failure
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
