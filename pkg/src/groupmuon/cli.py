"""Command-line entry point.

Subcommands:

  verify    run the property battery, write a JSON report
  train     run one toy training job, write its metrics records
  profile   run a training job with profilers forced on, write profile rows
  sweep     run the (target, rule, group_size) grid, write per-cell results
  oracle    print closed-form values (aligned gain, transferred lr, groups)

Exit codes: 0 success, 2 configuration or usage error, 3 property failure,
4 divergence (the run aborted on a non-finite or exploding loss and nothing
else went wrong). The GROUP_MUON_LOG environment variable (error, info,
debug; default error) controls logging verbosity.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .config import (
    RunConfig,
    SweepSpec,
    load_run_config,
    load_sweep_spec,
    parse_run_config,
    sweep_cells,
)
from .criterion import aligned_closed_form
from .errors import ConfigFileError, DivergedError, GroupMuonError
from .grouping import GroupingRule, build_groups, transfer_lr
from .harness.records import write_records
from .harness.train import train
from .verify import run_battery

log = logging.getLogger("groupmuon")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
SWEEP_FIELDS = (
    "target", "rule", "group_size", "repetition",
    "final_val_loss", "best_val_loss", "steps", "diverged",
)


def _setup_logging() -> None:
    raw = os.environ.get("GROUP_MUON_LOG", "error")
    if raw not in LOG_LEVELS:
        raise ConfigFileError(
            f"GROUP_MUON_LOG must be one of {tuple(LOG_LEVELS)}, got {raw!r}"
        )
    logging.basicConfig(
        level=LOG_LEVELS[raw], format="%(levelname)s %(name)s: %(message)s"
    )


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_run_config(args.config)
    return parse_run_config({}, source="defaults")


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _formats(args, cfg: RunConfig) -> Tuple[str, ...]:
    fmt = getattr(args, "format", None) or cfg.output_format
    return ("csv", "json") if fmt == "both" else (fmt,)


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    results = run_battery()
    report = [r.as_dict() for r in results]
    path = out / "verify_report.json"
    path.write_text(json.dumps(report, indent=2) + "\n")
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'pass' if r.passed else 'FAIL'}  {r.seconds:7.2f}s")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed; report: {path}")
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return 3
    return 0


def _collect_val(records) -> List[float]:
    return [r.loss for r in records if r.split == "val"]


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    records = train(
        cfg.model, cfg.optimizer, cfg.steps, cfg.eval_every,
        batch_size=cfg.batch_size, data_seed=cfg.data_seed,
        profile_every=cfg.profile_every,
    )
    paths = write_records(records, out, "train", _formats(args, cfg))
    train_losses = [r.loss for r in records if r.split == "train"]
    vals = _collect_val(records)
    print(f"steps {cfg.steps}  train loss {train_losses[0]:.4f} -> {train_losses[-1]:.4f}"
          f"  final val {vals[-1]:.4f}  best val {min(vals):.4f}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_profile(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    every = cfg.profile_every if cfg.profile_every > 0 else cfg.eval_every
    records = train(
        cfg.model, cfg.optimizer, cfg.steps, cfg.eval_every,
        batch_size=cfg.batch_size, data_seed=cfg.data_seed,
        profile_every=every,
    )
    profile_rows = [r for r in records if r.split == "profile"]
    paths = write_records(profile_rows, out, "profile", _formats(args, cfg))
    ratios = sorted(r.full_rank_ratio for r in profile_rows)
    gaps = [r.gap for r in profile_rows]
    median_ratio = ratios[len(ratios) // 2]
    print(f"profiled {len(profile_rows)} rows every {every} steps; "
          f"median full_rank_ratio {median_ratio:.4f}  "
          f"positive norm gaps {sum(g > 0 for g in gaps)}/{len(gaps)}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def _run_sweep_cell(payload) -> Dict[str, Any]:
    cfg, cell = payload
    target, rule, group_size, repetition = cell
    row: Dict[str, Any] = {
        "target": target, "rule": rule,
        "group_size": group_size, "repetition": repetition,
        "final_val_loss": None, "best_val_loss": None,
        "steps": cfg.steps, "diverged": False,
    }
    settings = dataclasses.replace(
        cfg.optimizer,
        kind="muon_group",
        target=target,
        rule=rule,
        group_size=group_size,
        resample_each_step=cfg.optimizer.resample_each_step if rule == "random" else False,
    )
    try:
        records = train(
            cfg.model, settings, cfg.steps, cfg.eval_every,
            batch_size=cfg.batch_size, data_seed=cfg.data_seed,
        )
    except DivergedError as exc:
        row["steps"] = exc.step
        row["diverged"] = True
        return row
    vals = _collect_val(records)
    row["final_val_loss"] = vals[-1]
    row["best_val_loss"] = min(vals)
    return row


def _write_sweep(rows: List[Dict[str, Any]], out: Path, formats: Sequence[str]) -> List[Path]:
    paths = []
    if "csv" in formats:
        path = out / "sweep.csv"
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=SWEEP_FIELDS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: "" if row[k] is None else row[k] for k in SWEEP_FIELDS})
        paths.append(path)
    if "json" in formats:
        path = out / "sweep.jsonl"
        with open(path, "w") as f:
            for row in rows:
                f.write(json.dumps({k: row[k] for k in SWEEP_FIELDS}) + "\n")
        paths.append(path)
    return paths


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if not args.sweep:
        raise ConfigFileError("sweep requires --sweep PATH")
    spec = load_sweep_spec(args.sweep)
    for g in spec.group_size:
        if cfg.model.num_heads % g != 0:
            raise ConfigFileError(
                f"sweep group_size={g} does not divide model.num_heads={cfg.model.num_heads}"
            )
    cells = sweep_cells(spec)
    out = _out_dir(args, cfg)
    payloads = [(cfg, cell) for cell in cells]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            rows = list(pool.map(_run_sweep_cell, payloads))
    else:
        rows = [_run_sweep_cell(p) for p in payloads]
    paths = _write_sweep(rows, out, _formats(args, cfg))

    header = f"{'target':<12} {'rule':<9} {'g':>3} {'rep':>3} {'final':>9} {'best':>9} {'steps':>6} diverged"
    print(header)
    for row in rows:
        final = "-" if row["final_val_loss"] is None else f"{row['final_val_loss']:.4f}"
        best = "-" if row["best_val_loss"] is None else f"{row['best_val_loss']:.4f}"
        print(f"{row['target']:<12} {row['rule']:<9} {row['group_size']:>3} "
              f"{row['repetition']:>3} {final:>9} {best:>9} {row['steps']:>6} {row['diverged']}")
    for p in paths:
        print(f"wrote {p}")
    completed = sum(not row["diverged"] for row in rows)
    if completed == 0:
        print("every sweep cell diverged", file=sys.stderr)
        return 4
    return 0


def _oracle_params(pairs: Sequence[str]) -> Dict[str, str]:
    params = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigFileError(f"oracle parameters are KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        params[key] = value
    return params


def _parse_shape(text: str, name: str) -> Tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError as exc:
        raise ConfigFileError(f"{name} must look like 96x96, got {text!r}") from exc


ORACLE_KINDS = ("aligned-gain", "lr-transfer", "grouping")


def cmd_oracle(args) -> int:
    params = _oracle_params(args.params)
    try:
        if args.kind == "aligned-gain":
            k = int(params["k"])
            if "strengths" in params:
                strengths = [float(s) for s in params["strengths"].split(",")]
            else:
                strengths = [float(params.get("a", 1.0))] * k
            gain, rank_gap = aligned_closed_form(k, strengths)
            print(f"gain {gain!r}  rank_gap {rank_gap}")
            payload = {"kind": args.kind, "k": k, "strengths": strengths,
                       "gain": gain, "rank_gap": rank_gap}
        elif args.kind == "lr-transfer":
            base_lr = float(params["base_lr"])
            full = _parse_shape(params["full"], "full")
            group = _parse_shape(params["group"], "group")
            lr = transfer_lr(base_lr, full, group)
            print(f"lr {lr!r}")
            payload = {"kind": args.kind, "base_lr": base_lr,
                       "full": list(full), "group": list(group), "lr": lr}
        elif args.kind == "grouping":
            h = int(params["H"] if "H" in params else params["h"])
            g = int(params["g"])
            rule_kind = params.get("rule", "adjacent")
            seed = int(params["seed"]) if "seed" in params else None
            step = int(params.get("step", 0))
            if rule_kind == "random" and seed is None:
                seed = 0
            rule = GroupingRule(
                rule_kind, seed=seed,
                resample_each_step=(rule_kind == "random" and "step" in params),
            )
            grouping = build_groups(h, g, rule, step=step)
            for i, group in enumerate(grouping.groups):
                print(f"group {i}: {{{', '.join(str(x) for x in group)}}}")
            payload = {"kind": args.kind, "num_heads": h, "group_size": g,
                       "rule": rule_kind, "seed": seed, "step": step,
                       "groups": [list(group) for group in grouping.groups]}
        else:
            print(f"unknown oracle kind {args.kind!r}; valid kinds: "
                  f"{', '.join(ORACLE_KINDS)}", file=sys.stderr)
            return 2
    except KeyError as exc:
        raise ConfigFileError(f"oracle {args.kind} is missing parameter {exc}") from exc
    print(json.dumps(payload))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"oracle_{args.kind}.json").write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupmuon",
        description="Whitened-momentum optimization at full, head, and head-group granularity.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, fmt=True):
        p.add_argument("--config", help="run config TOML (defaults used when omitted)")
        p.add_argument("--out", help="output directory (overrides config)")
        if fmt:
            p.add_argument("--format", choices=("csv", "json", "both"),
                           help="record format (overrides config)")

    p = sub.add_parser("verify", help="run the property battery")
    add_common(p, fmt=False)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="run one training job")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("profile", help="train with rank/norm-gap profilers on")
    add_common(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("sweep", help="run the grouping grid")
    add_common(p)
    p.add_argument("--sweep", required=True, help="sweep spec TOML")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="print closed-form reference values")
    p.add_argument("kind", help=f"one of {', '.join(ORACLE_KINDS)}")
    p.add_argument("params", nargs="*", help="KEY=VALUE parameters")
    p.add_argument("--out", help="also write JSON here")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ConfigFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GroupMuonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
