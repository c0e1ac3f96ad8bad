"""Command-line entry point.

Every subcommand prints a comma-separated table on stdout; with ``--out`` the
CSV files and SVG figures are also written to that directory.

Exit codes: 0 success, 2 configuration error, 3 attack-free divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from ..control import ConfigError
from .campaign import DivergenceWithoutAttack, build_case, condition_reports, run_casestudy, run_montecarlo
from .config import AttackSpec, ExperimentConfig, merge_overrides, preset_config
from .export import export

EXIT_CONFIG = 2
EXIT_DIVERGED = 3

log = logging.getLogger("stealthsim")


def _resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("STEALTHSIM_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"STEALTHSIM_SEED must be an integer, got {env!r}") from exc


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=None, help="campaign seed (default: $STEALTHSIM_SEED or 0)")
    g.add_argument("--out", default=None, help="directory for CSV/SVG output")
    g.add_argument("--runs", type=int, default=None, help="number of Monte Carlo runs")
    g.add_argument("--horizon", type=int, default=None, help="steps per run")
    g.add_argument("--workers", type=int, default=None, help="worker processes")
    g.add_argument("--config", default=None, help="JSON experiment config")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _attack_opts(p: argparse.ArgumentParser):
    p.add_argument("--case", choices=["pendulum", "vehicle"], default="pendulum")
    p.add_argument("--strategy", choices=["estimate_based", "open_loop", "lti"], default=None)
    p.add_argument("--s0", type=_floats, default=None, help="initial offset, comma separated")
    p.add_argument("--b-zeta", type=float, default=None, help="estimation-error radius")
    p.add_argument("--start-step", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="stealthsim", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="attack-free closed-loop runs")
    p.add_argument("--case", choices=["pendulum", "vehicle"], default="pendulum")

    p = sub.add_parser("attack", parents=[common], help="paired attacked / attack-free runs")
    _attack_opts(p)

    p = sub.add_parser("detect", parents=[common], help="calibrate detectors and report alarm statistics")
    _attack_opts(p)
    p.add_argument("--target-fa", type=float, default=None)

    p = sub.add_parser("check", parents=[common], help="evaluate attackability conditions")
    _attack_opts(p)

    p = sub.add_parser("stealth", parents=[common], help="KL budget and epsilon for the preset attack")
    _attack_opts(p)

    sub.add_parser("montecarlo", parents=[common], help="campaign from a JSON config (--config)")

    p = sub.add_parser("casestudy", parents=[common], help="full preset case study")
    p.add_argument("name", help="pendulum or vehicle")
    return parser


def _config_from_args(args, with_attack: bool) -> ExperimentConfig:
    seed = _resolve_seed(args.seed)
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None or os.environ.get("STEALTHSIM_SEED") is not None:
            cfg = cfg.replace(seed=seed)
    else:
        cfg = preset_config(getattr(args, "case", "pendulum"), seed=seed)
    over = {}
    if args.runs is not None:
        over["n_runs"] = args.runs
    if args.horizon is not None:
        over["horizon"] = args.horizon
    if args.workers is not None:
        over["workers"] = args.workers
    if args.out is not None:
        over["out_dir"] = args.out
    cfg = merge_overrides(cfg, over)
    if not with_attack:
        return cfg.replace(attack=None)
    a = cfg.attack or AttackSpec()
    if getattr(args, "strategy", None):
        a = AttackSpec(args.strategy, a.s0, a.b_zeta, a.start_step)
    if getattr(args, "s0", None) is not None:
        a.s0 = list(args.s0)
    if getattr(args, "b_zeta", None) is not None:
        a.b_zeta = args.b_zeta
    if getattr(args, "start_step", None) is not None:
        a.start_step = args.start_step
    if getattr(args, "target_fa", None) is not None and cfg.detectors is not None:
        cfg.detectors.target_fa = args.target_fa
    return cfg.replace(attack=a)


def _emit(rows: List[list], header: List[str], out=None):
    w = csv.writer(out or sys.stdout, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["nan" if isinstance(v, float) and np.isnan(v) else (f"{v:.6g}" if isinstance(v, float) else v) for v in r])


def _export(result, out_dir):
    if out_dir:
        files = export(result, "csv", out_dir) + export(result, "svg", out_dir)
        for f in files:
            log.info("wrote %s", f)


def _print_runs(result):
    runs = result.runs
    header = list(runs[0]) if runs else []
    _emit([[r[k] for k in header] for r in runs], header)


def _print_alarms(result):
    rows = []
    for det in result.detectors:
        st = result.alarm_stats[det.kind]
        rows.append(
            [det.kind, float(det.threshold), float(det.cusum_drift), st.p_fa, st.p_td, st.p_e,
             float(st.per_step_fa.mean()), float(st.per_step_td.mean()),
             float(np.max(np.abs(st.per_step_td - st.per_step_fa)))]
        )
    _emit(rows, ["detector", "threshold", "drift", "p_fa", "p_td", "p_e", "mean_fa_rate", "mean_td_rate", "max_rate_gap"])


def _print_conditions(stealth, att):
    rows = []
    for tag, rep in (("stealth", stealth), ("attackability", att)):
        if rep is None:
            continue
        for c in rep.conditions:
            rows.append([tag, c.name, c.lhs, c.rhs, int(c.passed)])
        rows.append([tag, "verdict", float("nan"), float("nan"), int(rep.verdict)])
        for k, v in rep.quantities.items():
            if isinstance(v, (int, float, np.floating)) and not isinstance(v, bool):
                rows.append([tag, k, float(v), float("nan"), ""])
    _emit(rows, ["report", "item", "lhs", "rhs", "pass"])


def _print_stealth(stealth):
    q = stealth.quantities
    _emit(
        [[stealth.kl_bound, stealth.epsilon, stealth.epsilon_gap, int(stealth.strict), int(stealth.verdict), q.get("horizon", float("nan"))]],
        ["kl_bound", "epsilon", "one_minus_epsilon", "strict", "conditions_pass", "horizon"],
    )


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    cmd = args.command
    if cmd == "simulate":
        cfg = _config_from_args(args, with_attack=False).replace(detectors=None)
        res = run_montecarlo(cfg)
        _print_runs(res)
        _export(res, cfg.out_dir)
    elif cmd == "attack":
        cfg = _config_from_args(args, with_attack=True).replace(detectors=None)
        res = run_montecarlo(cfg)
        _print_runs(res)
        _export(res, cfg.out_dir)
    elif cmd == "detect":
        cfg = _config_from_args(args, with_attack=True)
        res = run_montecarlo(cfg)
        _print_alarms(res)
        _export(res, cfg.out_dir)
    elif cmd in ("check", "stealth"):
        cfg = _config_from_args(args, with_attack=True)
        stealth, att = condition_reports(cfg, build_case(cfg))
        if cmd == "check":
            _print_conditions(stealth, att)
        else:
            _print_stealth(stealth)
    elif cmd == "montecarlo":
        if not args.config:
            raise ConfigError("montecarlo needs --config")
        cfg = _config_from_args(args, with_attack=True)
        res = run_montecarlo(cfg)
        if res.alarm_stats:
            _print_alarms(res)
        else:
            _print_runs(res)
        _export(res, cfg.out_dir)
    elif cmd == "casestudy":
        if args.name not in ("pendulum", "vehicle"):
            raise ConfigError(f"unknown case study {args.name!r}; valid: ['pendulum', 'vehicle']")
        args.case = args.name
        cfg = _config_from_args(args, with_attack=True)
        over = {k: v for k, v in cfg.to_dict().items() if k != "seed"}
        res = run_casestudy(args.name, over, seed=cfg.seed)
        _print_alarms(res)
        _print_conditions(res.stealth, res.attackability)
        _export(res, cfg.out_dir)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    try:
        return run(argv)
    except DivergenceWithoutAttack as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
