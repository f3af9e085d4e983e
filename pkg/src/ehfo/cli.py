"""Experiment runner.

Subcommands::

    ehfo optimize --scenario S --out DIR [--seed N] [--force-general]
    ehfo greedy   --scenario S --out DIR [--seed N]
    ehfo evaluate --scenario S --policy P.csv --out DIR [--seed N]
    ehfo bits     --scenario S --out DIR [--seed N]
    ehfo sweep    --scenario S --out DIR --grid a,b,c [--jobs N] [--seed N]
    ehfo validate [--scenario S --policy P.csv] [--samples N] [--seed N]

Scenario files are INI text with [profile], [params] and [tx_mode] sections
(see the README).  Exit codes: 0 success, 1 usage error, 2 parse error or
infeasible input, 3 validation failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .oea import ProfileError
from .optimizer import (ConvergenceError, NotSimilarError, Policy, Scenario,
                        check_policy_feasible, check_similar, greedy_policy,
                        normalize_profile, optimize_joint_general,
                        optimize_joint_similar, optimize_rx_only,
                        policy_objective)
from .profiles import EHProfile, load_profile, solar_profile
from .rate_models import RateModelParams
from .reporting import (build_report, exact_rates, interval_bits,
                        read_policy_csv, render_bits_figure,
                        render_report_figures, render_sweep_figure,
                        write_manifest, write_policy_csv, write_summary_csv)
from .validate import run_suite, validate_policy_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


@dataclass
class ScenarioFile:
    scenario: Scenario
    echo: dict
    run_defaults: dict


def parse_scenario_file(path: str | Path) -> ScenarioFile:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    path = Path(path)
    if not path.exists():
        raise ProfileError(f"scenario file not found: {path}")
    try:
        cp.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ProfileError(f"scenario parse error: {exc}") from None

    try:
        params_sec = cp["params"]
        m = params_sec.getint("M")
        t_uses = params_sec.getfloat("T_uses")
        big_l = params_sec.getint("L")
        sigma2 = params_sec.getfloat("sigma2", fallback=1.0)
        delta = params_sec.getfloat("delta", fallback=3600.0)

        prof_sec = cp["profile"]
        scale_t = prof_sec.getfloat("scale_t", fallback=1.0)
        scale_r = prof_sec.getfloat("scale_r", fallback=1.0)
        if prof_sec.get("builtin", fallback=None) == "solar":
            profile = solar_profile(L=big_l, T=t_uses, delta=delta,
                                    scale_t=scale_t, scale_r=scale_r)
            prof_name = "builtin:solar"
        else:
            rel = prof_sec.get("path")
            if rel is None:
                raise ProfileError(
                    "profile section needs `path` or `builtin = solar`")
            ppath = (path.parent / rel).resolve()
            profile = load_profile(ppath, L=big_l, T=t_uses, delta=delta)
            profile = profile.scaled(scale_t, scale_r)
            prof_name = str(ppath)

        mode_sec = cp["tx_mode"]
        mode = mode_sec.get("mode")
        p_const = mode_sec.getfloat("p", fallback=None)
        params = RateModelParams(M=m, T=t_uses, sigma2=sigma2)
        scenario = Scenario(profile=profile, params=params, tx_mode=mode,
                            p_const=p_const)
    except (KeyError, ValueError, ProfileError) as exc:
        raise ProfileError(f"{path}: {exc}") from None

    run_defaults = dict(cp["run"]) if cp.has_section("run") else {}
    echo = {"scenario_file": str(path), "profile": prof_name,
            "M": m, "T_uses": t_uses, "L": big_l, "sigma2": sigma2,
            "delta": delta, "tx_mode": mode,
            "scale_t": scale_t, "scale_r": scale_r}
    if p_const is not None:
        echo["p"] = p_const
    return ScenarioFile(scenario=scenario, echo=echo,
                        run_defaults=run_defaults)


def _resolve_run_option(name: str, flag_value, file_defaults: dict,
                        flag_was_set: bool):
    """A run option may come from the scenario [run] section or the command
    line, not both."""
    if name in file_defaults:
        if flag_was_set:
            raise UsageError(
                f"--{name} given on the command line and in the scenario "
                f"[run] section; remove one")
        return file_defaults[name]
    return flag_value


def _resolve_seed(args, sf: ScenarioFile) -> int:
    val = _resolve_run_option("seed", args.seed, sf.run_defaults,
                              args.seed is not None)
    return int(val) if val is not None else 0


def _select_optimizer(s: Scenario, force_general: bool):
    if s.tx_mode == "constant_power":
        return "rx-only", optimize_rx_only
    e_t, e_r, _ = normalize_profile(s.profile.e_t, s.profile.e_r)
    if not force_general and check_similar(e_t, e_r, s.profile.L, s.profile.T):
        return "joint-similar", optimize_joint_similar
    return "joint-general", optimize_joint_general


def _write_report_files(report, outdir: Path, echo: dict, seed: int,
                        wall: float) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    write_policy_csv(report, outdir / "policy.csv")
    write_summary_csv(report, outdir / "summary.csv")
    render_report_figures(report, outdir)
    write_manifest(outdir / "manifest.txt", echo, seed, wall)


def cmd_optimize(args) -> int:
    sf = parse_scenario_file(args.scenario)
    s = sf.scenario
    t0 = time.perf_counter()
    label, solver = _select_optimizer(s, args.force_general)
    pol = solver(s)
    wall = time.perf_counter() - t0
    report = build_report(pol, s, wall_clock=wall)
    echo = dict(sf.echo)
    echo["optimizer"] = label
    _write_report_files(report, Path(args.out), echo, _resolve_seed(args, sf), wall)
    totals = report.totals
    print(f"{label}: total exact {totals['exact']:.6f}, "
          f"bound {totals[pol.objective_kind]:.6f} bits/use "
          f"({wall:.2f}s), feasible={report.feasible}")
    return EXIT_OK


def cmd_greedy(args) -> int:
    sf = parse_scenario_file(args.scenario)
    s = sf.scenario
    t0 = time.perf_counter()
    pol = greedy_policy(s)
    wall = time.perf_counter() - t0
    report = build_report(pol, s, wall_clock=wall)
    echo = dict(sf.echo)
    echo["optimizer"] = "greedy"
    _write_report_files(report, Path(args.out), echo, _resolve_seed(args, sf), wall)
    print(f"greedy: total exact {report.totals['exact']:.6f} bits/use")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    sf = parse_scenario_file(args.scenario)
    s = sf.scenario
    kind = "upper_u" if s.tx_mode == "constant_power" else "upper_ub"
    pol = read_policy_csv(Path(args.policy), objective_kind=kind)
    if pol.K != s.profile.K:
        raise ProfileError(
            f"policy has {pol.K} intervals, scenario has {s.profile.K}")
    if not check_policy_feasible(pol, s):
        print("policy violates energy neutrality or terminal equality",
              file=sys.stderr)
        return EXIT_PARSE
    t0 = time.perf_counter()
    report = build_report(pol, s, wall_clock=0.0)
    wall = time.perf_counter() - t0
    echo = dict(sf.echo)
    echo["policy_file"] = str(args.policy)
    _write_report_files(report, Path(args.out), echo, _resolve_seed(args, sf), wall)
    print(f"evaluated: total exact {report.totals['exact']:.6f} bits/use, "
          f"certificates={report.certificate.all_passed}")
    return EXIT_OK


def cmd_bits(args) -> int:
    sf = parse_scenario_file(args.scenario)
    s = sf.scenario
    t0 = time.perf_counter()
    _, solver = _select_optimizer(s, args.force_general)
    policies = {"oea": solver(s), "greedy": greedy_policy(s)}
    rows = []
    summary = []
    for name, pol in policies.items():
        bits = interval_bits(pol, s.params)
        for k in range(pol.K):
            rows.append({"k": k + 1, "policy": name, "b": float(bits[k]),
                         "b_floor": float(np.floor(bits[k]))})
        exact = float(np.sum(exact_rates(pol, s.params)))
        rounded = float(np.sum(exact_rates(pol, s.params, floor_bits=True)))
        summary.append({"policy": name, "total_exact": exact,
                        "total_exact_rounded": rounded,
                        "rounding_loss": exact - rounded})
    wall = time.perf_counter() - t0
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "bits.csv", "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "policy", "b", "b_floor"])
        for row in rows:
            w.writerow([row["k"], row["policy"], "%.12g" % row["b"],
                        "%.12g" % row["b_floor"]])
    with open(outdir / "bits_summary.csv", "w", newline="\n",
              encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "total_exact", "total_exact_rounded",
                    "rounding_loss"])
        for row in summary:
            w.writerow([row["policy"], "%.12g" % row["total_exact"],
                        "%.12g" % row["total_exact_rounded"],
                        "%.12g" % row["rounding_loss"]])
    render_bits_figure(rows, outdir)
    write_manifest(outdir / "manifest.txt", sf.echo, _resolve_seed(args, sf), wall)
    for row in summary:
        print(f"{row['policy']}: exact {row['total_exact']:.6f}, "
              f"floor-rounded {row['total_exact_rounded']:.6f} bits/use")
    return EXIT_OK


def _sweep_point(payload):
    """One sweep point: (index, x, scenario, force_general) -> result rows."""
    idx, x, s, force_general = payload
    if s.tx_mode == "constant_power":
        point_s = Scenario(profile=s.profile, params=s.params,
                           tx_mode="constant_power",
                           p_const=10.0 ** (x / 10.0))
    else:
        point_s = Scenario(profile=s.profile.scaled(scale_t=x),
                           params=s.params, tx_mode="harvesting")
    rows = []
    errors = []
    for name in ("oea", "greedy"):
        try:
            if name == "greedy":
                pol = greedy_policy(point_s)
            else:
                _, solver = _select_optimizer(point_s, force_general)
                pol = solver(point_s)
            bits = interval_bits(pol, point_s.params)
            totals = {
                "exact": float(np.sum(exact_rates(pol, point_s.params))),
                "exact_rounded": float(np.sum(
                    exact_rates(pol, point_s.params, floor_bits=True))),
                pol.objective_kind: policy_objective(pol, point_s.params),
            }
            for bound, val in totals.items():
                rows.append({"index": idx, "point": x, "policy": name,
                             "bound": bound, "total_rate": val})
        except (ConvergenceError, NotSimilarError, ValueError) as exc:
            errors.append({"index": idx, "point": x, "policy": name,
                           "error": str(exc)})
    return rows, errors


def cmd_sweep(args) -> int:
    sf = parse_scenario_file(args.scenario)
    grid_raw = _resolve_run_option("grid", args.grid, sf.run_defaults,
                                   args.grid is not None)
    if not grid_raw:
        raise UsageError("sweep requires --grid (or [run] grid in the scenario)")
    try:
        grid = [float(x) for x in str(grid_raw).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad grid {grid_raw!r}") from None
    if not grid:
        raise UsageError("sweep grid is empty")
    s = sf.scenario
    if s.tx_mode == "harvesting" and any(g <= 0 for g in grid):
        raise UsageError("profile multipliers must be > 0")

    t0 = time.perf_counter()
    payloads = [(i, x, s, args.force_general) for i, x in enumerate(grid)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, payloads))
    else:
        results = [_sweep_point(p) for p in payloads]
    wall = time.perf_counter() - t0

    rows = [r for batch, _ in results for r in batch]
    errors = [e for _, batch in results for e in batch]
    rows.sort(key=lambda r: (r["index"], r["policy"], r["bound"]))

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "sweep.csv", "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "policy", "bound", "total_rate"])
        for row in rows:
            w.writerow(["%.12g" % row["point"], row["policy"], row["bound"],
                        "%.12g" % row["total_rate"]])
    if errors:
        with open(outdir / "sweep_errors.csv", "w", newline="\n",
                  encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["point", "policy", "error"])
            for err in errors:
                w.writerow(["%.12g" % err["point"], err["policy"],
                            err["error"]])
    x_label = ("downlink SNR (dB)" if s.tx_mode == "constant_power"
               else "TX profile multiplier")
    render_sweep_figure(rows, outdir, x_label)
    echo = dict(sf.echo)
    echo["grid"] = ",".join("%g" % g for g in grid)
    write_manifest(outdir / "manifest.txt", echo, _resolve_seed(args, sf), wall)
    print(f"swept {len(grid)} points ({len(errors)} failures) in {wall:.1f}s "
          f"-> {outdir / 'sweep.csv'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.policy is not None:
        if args.scenario is None:
            raise UsageError("--policy requires --scenario")
        sf = parse_scenario_file(args.scenario)
        s = sf.scenario
        kind = "upper_u" if s.tx_mode == "constant_power" else "upper_ub"
        pol = read_policy_csv(Path(args.policy), objective_kind=kind)
        if pol.K != s.profile.K:
            raise ProfileError(
                f"policy has {pol.K} intervals, scenario has {s.profile.K}")
        results = validate_policy_file(pol, s)
    else:
        results = run_suite(args.samples, args.seed)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: {res.detail} (seed {res.seed})")
        if not res.passed:
            failed += 1
    if failed:
        print(f"{failed} check(s) failed", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="ehfo", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required,
                        help="scenario INI file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("optimize", help="solve and evaluate a scenario")
    common(sp)
    sp.add_argument("--force-general", action="store_true",
                    help="use the general joint solver even for similar profiles")
    sp.set_defaults(fn=cmd_optimize)

    sp = sub.add_parser("greedy", help="evaluate the spend-on-arrival baseline")
    common(sp)
    sp.set_defaults(fn=cmd_greedy)

    sp = sub.add_parser("evaluate", help="evaluate an explicit policy file")
    common(sp)
    sp.add_argument("--policy", required=True, help="policy CSV (k,p,q,tau)")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("bits", help="feedback-bit tables for oea and greedy")
    common(sp)
    sp.add_argument("--force-general", action="store_true")
    sp.set_defaults(fn=cmd_bits)

    sp = sub.add_parser("sweep", help="rate vs SNR or harvester-scale sweep")
    common(sp)
    sp.add_argument("--grid", default=None,
                    help="comma-separated SNR dB points (constant power) or "
                         "TX profile multipliers (harvesting)")
    sp.add_argument("--force-general", action="store_true")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("validate", help="run the property suite")
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--policy", default=None,
                    help="check this policy file instead of the full suite")
    sp.add_argument("--samples", type=int, default=100,
                    help="sample-count scale for the randomized checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="unused; accepted for symmetry")
    sp.set_defaults(fn=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProfileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConvergenceError as exc:
        print(f"solver did not certify optimality: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
