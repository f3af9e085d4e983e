"""Evaluation reports: per-interval tables, totals, feasibility and
certificate summaries, CSV output and the companion figures.

CSV files are byte-identical across runs with the same config and seed; the
run manifest additionally records wall-clock and library versions and is
outside that guarantee.
"""
from __future__ import annotations

import csv
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .montecarlo import SimConfig  # noqa: F401  (re-exported for CLI use)
from .optimizer import (CertificateReport, Policy, Scenario,
                        certify_optimality, check_policy_feasible)
from .rate_models import (RateModelParams, bound_u_value, bound_ub_value,
                          feedback_bits, _rate_exact_core)

_FMT = "%.12g"
_CHAIN_SLACK = 1e-9


@dataclass(frozen=True)
class EvalReport:
    """Per-interval evaluation of a policy under all three rate models."""

    policy: Policy
    b: np.ndarray
    rate_exact: np.ndarray
    rate_u: np.ndarray
    rate_ub: np.ndarray
    feasible: bool
    certificate: CertificateReport
    wall_clock: float

    @property
    def totals(self) -> dict[str, float]:
        return {"exact": float(np.sum(self.rate_exact)),
                "upper_u": float(np.sum(self.rate_u)),
                "upper_ub": float(np.sum(self.rate_ub))}


def interval_bits(pol: Policy, params: RateModelParams) -> np.ndarray:
    """Per-interval feedback bits; 0 where no feedback time is spent."""
    out = np.zeros(pol.K)
    for k in range(pol.K):
        if pol.tau[k] > 0.0 and pol.q[k] > 0.0:
            out[k] = feedback_bits(pol.q[k], pol.tau[k], params.sigma2)
    return out


def exact_rates(pol: Policy, params: RateModelParams,
                floor_bits: bool = False) -> np.ndarray:
    """Per-interval ergodic rates; optionally with floor-rounded bits."""
    bits = interval_bits(pol, params)
    out = np.zeros(pol.K)
    for k in range(pol.K):
        if pol.p[k] <= 0.0:
            continue
        b = math.floor(bits[k]) if floor_bits else bits[k]
        out[k] = _rate_exact_core(float(pol.p[k]), float(pol.tau[k]), b, params)
    return out


def build_report(pol: Policy, s: Scenario,
                 wall_clock: float = 0.0) -> EvalReport:
    """Evaluate a policy under all three models and certify it."""
    params = s.params
    b = interval_bits(pol, params)
    r_exact = exact_rates(pol, params)
    r_u = np.asarray(bound_u_value(pol.p, pol.q, pol.tau, params), dtype=float)
    r_ub = np.asarray(bound_ub_value(pol.p, pol.q, pol.tau, params), dtype=float)
    if np.any(r_exact > r_u + _CHAIN_SLACK) or np.any(r_u > r_ub + _CHAIN_SLACK):
        raise AssertionError("rate-model ordering violated in report rows")
    return EvalReport(policy=pol, b=b, rate_exact=r_exact, rate_u=r_u,
                      rate_ub=r_ub,
                      feasible=check_policy_feasible(pol, s),
                      certificate=certify_optimality(pol, s),
                      wall_clock=wall_clock)


def _fmt(x: float) -> str:
    return _FMT % float(x)


def write_policy_csv(report: EvalReport, path: Path) -> None:
    pol = report.policy
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "p", "q", "tau", "b",
                    "rate_exact", "rate_u", "rate_ub"])
        for k in range(pol.K):
            w.writerow([k + 1, _fmt(pol.p[k]), _fmt(pol.q[k]),
                        _fmt(pol.tau[k]), _fmt(report.b[k]),
                        _fmt(report.rate_exact[k]), _fmt(report.rate_u[k]),
                        _fmt(report.rate_ub[k])])


def write_summary_csv(report: EvalReport, path: Path) -> None:
    cert = report.certificate
    totals = report.totals
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerow(["objective_kind", report.policy.objective_kind])
        for name, val in totals.items():
            w.writerow([f"total_{name}", _fmt(val)])
        w.writerow(["feasible", str(report.feasible).lower()])
        w.writerow(["cert_monotone", str(cert.monotone).lower()])
        w.writerow(["cert_buffer_emptying", str(cert.buffer_emptying).lower()])
        w.writerow(["cert_terminal_equality",
                    str(cert.terminal_equality).lower()])


def read_policy_csv(path: Path, objective_kind: str = "upper_ub") -> Policy:
    """Load a policy table (columns k, p, q, tau at least)."""
    p: list[float] = []
    q: list[float] = []
    tau: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"k", "p", "q", "tau"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: policy file needs columns {sorted(required)}")
        for row in reader:
            p.append(float(row["p"]))
            q.append(float(row["q"]))
            tau.append(float(row["tau"]))
    if not p:
        raise ValueError(f"{path}: no policy rows")
    return Policy(p=np.array(p), q=np.array(q), tau=np.array(tau),
                  objective_kind=objective_kind)


def write_manifest(path: Path, config_echo: dict, seed: int,
                   wall_clock: float) -> None:
    import matplotlib
    import scipy

    from . import __version__
    lines = [f"ehfo_version={__version__}",
             f"python={sys.version.split()[0]}",
             f"numpy={np.__version__}",
             f"scipy={scipy.__version__}",
             f"matplotlib={matplotlib.__version__}",
             f"seed={seed}",
             f"wall_clock_s={wall_clock:.3f}"]
    for key in sorted(config_echo):
        lines.append(f"config.{key}={config_echo[key]}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    return plt


def render_report_figures(report: EvalReport, outdir: Path) -> list[Path]:
    plt = _pyplot()
    pol = report.policy
    k = np.arange(1, pol.K + 1)
    made = []

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.step(k, pol.p, where="mid", label="p (J/use)")
    ax1.set_ylabel("transmit energy / use")
    ax1.legend(loc="upper left")
    ax1b = ax1.twinx()
    ax1b.step(k, pol.q, where="mid", color="tab:orange", label="q (J/frame)")
    ax1b.set_ylabel("feedback energy / frame")
    ax1b.legend(loc="upper right")
    ax2.step(k, pol.tau, where="mid", color="tab:green", label="tau (uses)")
    ax2.set_xlabel("interval k")
    ax2.set_ylabel("feedback duration")
    ax2.legend(loc="upper left")
    fig.tight_layout()
    path = outdir / "allocation.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    made.append(path)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.step(k, report.rate_ub, where="mid", label="upper bound (+1W)")
    ax.step(k, report.rate_u, where="mid", label="upper bound")
    ax.step(k, report.rate_exact, where="mid", label="exact")
    ax.set_xlabel("interval k")
    ax.set_ylabel("rate (bits/use)")
    ax.legend()
    fig.tight_layout()
    path = outdir / "rates.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    made.append(path)
    return made


def render_sweep_figure(rows: list[dict], outdir: Path,
                        x_label: str) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    series: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for row in rows:
        series.setdefault((row["policy"], row["bound"]), []).append(
            (row["point"], row["total_rate"]))
    for (policy, bound), pts in sorted(series.items()):
        pts.sort()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        style = "-" if policy != "greedy" else "--"
        ax.plot(xs, ys, style, marker="o", ms=3,
                label=f"{policy} ({bound})")
    ax.set_xlabel(x_label)
    ax.set_ylabel("total rate (bits/use)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = outdir / "sweep.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_bits_figure(bit_rows: list[dict], outdir: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    series: dict[str, list[tuple[int, float]]] = {}
    for row in bit_rows:
        series.setdefault(row["policy"], []).append((row["k"], row["b"]))
    for policy, pts in sorted(series.items()):
        pts.sort()
        ax.step([p[0] for p in pts], [p[1] for p in pts], where="mid",
                label=policy)
    ax.set_xlabel("interval k")
    ax.set_ylabel("feedback bits per frame")
    ax.legend()
    fig.tight_layout()
    path = outdir / "bits.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
