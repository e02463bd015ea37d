"""Command-line orchestrator: job fan-out, checks, artifact emission."""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np

from . import artifacts, capspec, escape, models, trapping
from .config import COMMANDS, RunConfig, parse_config
from .errors import (
    ConfigError,
    DomainError,
    InvalidHorizon,
    NhtrapError,
    UnderResolved,
    ValidationError,
)
from .flow import integrate_flow
from .kerr import KerrParams

EXIT_PASS = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3

# errors below are caused by inputs, not by the numerics
_CONFIG_FAULTS = (ConfigError, DomainError, UnderResolved, InvalidHorizon)

DEFAULT_H_LIST = (0.1, 0.05, 0.025, 0.0125)
UHP_SAMPLES = 50


@dataclass
class Outcome:
    """Everything a command produces, before the single writer runs."""

    summaries: list = field(default_factory=list)
    csvs: dict = field(default_factory=dict)
    jsons: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


def resolve_workers(cfg: RunConfig) -> int:
    """NHTRAP_WORKERS env wins, then the config key, then logical cores."""
    env = os.environ.get("NHTRAP_WORKERS")
    if env is not None:
        try:
            workers = int(env, 10)
        except ValueError:
            raise ValidationError(
                f"NHTRAP_WORKERS must be an integer, got {env!r}",
                key="workers",
            )
        if workers < 1:
            raise ValidationError(
                f"NHTRAP_WORKERS must be at least 1, got {workers}",
                key="workers",
            )
        return workers
    if cfg.workers is not None:
        return cfg.workers
    return os.cpu_count() or 1


def _check_writable(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=directory, prefix=".probe."):
            pass
    except OSError as exc:
        raise ValidationError(
            f"not writable: {exc}", key="output_dir"
        ) from exc


def _run_jobs(jobs, workers: int):
    """Execute pure jobs, preserving submission order in the results."""
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return [future.result() for future in [pool.submit(j) for j in jobs]]


def _spectrum_params(cfg: RunConfig):
    if cfg.model == "toy_sech2":
        return None
    if cfg.model == "schw_radial":
        return {"mass": cfg.kerr_mass}
    return {"mass": cfg.kerr_mass, "spin": cfg.kerr_spin}


def _cmd_trap_find(cfg: RunConfig, workers: int) -> Outcome:
    betas = tuple(cfg.beta_list if cfg.beta_list is not None else (0.0,))
    kerr = cfg.kerr
    charts = _run_jobs(
        [partial(trapping.linearization, beta, kerr) for beta in betas],
        workers,
    )
    out = Outcome()
    for chart in charts:
        out.summaries.append(
            f"r(beta)={chart.trapped_radius:.12f}, "
            f"exponent={chart.normal_exponent:.12f}"
        )
    out.jsons["certificate.json"] = {
        "command": "trap-find",
        "kerr": {"mass": kerr.mass, "spin": kerr.spin},
        "entries": [
            {
                "beta": chart.beta,
                "trapped_radius": chart.trapped_radius,
                "normal_exponent": chart.normal_exponent,
                "potential_curvature": chart.potential_curvature,
                "lin_matrix": chart.lin_matrix,
            }
            for chart in charts
        ],
    }
    return out


def _cmd_trap_certify(cfg: RunConfig, workers: int) -> Outcome:
    spins = tuple(cfg.a_list if cfg.a_list is not None else (cfg.kerr_spin,))
    jobs = [
        partial(
            trapping.certify,
            cfg.lam,
            KerrParams(mass=cfg.kerr_mass, spin=spin),
            horizon=cfg.horizon,
            r_max=cfg.r_max,
            tol=cfg.tolerances["flow"],
        )
        for spin in spins
    ]
    certs = _run_jobs(jobs, workers)
    out = Outcome()
    entries = []
    for spin, cert in zip(spins, certs):
        verdict = "PASS" if cert.passed else "FAIL"
        out.summaries.append(
            f"trap-certify a={spin:g}: {verdict} "
            f"(theta_rate={cert.theta_rate:.6g}, "
            f"tangential_slope={cert.tangential_slope:.6g})"
        )
        entry = trapping.certificate_to_dict(cert)
        entry["spin"] = spin
        entries.append(entry)
        if not cert.passed:
            out.failures.append(
                {
                    "check": "trap-certify",
                    "spin": spin,
                    "reasons": list(cert.reasons),
                }
            )
    out.jsons["certificate.json"] = {
        "command": "trap-certify",
        "mass": cfg.kerr_mass,
        "lambda": cfg.lam,
        "certificates": entries,
    }
    return out


def _escape_one(model, saddle_guess, h: float, seed: int) -> dict:
    if saddle_guess is None:
        pair = escape.build_defining_pair(model)
    else:
        pair = escape.build_defining_pair(model, saddle_guess=saddle_guess)
    spec, _ = escape.make_escape_spec(pair, h=h)
    return escape.escape_report(model, pair, spec, seed=seed)


def _cmd_escape_check(cfg: RunConfig, workers: int) -> Outcome:
    jobs = [
        partial(
            _escape_one, models.toy_barrier_model(), None, cfg.h, cfg.seed
        ),
        partial(
            _escape_one,
            models.reduced_kerr_model(cfg.kerr, beta=0.0),
            (3.0 * cfg.kerr_mass, 0.0),
            cfg.h,
            cfg.seed,
        ),
    ]
    names = ("toy", "reduced_kerr")
    reports = _run_jobs(jobs, workers)
    out = Outcome()
    for name, report in zip(names, reports):
        n_violations = len(report["violations"])
        out.summaries.append(
            f"escape-check {name}: c1={report['c1']:.6g}, "
            f"C={report['C']:.6g}, N={report['N']}, "
            f"violations={n_violations}, "
            f"bracket_min={report['bracket_min']:.6g}"
        )
        for check, bad in (
            ("c1_positive", not report["c1"] > 0.0),
            ("sign_violations", n_violations != 0),
            ("order_exponent", report["N"] > 4),
            ("bracket_positive", not report["bracket_min"] > 0.0),
        ):
            if bad:
                out.failures.append(
                    {"check": check, "model": name, "report": report}
                )
    out.jsons["escape_report.json"] = {
        "command": "escape-check",
        "h": cfg.h,
        "seed": cfg.seed,
        "models": dict(zip(names, reports)),
    }
    return out


def _gap_job(cfg: RunConfig, h: float):
    problem = capspec.build_model(
        cfg.model, _spectrum_params(cfg), h=h
    )
    return capspec.spectral_gap(problem, window=cfg.window)


def _cmd_spectrum_gap(cfg: RunConfig, workers: int) -> Outcome:
    h_list = tuple(cfg.h_list if cfg.h_list is not None else DEFAULT_H_LIST)
    reports = _run_jobs(
        [partial(_gap_job, cfg, h) for h in h_list], workers
    )
    out = Outcome()
    gap_rows, eig_rows = [], []
    for report in reports:
        norm_z0 = report.resolvent_axis[0][1]
        gap_rows.append(
            (report.h, report.gap, report.nu, norm_z0, report.runtime_s)
        )
        for z, residual in zip(report.eigenvalues, report.residuals):
            eig_rows.append((report.h, z.real, z.imag, residual))
        out.summaries.append(
            f"spectrum-gap {cfg.model} h={report.h:g}: "
            f"gap={report.gap:.6g}, nu={report.nu:.6g}, "
            f"n={report.n_points}"
        )
        if not report.gap > 0.0:
            out.failures.append(
                {"check": "gap_positive", "h": report.h, "gap": report.gap}
            )
    if len(reports) >= 2:
        nu_prev, nu_last = reports[-2].nu, reports[-1].nu
        consistency = abs(nu_last - nu_prev) / abs(nu_prev)
        tol = cfg.tolerances["consistency"]
        verdict = "PASS" if consistency <= tol else "FAIL"
        out.summaries.append(
            f"spectrum-gap {cfg.model}: nu_floor="
            f"{min(r.nu for r in reports):.6g}, "
            f"consistency={consistency:.4g} ({verdict})"
        )
        if consistency > tol:
            out.failures.append(
                {
                    "check": "nu_consistency",
                    "value": consistency,
                    "tolerance": tol,
                }
            )
    out.csvs["gaps.csv"] = (artifacts.GAPS_HEADER, gap_rows)
    out.csvs["eigenvalues.csv"] = (artifacts.EIGENVALUES_HEADER, eig_rows)
    return out


def _cmd_spectrum_resolvent(cfg: RunConfig, workers: int) -> Outcome:
    problem = capspec.build_model(
        cfg.model, _spectrum_params(cfg), h=cfg.h
    )
    report = capspec.spectral_gap(problem, window=cfg.window)
    rng = np.random.default_rng(cfg.seed)
    samples = [
        complex(
            rng.uniform(-cfg.window, cfg.window),
            cfg.window * (1.0 - rng.uniform(0.0, 1.0)),
        )
        for _ in range(UHP_SAMPLES)
    ]
    norms = _run_jobs(
        [partial(capspec.resolvent_norm, problem, z) for z in samples],
        workers,
    )
    out = Outcome()
    slack = 1.0 + 10.0 * np.finfo(float).eps
    violations = 0
    for z, norm in zip(samples, norms):
        if norm > slack / z.imag:
            violations += 1
            out.failures.append(
                {
                    "check": "upper_half_plane_bound",
                    "z": {"re": z.real, "im": z.imag},
                    "norm": norm,
                    "bound": 1.0 / z.imag,
                }
            )
    norm_z0 = report.resolvent_axis[0][1]
    out.summaries.append(
        f"spectrum-resolvent {cfg.model} h={cfg.h:g}: "
        f"norm_axis_z0={norm_z0:.6g}, "
        f"uhp_violations={violations}/{UHP_SAMPLES}"
    )
    out.csvs["gaps.csv"] = (
        artifacts.GAPS_HEADER,
        [(report.h, report.gap, report.nu, norm_z0, report.runtime_s)],
    )
    out.csvs["eigenvalues.csv"] = (
        artifacts.EIGENVALUES_HEADER,
        [
            (report.h, z.real, z.imag, residual)
            for z, residual in zip(report.eigenvalues, report.residuals)
        ],
    )
    return out


def _cmd_flow_integrate(cfg: RunConfig, workers: int) -> Outcome:
    model = models.full_kerr_model(cfg.kerr)
    start = np.array(
        [
            cfg.orbit["r"],
            cfg.orbit["theta"],
            cfg.orbit["phi"],
            cfg.orbit["xi"],
            cfg.orbit["alpha"],
            cfg.orbit["beta"],
        ]
    )
    times = np.linspace(0.0, cfg.orbit_time, cfg.orbit_samples)
    tol = cfg.tolerances["flow"]
    beta_ref = float(start[5])

    def row_at(state, t: float):
        return (
            t,
            state[0],
            state[1],
            state[2],
            state[3],
            state[4],
            state[5],
            model.evaluate(state),
            beta_ref,
            model.conserved_list["carter"](state),
        )

    def integrate():
        rows = [row_at(start, 0.0)]
        state = start
        for t_prev, t_next in zip(times, times[1:]):
            result = integrate_flow(
                model, state, t_next - t_prev, tol=tol, with_jacobian=False
            )
            state = result.end_state
            rows.append(row_at(state, float(t_next)))
        return rows

    rows = _run_jobs([integrate], workers)[0]
    out = Outcome()
    drift = {
        name: max(abs(row[col] - rows[0][col]) for row in rows)
        for name, col in (("p", 7), ("beta", 6), ("carter", 9))
    }
    allowance = cfg.tolerances["drift"]
    out.summaries.append(
        f"flow-integrate T={cfg.orbit_time:g}: "
        f"drift_p={drift['p']:.3e}, drift_beta={drift['beta']:.3e}, "
        f"drift_carter={drift['carter']:.3e}"
    )
    for name, value in drift.items():
        if value > allowance:
            out.failures.append(
                {
                    "check": "conserved_drift",
                    "quantity": name,
                    "drift": value,
                    "tolerance": allowance,
                }
            )
    out.csvs["orbit.csv"] = (artifacts.ORBIT_HEADER, rows)
    return out


def _cmd_perturb(cfg: RunConfig, workers: int) -> Outcome:
    report = _run_jobs(
        [
            partial(
                trapping.perturb_and_recertify,
                cfg.kerr,
                cfg.lam,
                cfg.epsilon,
                cfg.seed,
                horizon=cfg.horizon,
                r_max=cfg.r_max,
            )
        ],
        workers,
    )[0]
    out = Outcome()
    out.summaries.append(
        f"perturb eps={cfg.epsilon:g} seed={cfg.seed}: "
        f"displacement={report.displacement:.4g} "
        f"({report.displacement_factor:.3g} eps), "
        f"exponent_shift={report.exponent_shift:.4g}"
    )
    if report.displacement_factor > 5.0:
        out.failures.append(
            {
                "check": "saddle_displacement",
                "factor": report.displacement_factor,
                "limit": 5.0,
            }
        )
    if report.exponent_shift > 0.05:
        out.failures.append(
            {
                "check": "exponent_shift",
                "shift": report.exponent_shift,
                "limit": 0.05,
            }
        )
    if not report.certificate.passed:
        out.failures.append(
            {
                "check": "recertify",
                "reasons": list(report.certificate.reasons),
            }
        )
    out.jsons["certificate.json"] = {
        "command": "perturb",
        "epsilon": report.epsilon,
        "seed": report.seed,
        "displacement": report.displacement,
        "displacement_factor": report.displacement_factor,
        "exponent_shift": report.exponent_shift,
        "certificate": trapping.certificate_to_dict(report.certificate),
    }
    return out


_HANDLERS = {
    "trap-find": _cmd_trap_find,
    "trap-certify": _cmd_trap_certify,
    "escape-check": _cmd_escape_check,
    "spectrum-gap": _cmd_spectrum_gap,
    "spectrum-resolvent": _cmd_spectrum_resolvent,
    "flow-integrate": _cmd_flow_integrate,
    "perturb": _cmd_perturb,
}


def _write_outcome(directory: Path, outcome: Outcome) -> None:
    """Single writer: every artifact lands atomically from one place."""
    for name, (header, rows) in outcome.csvs.items():
        artifacts.write_csv(directory / name, header, rows)
    for name, payload in outcome.jsons.items():
        artifacts.write_json(directory / name, payload)
    artifacts.write_failures(directory, outcome.failures)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nhtrap",
        description=(
            "Trapped-set certification and barrier spectrum workflows"
        ),
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument(
        "--config", required=True, type=Path, help="run configuration file"
    )
    parser.add_argument(
        "--seed", type=int, default=None, help="override the config seed"
    )
    parser.add_argument(
        "--out", type=Path, default=None, help="override the output dir"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}",
              file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        cfg = parse_config(text, fallback_command=args.command)
        if args.seed is not None:
            if args.seed < 0:
                raise ValidationError(
                    f"must be nonnegative, got {args.seed}", key="seed"
                )
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, output_dir=args.out)
        workers = resolve_workers(cfg)
        _check_writable(cfg.output_dir)
    except _CONFIG_FAULTS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        outcome = _HANDLERS[cfg.command](cfg, workers)
    except _CONFIG_FAULTS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except NhtrapError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        artifacts.write_failures(
            cfg.output_dir,
            [
                {
                    "check": "run",
                    "error": str(exc),
                    "type": type(exc).__name__,
                }
            ],
        )
        return EXIT_NUMERICAL_FAILURE

    _write_outcome(cfg.output_dir, outcome)
    for line in outcome.summaries:
        print(line)
    return EXIT_PASS if not outcome.failures else EXIT_CHECK_FAILURE


if __name__ == "__main__":
    sys.exit(main())
