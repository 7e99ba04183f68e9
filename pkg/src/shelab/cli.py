"""Command-line front end: flat key=value configs, deterministic artifacts.

Every run reads one config file, resolves all defaults, runs one experiment,
and writes a summary record plus per-datum CSVs into the output directory.
Outputs carry the fully resolved config (prefixed ``config.``) so any number
in any artifact can be reproduced from the artifact alone; nothing in the
outputs depends on wall-clock time, so reruns are byte-identical.

Exit status: 0 when the run's verdict passes, 2 when the experiment ran but
its verdict failed, 1 on any error (bad config, unknown keys, blowup, ...).

The ``SHELAB_WORKERS`` environment variable is accepted and validated for
compatibility with batch schedulers; replica blocks are vectorized, so it
never affects results.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from shelab.experiments import (
    compare_moments,
    convergence_rate,
    lyapunov_estimate,
    temporal_increment_scaling,
)
from shelab.kernels import (
    BOUNDARY_TOL,
    DEFAULT_K,
    StableKernel,
    default_box,
    discrete_l2_mass,
    discrete_transition,
    green_function_bound,
    kernel_comparison_rows,
    l2_kernel_identity,
    lclt_sup_error,
)
from shelab.simulator import SheConfig, SigmaSpec, default_dt, simulate
from shelab.walks import WalkModel, make_simple_walk, make_stable_tail_walk

SUBCOMMANDS = (
    "kernel-check",
    "lclt",
    "green-bound",
    "simulate",
    "converge",
    "compare-moments",
    "lyapunov",
    "holder",
)

L2_IDENTITY_RTOL = 1e-5  # quadrature-limited slack for the convolution identity
HOLDER_EXPONENT_TOL = 0.2  # |fitted exponent - 1| budget for the increment study


class CliError(Exception):
    """User-facing configuration or I/O problem."""


# ---------------------------------------------------------------------------
# config schema


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved parameters of one run; equality is exact reproducibility."""

    subcommand: str
    walk_kind: str
    walk_alpha: float
    walk_truncation_radius: int
    eps: float
    out: str
    seed: int
    replica: int
    N: int
    T: float | None = None
    dt: float | None = None
    sigma_kind: str | None = None
    sigma_lam: float | None = None
    sigma_clip: float | None = None
    sigma_bar_kind: str | None = None
    sigma_bar_lam: float | None = None
    sigma_bar_clip: float | None = None
    scheme: str | None = None
    replicas: int | None = None
    t: float | None = None
    K: float | None = None
    boundary_tol: float | None = None
    nodes: int | None = None
    snapshots: int | None = None
    ladder: tuple[float, ...] | None = None
    rho: float | None = None
    points: tuple[int, ...] | None = None
    order: int | None = None
    k: int | None = None
    t0: float | None = None
    t1: float | None = None
    gaps: tuple[float, ...] | None = None


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split())


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split())


# config key -> (RunConfig attribute, parser)
_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "walk.kind": ("walk_kind", str),
    "walk.alpha": ("walk_alpha", float),
    "walk.truncation_radius": ("walk_truncation_radius", int),
    "eps": ("eps", float),
    "T": ("T", float),
    "N": ("N", int),
    "dt": ("dt", float),
    "sigma.kind": ("sigma_kind", str),
    "sigma.lam": ("sigma_lam", float),
    "sigma.clip": ("sigma_clip", float),
    "sigma_bar.kind": ("sigma_bar_kind", str),
    "sigma_bar.lam": ("sigma_bar_lam", float),
    "sigma_bar.clip": ("sigma_bar_clip", float),
    "scheme": ("scheme", str),
    "seed": ("seed", int),
    "replica": ("replica", int),
    "replicas": ("replicas", int),
    "out": ("out", str),
    "t": ("t", float),
    "K": ("K", float),
    "boundary_tol": ("boundary_tol", float),
    "nodes": ("nodes", int),
    "snapshots": ("snapshots", int),
    "ladder": ("ladder", _parse_floats),
    "rho": ("rho", float),
    "points": ("points", _parse_ints),
    "order": ("order", int),
    "k": ("k", int),
    "window.t0": ("t0", float),
    "window.t1": ("t1", float),
    "t0": ("t0", float),  # holder's base time; window.t0 elsewhere
    "gaps": ("gaps", _parse_floats),
}

_WALK_KEYS = ("walk.kind", "walk.alpha", "walk.truncation_radius")
_COMMON_KEYS = _WALK_KEYS + ("eps", "N", "out", "seed", "replica")
_SIGMA_KEYS = ("sigma.kind", "sigma.lam", "sigma.clip")
_SIM_KEYS = _COMMON_KEYS + _SIGMA_KEYS + ("T", "dt", "scheme")

_ALLOWED: dict[str, tuple[str, ...]] = {
    "kernel-check": _COMMON_KEYS + ("t",),
    "lclt": _COMMON_KEYS + ("t", "K", "boundary_tol"),
    "green-bound": _COMMON_KEYS + ("t", "nodes"),
    "simulate": _SIM_KEYS + ("snapshots",),
    "converge": _SIM_KEYS + ("ladder", "rho", "replicas", "snapshots"),
    "compare-moments": _SIM_KEYS
    + ("sigma_bar.kind", "sigma_bar.lam", "sigma_bar.clip", "points", "order", "replicas"),
    "lyapunov": _SIM_KEYS + ("k", "window.t0", "window.t1", "replicas"),
    "holder": _SIM_KEYS + ("t0", "gaps", "replicas"),
}

_REQUIRED: dict[str, tuple[str, ...]] = {
    "kernel-check": ("eps", "t"),
    "lclt": ("eps", "t"),
    "green-bound": ("eps", "t"),
    "simulate": ("eps", "T"),
    "converge": ("eps", "T", "ladder", "rho"),
    "compare-moments": ("eps", "T", "sigma_bar.kind"),
    "lyapunov": ("eps", "T", "window.t0", "window.t1"),
    "holder": ("eps", "T", "t0", "gaps"),
}

_STATIC_DEFAULTS: dict[str, object] = {
    "walk.kind": "simple",
    "walk.alpha": 2.0,
    "walk.truncation_radius": 2000,
    "out": "runs",
    "seed": 0,
    "replica": 0,
    "sigma.kind": "linear",
    "sigma.lam": 1.0,
    "scheme": "splitstep",
    "K": DEFAULT_K,
    "boundary_tol": BOUNDARY_TOL,
    "nodes": 32,
    "snapshots": 0,
    "points": (0,),
    "order": 2,
    "k": 2,
    "replicas": 1000,
}


def parse_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; blank lines and #-comment lines ignored."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    raw: dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
        key, _, value = text.partition("=")
        key = key.strip()
        if key in raw:
            raise CliError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def build_run_config(subcommand: str, raw: Mapping[str, str]) -> RunConfig:
    """Validate keys against the subcommand, parse values, resolve defaults."""
    if subcommand not in _ALLOWED:
        raise CliError(f"unknown subcommand {subcommand!r}")
    allowed = _ALLOWED[subcommand]
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise CliError(
            f"unknown key(s) for {subcommand}: {', '.join(unknown)} "
            f"(allowed: {', '.join(allowed)})"
        )
    missing = sorted(set(_REQUIRED[subcommand]) - set(raw))
    if missing:
        raise CliError(f"missing required key(s) for {subcommand}: {', '.join(missing)}")

    values: dict[str, object] = {"subcommand": subcommand, "N": 0}
    for key in allowed:
        attr, parser = _KEYS[key]
        if key in raw:
            try:
                values[attr] = parser(raw[key])
            except ValueError as exc:
                raise CliError(f"bad value for {key}: {raw[key]!r} ({exc})") from exc
        elif key in _STATIC_DEFAULTS:
            values[attr] = _STATIC_DEFAULTS[key]

    try:
        walk = _build_walk(
            values.get("walk_kind", "simple"),
            values.get("walk_alpha", 2.0),
            values.get("walk_truncation_radius", 2000),
        )
        horizon = values.get("T") if values.get("T") is not None else values.get("t")
        if "N" not in raw:
            values["N"] = default_box(walk, values["eps"], float(horizon))
        if "dt" in allowed and values.get("dt") is None:
            values["dt"] = default_dt(walk, values["eps"])
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    return RunConfig(**values)


def _build_walk(kind: str, alpha: float, truncation_radius: int) -> WalkModel:
    if kind == "simple":
        if alpha != 2.0:
            raise CliError("walk.kind=simple has alpha = 2; drop walk.alpha")
        return make_simple_walk()
    if kind == "stable_tail":
        return make_stable_tail_walk(alpha, truncation_radius=truncation_radius)
    raise CliError(f"unknown walk.kind {kind!r} (simple | stable_tail)")


def _walk_of(rc: RunConfig) -> WalkModel:
    return _build_walk(rc.walk_kind, rc.walk_alpha, rc.walk_truncation_radius)


def _she_config(rc: RunConfig) -> SheConfig:
    sigma = SigmaSpec(kind=rc.sigma_kind, lam=rc.sigma_lam, clip=rc.sigma_clip)
    return SheConfig(
        walk=_walk_of(rc),
        eps=rc.eps,
        T=rc.T,
        N=rc.N,
        sigma=sigma,
        dt=rc.dt,
        scheme=rc.scheme,
        seed=rc.seed,
        replica=rc.replica,
    )


def _fmt(value: object) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def config_lines(rc: RunConfig) -> list[str]:
    """The resolved config as re-parseable ``key = value`` lines."""
    allowed = _ALLOWED[rc.subcommand]
    attr_to_key: dict[str, str] = {}
    for key, (attr, _) in _KEYS.items():
        if key in allowed:
            attr_to_key[attr] = key
    out = []
    for f in fields(RunConfig):
        key = attr_to_key.get(f.name)
        if key is None:
            continue
        value = getattr(rc, f.name)
        if value is None:
            continue
        out.append(f"{key} = {_fmt(value)}")
    return out


# ---------------------------------------------------------------------------
# deterministic emission


def emit_csv(
    records: Sequence[Mapping[str, object]],
    path: str,
    fieldnames: Sequence[str] | None = None,
) -> None:
    """RFC-4180 CSV with a header row; floats at 17 significant digits."""
    if fieldnames is None:
        if not records:
            raise ValueError("empty record list needs explicit fieldnames")
        fieldnames = list(records[0].keys())
    for i, rec in enumerate(records):
        if list(rec.keys()) != list(fieldnames):
            raise ValueError(f"record {i} fields {list(rec)} != header {list(fieldnames)}")

    def cell(v: object) -> str:
        if isinstance(v, bool):
            return "1" if v else "0"
        if isinstance(v, float) or isinstance(v, np.floating):
            return "%.17g" % float(v)
        return str(v)

    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(fieldnames)
            for rec in records:
                writer.writerow([cell(rec[k]) for k in fieldnames])
    except OSError as exc:
        raise CliError(f"cannot write CSV {path}: {exc}") from exc


def _write_summary(
    path: str, verdict: bool, results: Sequence[tuple[str, object]], rc: RunConfig
) -> None:
    lines = [f"verdict = {'pass' if verdict else 'fail'}"]
    lines += [f"{key} = {_fmt(value)}" for key, value in results]
    lines.append(f"config.subcommand = {rc.subcommand}")
    lines += [f"config.{line}" for line in config_lines(rc)]
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write summary {path}: {exc}") from exc


def reparse_summary(path: str) -> RunConfig:
    """Rebuild the RunConfig from a summary file (the round-trip contract)."""
    raw: dict[str, str] = {}
    sub = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            text = line.strip()
            if not text.startswith("config."):
                continue
            key, _, value = text.partition("=")
            key = key.strip()[len("config.") :]
            if key == "subcommand":
                sub = value.strip()
            else:
                raw[key] = value.strip()
    if sub is None:
        raise CliError(f"{path} carries no config.subcommand line")
    return build_run_config(sub, raw)


# ---------------------------------------------------------------------------
# subcommand bodies: each returns (verdict, result items) and writes CSVs


def _comparison_csv(model: WalkModel, rc: RunConfig, path: str) -> float:
    rows = kernel_comparison_rows(model, rc.eps, rc.t, rc.N)
    records = [
        {"site": j, "x": x, "lattice": pj, "continuum": px, "diff": d}
        for j, x, pj, px, d in rows
    ]
    emit_csv(records, path, ["site", "x", "lattice", "continuum", "diff"])
    return max(abs(r["diff"]) for r in records)


def _cmd_kernel_check(rc: RunConfig, out: str) -> tuple[bool, list]:
    model = _walk_of(rc)
    kernel = StableKernel(alpha=model.alpha, nu=model.nu)
    lhs, rhs = l2_kernel_identity(kernel, rc.t)
    rel = abs(lhs - rhs) / rhs
    discrete_transition(model, rc.eps, rc.t, rc.N)  # mass/positivity enforced inside
    sup_diff = _comparison_csv(model, rc, os.path.join(out, "kernel_check_data.csv"))
    verdict = rel <= L2_IDENTITY_RTOL
    return verdict, [
        ("l2_lhs", lhs),
        ("l2_rhs", rhs),
        ("l2_rel_error", rel),
        ("kernel_mass_ok", True),
        ("sup_abs_diff", sup_diff),
    ]


def _cmd_lclt(rc: RunConfig, out: str) -> tuple[bool, list]:
    model = _walk_of(rc)
    report = lclt_sup_error(
        model, rc.eps, rc.t, rc.N, K=rc.K, boundary_tol=rc.boundary_tol
    )
    _comparison_csv(model, rc, os.path.join(out, "lclt_data.csv"))
    verdict = report.sup_error <= report.bound_value
    return verdict, list(report.to_record().items())


def _cmd_green_bound(rc: RunConfig, out: str) -> tuple[bool, list]:
    model = _walk_of(rc)
    times = [rc.t * (i + 1) / rc.nodes for i in range(rc.nodes)]
    records = [
        {
            "t": s,
            "green_bound": green_function_bound(model, rc.eps, s, rc.N),
            "l2_mass": discrete_l2_mass(model, rc.eps, s, rc.N),
        }
        for s in times
    ]
    emit_csv(records, os.path.join(out, "green_bound_data.csv"), ["t", "green_bound", "l2_mass"])
    bounds = [r["green_bound"] for r in records]
    finite = all(math.isfinite(b) for b in bounds)
    monotone = all(b2 >= b1 - 1e-12 for b1, b2 in zip(bounds, bounds[1:]))
    return finite and monotone, [
        ("green_bound_at_t", bounds[-1]),
        ("monotone", monotone),
    ]


def _cmd_simulate(rc: RunConfig, out: str) -> tuple[bool, list]:
    config = _she_config(rc)
    if rc.snapshots > 0:
        times = [rc.T * (i + 1) / rc.snapshots for i in range(rc.snapshots)]
        final, snaps = simulate(config, snapshot_times=times)
        snap_records = [
            {"t": st.t, "site": j, "x": j * rc.eps, "value": st.values[j]}
            for st in snaps
            for j in range(rc.N)
        ]
        emit_csv(
            snap_records,
            os.path.join(out, "simulate_snapshots.csv"),
            ["t", "site", "x", "value"],
        )
    else:
        final = simulate(config)
    records = [
        {"site": j, "x": j * rc.eps, "value": final.values[j]} for j in range(rc.N)
    ]
    emit_csv(records, os.path.join(out, "simulate_data.csv"), ["site", "x", "value"])
    return True, [
        ("t_final", final.t),
        ("field_mean", float(final.values.mean())),
        ("field_min", float(final.values.min())),
        ("field_max", float(final.values.max())),
    ]


def _cmd_converge(rc: RunConfig, out: str) -> tuple[bool, list]:
    report = convergence_rate(
        _she_config(rc), rc.ladder, rc.rho, replicas=rc.replicas, n_snapshots=rc.snapshots or 50
    )
    samples = [
        {
            "eps_coarse": stat.eps_coarse,
            "eps_fine": stat.eps_fine,
            "replica": rc.replica + i,
            "sup_difference": float(stat.samples[i]),
        }
        for stat in report.statistics
        for i in range(stat.samples.size)
    ]
    emit_csv(
        samples,
        os.path.join(out, "converge_data.csv"),
        ["eps_coarse", "eps_fine", "replica", "sup_difference"],
    )
    pair_records = [
        {
            "eps_coarse": s.eps_coarse,
            "eps_fine": s.eps_fine,
            "q10": s.q10,
            "median": s.median,
            "q90": s.q90,
            "aborted": s.aborted,
        }
        for s in report.statistics
    ]
    emit_csv(
        pair_records,
        os.path.join(out, "converge_pairs.csv"),
        ["eps_coarse", "eps_fine", "q10", "median", "q90", "aborted"],
    )
    return report.verdict, list(report.to_record().items())


def _cmd_compare_moments(rc: RunConfig, out: str) -> tuple[bool, list]:
    sigma = SigmaSpec(kind=rc.sigma_kind, lam=rc.sigma_lam, clip=rc.sigma_clip)
    sigma_bar = SigmaSpec(kind=rc.sigma_bar_kind, lam=rc.sigma_bar_lam, clip=rc.sigma_bar_clip)
    report = compare_moments(
        _she_config(rc), sigma, sigma_bar, rc.points, order=rc.order, replicas=rc.replicas
    )
    records = [
        {
            "replica": rc.replica + i,
            "value_lo": float(report.first.samples[i]),
            "value_hi": float(report.second.samples[i]),
        }
        for i in range(rc.replicas)
    ]
    emit_csv(
        records,
        os.path.join(out, "compare_moments_data.csv"),
        ["replica", "value_lo", "value_hi"],
    )
    return report.ordered, list(report.to_record().items())


def _cmd_lyapunov(rc: RunConfig, out: str) -> tuple[bool, list]:
    report = lyapunov_estimate(
        _she_config(rc), rc.k, (rc.t0, rc.t1), replicas=rc.replicas
    )
    records = [
        {"t": t, "log_moment": lm} for t, lm in zip(report.times, report.log_moments)
    ]
    emit_csv(records, os.path.join(out, "lyapunov_data.csv"), ["t", "log_moment"])
    return report.verdict(), list(report.to_record().items())


def _cmd_holder(rc: RunConfig, out: str) -> tuple[bool, list]:
    pairs = [(rc.t0, rc.t0 + g) for g in rc.gaps]
    report = temporal_increment_scaling(_she_config(rc), pairs, replicas=rc.replicas)
    records = [
        {"gap": g, "second_moment": m, "std_error": se}
        for g, m, se in zip(report.gaps, report.second_moments, report.std_errors)
    ]
    emit_csv(
        records, os.path.join(out, "holder_data.csv"), ["gap", "second_moment", "std_error"]
    )
    verdict = abs(report.exponent - 1.0) <= HOLDER_EXPONENT_TOL
    return verdict, [
        ("exponent", report.exponent),
        ("level_at_min_gap", report.second_moments[0] if report.second_moments else math.nan),
        ("replicas", report.replicas),
    ]


_COMMANDS: dict[str, Callable[[RunConfig, str], tuple[bool, list]]] = {
    "kernel-check": _cmd_kernel_check,
    "lclt": _cmd_lclt,
    "green-bound": _cmd_green_bound,
    "simulate": _cmd_simulate,
    "converge": _cmd_converge,
    "compare-moments": _cmd_compare_moments,
    "lyapunov": _cmd_lyapunov,
    "holder": _cmd_holder,
}


def run(subcommand: str, config_path: str, overrides: Mapping[str, str] | None = None) -> bool:
    """Execute one subcommand; returns the verdict.  Raises on errors."""
    raw = parse_config_file(config_path)
    for key, value in (overrides or {}).items():
        raw[key] = value
    rc = build_run_config(subcommand, raw)
    os.makedirs(rc.out, exist_ok=True)
    verdict, results = _COMMANDS[subcommand](rc, rc.out)
    name = subcommand.replace("-", "_")
    _write_summary(os.path.join(rc.out, f"{name}_summary.txt"), verdict, results, rc)
    return verdict


def _check_workers_env() -> None:
    text = os.environ.get("SHELAB_WORKERS")
    if text is None:
        return
    try:
        workers = int(text)
    except ValueError:
        raise CliError(f"SHELAB_WORKERS must be an integer, got {text!r}")
    if workers < 1:
        raise CliError(f"SHELAB_WORKERS must be positive, got {workers}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="shelab",
        description="Numerical laboratory for a lattice stochastic heat equation "
        "with multiplicative noise.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="flat key=value config file")
        p.add_argument("--seed", help="override the seed key")
        p.add_argument("--replicas", help="override the replicas key")
        p.add_argument("--out", help="override the output directory")
    args = parser.parse_args(argv)

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replicas is not None:
        overrides["replicas"] = args.replicas
    if args.out is not None:
        overrides["out"] = args.out

    try:
        _check_workers_env()
        verdict = run(args.subcommand, args.config, overrides)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if verdict else 2


if __name__ == "__main__":
    sys.exit(main())
