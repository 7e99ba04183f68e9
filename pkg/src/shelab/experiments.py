"""Monte Carlo studies on top of the lattice steppers.

Five experiment families: product-moment estimation, moment comparison under
common random numbers, coupled resolution-ladder convergence rates, temporal
increment scaling, and moment Lyapunov exponents benchmarked against an
independently solved Volterra equation.

Estimates are deterministic for fixed (config, replicas): replica blocks are
chunked by a fixed policy, per-replica statistics are kept in replica order,
and reductions use numpy's pairwise summation over the full sample vector,
so reported numbers are run-to-run identical.

Site indices are lattice coordinates in [0, N); the physical position of
site j is j*eps on the periodic box of circumference N*eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from shelab.simulator import SheConfig, SigmaSpec, run_batch, run_coupled_batch

ABORT_BUDGET = 0.01  # tolerated fraction of blown-up replicas
_CHUNK_ELEMS = 1 << 20  # replica-block sizing: elements per field buffer (cache-friendly)


class AbortRateError(RuntimeError):
    """Too many replicas blew up for the estimate to be trustworthy."""


class ComparisonPreconditionError(RuntimeError):
    """The pair (sigma, sigma_bar) fails 0 <= sigma <= sigma_bar on the realized range."""


class GridTooCoarseError(RuntimeError):
    """Volterra self-refinement disagreed beyond tolerance."""


class WindowTooShortError(RuntimeError):
    """Slope confidence interval exceeds half the estimate."""


def _chunk_size(n_sites: int) -> int:
    return max(1, _CHUNK_ELEMS // n_sites)


def _chunks(total: int, size: int) -> Iterator[tuple[int, int]]:
    done = 0
    while done < total:
        take = min(size, total - done)
        yield done, take
        done += take


def _jackknife_se(x: np.ndarray) -> float:
    """Delete-one jackknife standard error of the sample mean."""
    n = x.size
    if n < 2:
        raise ValueError("jackknife needs at least 2 samples")
    loo = (x.sum() - x) / (n - 1)
    return math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))


def _check_abort_budget(aborted: int, total: int) -> None:
    if aborted > ABORT_BUDGET * total:
        raise AbortRateError(
            f"{aborted} of {total} replicas blew up (> {ABORT_BUDGET:.0%} budget)"
        )


# ---------------------------------------------------------------------------
# moment estimation


@dataclass(frozen=True)
class MomentReport:
    points: tuple[int, ...]  # lattice sites entering the product
    order: int  # exponent applied at each listed site
    estimate: float
    std_error: float
    replicas: int  # surviving replicas behind the estimate
    aborted: int = 0
    samples: np.ndarray | None = None  # per-replica observables, replica order

    def __post_init__(self) -> None:
        if self.std_error < 0:
            raise ValueError("std_error must be nonnegative")
        if self.replicas < 2:
            raise ValueError("need at least 2 surviving replicas")

    def to_record(self) -> dict:
        return {
            "points": " ".join(str(p) for p in self.points),
            "order": self.order,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "replicas": self.replicas,
            "aborted": self.aborted,
        }


def _collect_final_products(
    config: SheConfig,
    points: Sequence[int],
    order: int,
    replicas: int,
) -> tuple[np.ndarray, int, float, float]:
    """Per-replica products of U_T(x)^order, in replica order.

    Aborted replicas carry NaN.  Also returns the abort count and the realized
    field range over all live (site, step) pairs.
    """
    cols = np.asarray(points, dtype=np.intp)
    out = np.empty(replicas)
    aborted = 0
    vmin = math.inf
    vmax = -math.inf
    for off, take in _chunks(replicas, _chunk_size(config.N)):
        result = run_batch(config, config.replica + off, take)
        obs = result.final_values[:, cols] ** order
        out[off : off + take] = obs.prod(axis=1)
        aborted += int(np.count_nonzero(result.aborted))
        vmin = min(vmin, result.value_min)
        vmax = max(vmax, result.value_max)
    return out, aborted, vmin, vmax


def estimate_moment(
    config: SheConfig,
    points: Sequence[int],
    order: int = 1,
    replicas: int = 1000,
) -> MomentReport:
    """Monte Carlo estimate of E[prod_i U_T(x_i)^order].

    A k-th moment at one site is points=[x], order=k; an m-point product
    moment is m distinct sites with order=1.  Aborted replicas are excluded
    and counted; more than 1% of them raises :class:`AbortRateError`.
    """
    if replicas < 100:
        raise ValueError("need at least 100 replicas")
    pts = [int(p) for p in points]
    if not pts:
        raise ValueError("need at least one site")
    if any(p < 0 or p >= config.N for p in pts):
        raise ValueError(f"sites must lie in [0, {config.N})")
    if order < 1:
        raise ValueError("order must be a positive integer")

    samples, aborted, _, _ = _collect_final_products(config, pts, order, replicas)
    _check_abort_budget(aborted, replicas)
    alive = samples[np.isfinite(samples)]
    return MomentReport(
        points=tuple(pts),
        order=order,
        estimate=float(alive.mean()),
        std_error=_jackknife_se(alive),
        replicas=alive.size,
        aborted=aborted,
        samples=samples,
    )


# ---------------------------------------------------------------------------
# Volterra oracle for the second moment of the alpha=2 continuum equation


@dataclass
class VolterraSolution:
    """m(t) on a uniform grid, linearly interpolated between nodes."""

    ts: np.ndarray
    values: np.ndarray
    nu: float
    lam: float

    def __call__(self, t) -> np.ndarray | float:
        return np.interp(t, self.ts, self.values)

    def log_slope(self, t0: float, t1: float) -> float:
        """Least-squares slope of log m over grid nodes in [t0, t1]."""
        mask = (self.ts >= t0) & (self.ts <= t1)
        if np.count_nonzero(mask) < 2:
            raise ValueError("window contains fewer than 2 grid nodes")
        return float(np.polyfit(self.ts[mask], np.log(self.values[mask]), 1)[0])


def _volterra_grid(nu: float, lam: float, T: float, n: int) -> np.ndarray:
    """Product-integration solve of m(t) = 1 + lam^2 int_0^t (8 pi nu (t-s))^{-1/2} m(s) ds.

    m is taken piecewise linear on each panel and the weakly singular kernel
    is integrated exactly against it, which keeps the r^{-1/2} singularity
    harmless; the step equation is implicit in m_n and solved in closed form.
    """
    h = T / n
    c = 1.0 / math.sqrt(8.0 * math.pi * nu)
    k = np.arange(1, n + 1)
    root_hi = np.sqrt(k * h)
    root_lo = np.sqrt((k - 1) * h)
    i0 = 2.0 * c * (root_hi - root_lo)  # int of kernel over panel k
    i1 = (2.0 / 3.0) * c * (k * h * root_hi - (k - 1) * h * root_lo)  # int of r * kernel
    w_new = k * i0 - i1 / h  # weight on the panel's newer m node
    w_old = i1 / h - (k - 1) * i0  # weight on the older m node
    lam2 = lam * lam
    if lam2 * w_new[0] >= 0.5:
        raise GridTooCoarseError(
            f"implicit weight {lam2 * w_new[0]:.3g} too large; refine the grid"
        )
    m = np.empty(n + 1)
    m[0] = 1.0
    for idx in range(1, n + 1):
        hist = np.dot(w_new[1:idx], m[idx - 1 : 0 : -1]) + np.dot(
            w_old[:idx], m[idx - 1 :: -1]
        )
        m[idx] = (1.0 + lam2 * hist) / (1.0 - lam2 * w_new[0])
    return m


def pam_second_moment_oracle(
    nu: float,
    lam: float,
    T: float,
    time_grid: int | None = None,
) -> VolterraSolution:
    """Second moment t -> E[u_t(x)^2] of the continuum equation with sigma(u) = lam*u.

    Solves the Walsh-isometry renewal equation with kernel (8 pi nu r)^{-1/2}
    by trapezoid product integration, entirely independent of the simulation
    code.  The solve is repeated at twice the resolution; disagreement beyond
    1e-4 relative raises :class:`GridTooCoarseError`.
    """
    if nu <= 0 or lam < 0 or T <= 0:
        raise ValueError("need nu > 0, lam >= 0, T > 0")
    if time_grid is None:
        time_grid = min(16384, max(512, int(1024 * T)))
    n = int(time_grid)
    coarse = _volterra_grid(nu, lam, T, n)
    fine = _volterra_grid(nu, lam, T, 2 * n)
    rel = np.max(np.abs(fine[::2] - coarse) / np.abs(coarse))
    if rel > 1e-4:
        raise GridTooCoarseError(
            f"refinement moved the solution by {rel:.2e} relative (> 1e-4)"
        )
    ts = np.linspace(0.0, T, 2 * n + 1)
    return VolterraSolution(ts=ts, values=fine, nu=nu, lam=lam)


# ---------------------------------------------------------------------------
# moment comparison under common random numbers


@dataclass(frozen=True)
class ComparisonReport:
    first: MomentReport  # under sigma
    second: MomentReport  # under sigma_bar
    paired_std_error: float
    ordered: bool  # estimate(sigma) <= estimate(sigma_bar) + 2 paired SE
    realized_range: tuple[float, float]  # field range the precondition was checked on

    def to_record(self) -> dict:
        return {
            "estimate_lo": self.first.estimate,
            "estimate_hi": self.second.estimate,
            "paired_std_error": self.paired_std_error,
            "ordered": int(self.ordered),
            "range_min": self.realized_range[0],
            "range_max": self.realized_range[1],
            "replicas": self.first.replicas,
        }


def _check_domination(
    sigma: SigmaSpec, sigma_bar: SigmaSpec, lo: float, hi: float
) -> None:
    if not (sigma.fixes_zero and sigma_bar.fixes_zero):
        raise ComparisonPreconditionError("comparison requires sigma(0) = sigma_bar(0) = 0")
    grid = np.linspace(lo, hi, 4097)
    grid = np.append(grid, 0.0)
    sa = sigma.apply(grid)
    sb = sigma_bar.apply(grid)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(sb))))
    if float(np.min(sa)) < -tol:
        z = grid[int(np.argmin(sa))]
        raise ComparisonPreconditionError(
            f"sigma({z:.6g}) = {sigma.apply(np.array(z)):.6g} < 0 on realized range "
            f"[{lo:.6g}, {hi:.6g}]"
        )
    gap = sb - sa
    if float(np.min(gap)) < -tol:
        z = grid[int(np.argmin(gap))]
        raise ComparisonPreconditionError(
            f"sigma exceeds sigma_bar at z = {z:.6g} on realized range "
            f"[{lo:.6g}, {hi:.6g}] (gap {float(np.min(gap)):.3g})"
        )


def compare_moments(
    config: SheConfig,
    sigma: SigmaSpec,
    sigma_bar: SigmaSpec,
    points: Sequence[int],
    order: int = 1,
    replicas: int = 1000,
) -> ComparisonReport:
    """Paired product-moment estimates under sigma and sigma_bar.

    Both runs consume identical noise (the per-site Brownian increments are a
    pure function of seed/replica/site/step), so the comparison is common
    random numbers by construction.  The domination hypothesis
    0 <= sigma <= sigma_bar is checked on the realized field range after the
    runs; violation aborts with diagnostics.  Replicas that blew up in either
    run are dropped pairwise.
    """
    if replicas < 100:
        raise ValueError("need at least 100 replicas")
    pts = [int(p) for p in points]
    if any(p < 0 or p >= config.N for p in pts):
        raise ValueError(f"sites must lie in [0, {config.N})")

    conf_a = replace(config, sigma=sigma)
    conf_b = replace(config, sigma=sigma_bar)
    samp_a, ab_a, lo_a, hi_a = _collect_final_products(conf_a, pts, order, replicas)
    samp_b, ab_b, lo_b, hi_b = _collect_final_products(conf_b, pts, order, replicas)
    lo, hi = min(lo_a, lo_b), max(hi_a, hi_b)
    _check_domination(sigma, sigma_bar, lo, hi)

    both = np.isfinite(samp_a) & np.isfinite(samp_b)
    aborted = replicas - int(np.count_nonzero(both))
    _check_abort_budget(aborted, replicas)
    a = samp_a[both]
    b = samp_b[both]
    paired_se = _jackknife_se(b - a)
    rep_a = MomentReport(
        points=tuple(pts), order=order, estimate=float(a.mean()),
        std_error=_jackknife_se(a), replicas=a.size, aborted=ab_a, samples=samp_a,
    )
    rep_b = MomentReport(
        points=tuple(pts), order=order, estimate=float(b.mean()),
        std_error=_jackknife_se(b), replicas=b.size, aborted=ab_b, samples=samp_b,
    )
    return ComparisonReport(
        first=rep_a,
        second=rep_b,
        paired_std_error=paired_se,
        ordered=rep_a.estimate <= rep_b.estimate + 2.0 * paired_se,
        realized_range=(lo, hi),
    )


# ---------------------------------------------------------------------------
# resolution-ladder convergence rate


@dataclass(frozen=True)
class PairStat:
    eps_coarse: float
    eps_fine: float
    q10: float
    median: float
    q90: float
    aborted: int
    samples: np.ndarray | None = None  # per-replica sup differences


@dataclass(frozen=True)
class RateReport:
    ladder: tuple[float, ...]  # eps levels, strictly decreasing
    statistics: tuple[PairStat, ...]  # one per adjacent (eps, eps/2) pair
    fitted_slope: float  # log2 regression slope of the median sup difference
    rho_target: float
    holder_eta: float  # (alpha - 1) / (2 alpha)
    snapshot_count: int  # sup over t approximated on this many snapshot times
    degenerate: bool = False  # all differences vanished (sigma == 0); slope undefined

    def __post_init__(self) -> None:
        if any(b >= a for a, b in zip(self.ladder, self.ladder[1:])):
            raise ValueError("ladder must be strictly decreasing")
        if not self.degenerate and not math.isfinite(self.fitted_slope):
            raise ValueError("fitted slope must be finite")

    @property
    def verdict(self) -> bool:
        """slope >= rho/2, vacuously true when all differences vanish."""
        return self.degenerate or self.fitted_slope >= self.rho_target / 2.0

    def to_record(self) -> dict:
        return {
            "ladder": " ".join(f"{e:g}" for e in self.ladder),
            "fitted_slope": self.fitted_slope,
            "rho_target": self.rho_target,
            "holder_eta": self.holder_eta,
            "snapshot_count": self.snapshot_count,
            "degenerate": int(self.degenerate),
            "verdict": int(self.verdict),
        }


def _coupled_pair_configs(
    base: SheConfig, eps_coarse: float, level: int
) -> tuple[SheConfig, SheConfig]:
    """Configs for the (eps, eps/2) coupling at ladder position ``level``.

    Box size doubles with each halving so the physical extent is fixed; time
    steps are eps^alpha/4 on the fine side and the integer multiple
    floor(2^alpha) of that on the coarse side, keeping the two walks on a
    common step grid.
    """
    alpha = base.walk.alpha
    n_coarse = base.N << level
    eps_fine = eps_coarse / 2.0
    dt_fine = eps_fine**alpha / 4.0
    m = math.floor(2.0**alpha)
    coarse = replace(base, eps=eps_coarse, N=n_coarse, dt=m * dt_fine)
    fine = replace(base, eps=eps_fine, N=2 * n_coarse, dt=dt_fine)
    return fine, coarse


def convergence_rate(
    base_config: SheConfig,
    ladder: Sequence[float],
    rho: float,
    replicas: int = 200,
    n_snapshots: int = 50,
) -> RateReport:
    """Coupled-resolution rate study along a dyadic eps ladder.

    For each adjacent (eps, eps/2) pair the two fields are driven by one
    noise sheet and the per-replica sup (over sites and snapshot times) of
    their difference is recorded; the fitted slope is the log2 regression of
    the median against the pair's fine eps.  The sup is restricted to the
    base-level lattice positions on every rung, so its extreme-value
    statistics do not drift with the rung's site count.  The verdict
    property checks slope >= rho/2.
    """
    lad = [float(e) for e in ladder]
    if len(lad) < 3:
        raise ValueError("ladder needs at least 3 levels")
    for a, b in zip(lad, lad[1:]):
        if not math.isclose(a, 2.0 * b, rel_tol=1e-12):
            raise ValueError("adjacent ladder levels must be related by factors of 2")
    alpha = base_config.walk.alpha
    if not 0 < rho < alpha - 1:
        raise ValueError(f"need 0 < rho < alpha - 1 = {alpha - 1:g}")
    if not math.isclose(base_config.eps, lad[0], rel_tol=1e-12):
        raise ValueError("base_config.eps must equal the coarsest ladder level")

    stats: list[PairStat] = []
    for level, eps_c in enumerate(lad[:-1]):
        fine, coarse = _coupled_pair_configs(base_config, eps_c, level)
        sups = np.empty(replicas)
        for off, take in _chunks(replicas, _chunk_size(fine.N)):
            sups[off : off + take] = run_coupled_batch(
                fine,
                coarse,
                base_config.replica + off,
                take,
                n_snapshots=n_snapshots,
                site_stride=1 << level,
            )
        alive = sups[np.isfinite(sups)]
        aborted = replicas - alive.size
        _check_abort_budget(aborted, replicas)
        q10, med, q90 = (float(q) for q in np.quantile(alive, [0.1, 0.5, 0.9]))
        stats.append(
            PairStat(
                eps_coarse=eps_c, eps_fine=lad[level + 1],
                q10=q10, median=med, q90=q90, aborted=aborted, samples=sups,
            )
        )

    medians = np.array([s.median for s in stats])
    degenerate = bool(np.all(medians == 0.0))
    if degenerate:
        slope = math.nan
    else:
        x = np.log2([s.eps_fine for s in stats])
        slope = float(np.polyfit(x, np.log2(medians), 1)[0])
    return RateReport(
        ladder=tuple(lad),
        statistics=tuple(stats),
        fitted_slope=slope,
        rho_target=rho,
        holder_eta=(alpha - 1.0) / (2.0 * alpha),
        snapshot_count=n_snapshots,
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# temporal increment scaling


@dataclass(frozen=True)
class IncrementReport:
    eps: float
    gaps: tuple[float, ...]  # t - s, snapped to the step grid
    second_moments: tuple[float, ...]  # E |U_t(x) - U_s(x)|^2 per gap
    std_errors: tuple[float, ...]
    exponent: float  # log-log slope over the positive gaps
    replicas: int

    def to_record(self) -> dict:
        return {
            "eps": self.eps,
            "gaps": " ".join(f"{g:.12g}" for g in self.gaps),
            "exponent": self.exponent,
            "replicas": self.replicas,
        }


def temporal_increment_scaling(
    config: SheConfig,
    s_t_pairs: Sequence[tuple[float, float]],
    replicas: int = 1000,
) -> IncrementReport:
    """Second moments of temporal increments E |U_t(x) - U_s(x)|^2.

    Each (s, t) snaps to the step grid.  The per-replica observable averages
    the squared increment over all sites (the field is stationary on the
    torus), and the exponent is the log-log slope of the moment against the
    gap across pairs with distinct positive gaps.
    """
    if replicas < 100:
        raise ValueError("need at least 100 replicas")
    steps: list[tuple[int, int]] = []
    for s, t in s_t_pairs:
        ks = round(s / config.dt)
        kt = round(t / config.dt)
        if not 0 <= ks <= kt <= config.n_steps:
            raise ValueError(f"pair ({s}, {t}) leaves the simulated horizon")
        steps.append((ks, kt))

    s_steps = sorted({ks for ks, _ in steps})
    watch = sorted({k for pair in steps for k in pair})
    obs = np.zeros((replicas, len(steps)))

    for off, take in _chunks(replicas, _chunk_size(config.N)):
        held: dict[int, np.ndarray] = {}

        def grab(step: int, t: float, values: np.ndarray, alive: np.ndarray) -> None:
            if step in s_steps:
                held[step] = values.copy()
            for i, (ks, kt) in enumerate(steps):
                if kt == step:
                    base = values if ks == kt else held[ks]
                    diff = values - base
                    obs[off : off + take, i] = np.mean(diff * diff, axis=1)

        run_batch(config, config.replica + off, take, snapshot_steps=watch, on_snapshot=grab)

    both = np.all(np.isfinite(obs), axis=1)
    aborted = replicas - int(np.count_nonzero(both))
    _check_abort_budget(aborted, replicas)
    kept = obs[both]

    gaps = tuple((kt - ks) * config.dt for ks, kt in steps)
    moments = tuple(float(kept[:, i].mean()) for i in range(len(steps)))
    errors = tuple(_jackknife_se(kept[:, i]) for i in range(len(steps)))
    pos = [(g, m) for g, m in zip(gaps, moments) if g > 0 and m > 0]
    if len({g for g, _ in pos}) >= 2:
        lg = np.log([g for g, _ in pos])
        lm = np.log([m for _, m in pos])
        exponent = float(np.polyfit(lg, lm, 1)[0])
    else:
        exponent = math.nan
    return IncrementReport(
        eps=config.eps,
        gaps=gaps,
        second_moments=moments,
        std_errors=errors,
        exponent=exponent,
        replicas=int(np.count_nonzero(both)),
    )


# ---------------------------------------------------------------------------
# Lyapunov exponents


@dataclass(frozen=True)
class LyapunovReport:
    k: int
    window: tuple[float, float]
    mc_slope: float  # fitted slope of t -> log E[U_t^k] over the window
    mc_slope_stderr: float  # jackknife SE of the slope
    oracle_slope: float | None  # Volterra oracle on the same window (k=2, linear sigma)
    lower_bound: float  # L^4 k (k^2 - 1) / (48 nu)
    upper_bound: float  # Lip^4 k^3 / nu (reported, not asserted)
    replicas: int
    times: tuple[float, ...] = ()
    log_moments: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.lower_bound > self.upper_bound:
            raise ValueError("lower bound exceeds upper bound")

    def verdict(self, tol: float = 0.15) -> bool:
        """lower_bound (1 - tol) <= mc_slope; the upper bound is informational."""
        return self.lower_bound * (1.0 - tol) <= self.mc_slope

    def to_record(self) -> dict:
        return {
            "k": self.k,
            "t0": self.window[0],
            "t1": self.window[1],
            "mc_slope": self.mc_slope,
            "mc_slope_stderr": self.mc_slope_stderr,
            "oracle_slope": "" if self.oracle_slope is None else self.oracle_slope,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "replicas": self.replicas,
        }


def lyapunov_bounds(sigma: SigmaSpec, k: int, nu: float) -> tuple[float, float]:
    """(L^4 k (k^2-1) / (48 nu), Lip^4 k^3 / nu) for the certified constants."""
    lower = sigma.l_lower**4 * k * (k * k - 1) / (48.0 * nu)
    upper = sigma.lip**4 * k**3 / nu
    return lower, upper


def lyapunov_estimate(
    config: SheConfig,
    k: int,
    window: tuple[float, float],
    replicas: int = 2000,
    n_times: int = 9,
) -> LyapunovReport:
    """Moment Lyapunov slope of log E[U_t^k] over a time window.

    E[U_t^k] is estimated at n_times snapshot times by the replica mean of
    the spatial mean of U^k.  The slope comes from least squares on the log
    estimates; its standard error is a delete-one jackknife over replicas.
    For k=2 with linear sigma the same window slope of the Volterra oracle
    is attached for cross-checking.
    """
    if config.walk.alpha != 2:
        raise ValueError("Lyapunov study is calibrated for alpha = 2")
    if k < 2:
        raise ValueError("k must be at least 2")
    if replicas < 100:
        raise ValueError("need at least 100 replicas")
    t0, t1 = window
    horizon = config.n_steps * config.dt
    if not 0 < t0 < t1 <= horizon * (1 + 1e-12):
        raise ValueError(f"window must sit inside (0, {horizon:g}]")

    steps = sorted({round(t / config.dt) for t in np.linspace(t0, t1, n_times)})
    if len(steps) < 2:
        raise ValueError("window resolves to fewer than 2 distinct steps")
    times = np.array([s * config.dt for s in steps])
    obs = np.zeros((replicas, len(steps)))
    col = {s: i for i, s in enumerate(steps)}

    for off, take in _chunks(replicas, _chunk_size(config.N)):

        def grab(step: int, t: float, values: np.ndarray, alive: np.ndarray) -> None:
            obs[off : off + take, col[step]] = np.mean(values**k, axis=1)

        run_batch(config, config.replica + off, take, snapshot_steps=steps, on_snapshot=grab)

    alive_rows = np.all(np.isfinite(obs), axis=1)
    aborted = replicas - int(np.count_nonzero(alive_rows))
    _check_abort_budget(aborted, replicas)
    kept = obs[alive_rows]
    n = kept.shape[0]

    means = kept.mean(axis=0)
    centered = times - times.mean()
    weights = centered / float(np.sum(centered * centered))  # OLS slope functional
    slope = float(np.dot(weights, np.log(means)))

    col_sums = kept.sum(axis=0)
    loo_means = (col_sums[None, :] - kept) / (n - 1)
    loo_slopes = np.log(loo_means) @ weights
    slope_se = math.sqrt((n - 1) / n * float(np.sum((loo_slopes - loo_slopes.mean()) ** 2)))
    if 2.0 * slope_se > 0.5 * abs(slope):
        raise WindowTooShortError(
            f"slope {slope:.4g} has 95% CI half-width {2 * slope_se:.4g}; "
            "widen the window or add replicas"
        )

    oracle_slope = None
    if k == 2 and config.sigma.kind == "linear" and config.sigma.lam > 0:
        oracle = pam_second_moment_oracle(config.walk.nu, config.sigma.lam, t1)
        oracle_slope = oracle.log_slope(t0, t1)

    lower, upper = lyapunov_bounds(config.sigma, k, config.walk.nu)
    return LyapunovReport(
        k=k,
        window=(t0, t1),
        mc_slope=slope,
        mc_slope_stderr=slope_se,
        oracle_slope=oracle_slope,
        lower_bound=lower,
        upper_bound=upper,
        replicas=n,
        times=tuple(float(t) for t in times),
        log_moments=tuple(float(v) for v in np.log(means)),
    )
