"""Time steppers for the rescaled interacting-diffusion system on a periodic box.

The lattice field U solves

    dU_t(x) = eps^-alpha (L U_t)(x) dt + eps^-1/2 sigma(U_t(x)) dB_t(x),
    U_0 = 1,

driven by per-site Brownian motions from :mod:`shelab.noise`.  Two schemes:
an explicit Euler step, and a split step that applies the exact one-step heat
semigroup (spectral multiplication by the walk symbol) before the noise kick.
Both preserve constants exactly when the noise term vanishes, and both
preserve the spatial mean in expectation for every Lipschitz sigma.

All stepping code operates on arrays shaped ``(..., N)``; the batch engine
used by the experiments module runs whole replica blocks through the very
same ufunc sequence as the public single-field steppers, so batched and
single runs agree bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from shelab.kernels import DiscreteKernelTable
from shelab.noise import NoiseIncrement, standard_normals
from shelab.walks import WalkModel, generator_apply, one_minus_char_on_box

SIGMA_KINDS = ("linear", "abs_linear", "clipped_linear", "affine_bounded")
SCHEMES = ("euler", "splitstep")

DT_CAP = 1e-3  # default temporal resolution cap, below euler stability for eps >= 0.25


class TrajectoryBlowup(RuntimeError):
    """A trajectory left the representable range (NaN/overflow)."""

    def __init__(self, t: float, replica: int | None = None):
        self.t = t
        self.replica = replica
        where = f" (replica {replica})" if replica is not None else ""
        super().__init__(f"field blew up at t={t!r}{where}")


@dataclass(frozen=True)
class SigmaSpec:
    """One of four parametric noise coefficients with certified constants.

    kind:
        ``linear``          sigma(z) = lambda z        (the parabolic Anderson case)
        ``abs_linear``      sigma(z) = lambda |z|
        ``clipped_linear``  sigma(z) = min(lambda |z|, clip)
        ``affine_bounded``  sigma(z) = lambda           (constant; additive noise)

    ``lip`` is the global Lipschitz constant.  ``l_lower`` is the largest L
    with L |z| <= sigma(z); for the signed linear kind this holds on the
    nonnegative range where the comparison and moment theory applies (the
    exact solution stays nonnegative), matching how the linear case is used
    as the Anderson model.  Kinds that cap or flatten admit no positive L.
    """

    kind: str
    lam: float = 1.0
    clip: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in SIGMA_KINDS:
            raise ValueError(f"unknown sigma kind {self.kind!r}")
        if self.kind == "clipped_linear":
            if self.clip is None or self.clip <= 0:
                raise ValueError("clipped_linear requires a positive clip")
        elif self.clip is not None:
            raise ValueError(f"clip is meaningful only for clipped_linear, not {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")

    @property
    def lip(self) -> float:
        return 0.0 if self.kind == "affine_bounded" else self.lam

    @property
    def l_lower(self) -> float:
        return self.lam if self.kind in ("linear", "abs_linear") else 0.0

    @property
    def fixes_zero(self) -> bool:
        """sigma(0) = 0, required by the moment-comparison hypotheses."""
        return self.kind != "affine_bounded" or self.lam == 0.0

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return self.lam * z
        if self.kind == "abs_linear":
            return self.lam * np.abs(z)
        if self.kind == "clipped_linear":
            return np.minimum(self.lam * np.abs(z), self.clip)
        return np.full_like(z, self.lam)


def default_dt(walk: WalkModel, eps: float) -> float:
    """min(eps^alpha / 4, 1e-3): euler stability plus temporal resolution."""
    return min(eps**walk.alpha / 4.0, DT_CAP)


@dataclass(frozen=True)
class SheConfig:
    """Everything one trajectory needs: lattice, horizon, coefficient, identity."""

    walk: WalkModel
    eps: float
    T: float
    N: int
    sigma: SigmaSpec
    dt: float | None = None  # resolved to default_dt when omitted
    scheme: str = "splitstep"
    seed: int = 0
    replica: int = 0
    rho_exponent: float | None = None  # exploratory override of the eps^-alpha speedup

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.N < 8 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two, at least 8")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.replica < 0:
            raise ValueError("replica must be nonnegative")
        if self.dt is None:
            object.__setattr__(self, "dt", default_dt(self.walk, self.eps))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scheme == "euler" and self.dt > self.eps**self.walk.alpha / 4.0 * (1 + 1e-12):
            raise ValueError(
                f"euler requires dt <= eps^alpha/4 = {self.eps**self.walk.alpha / 4.0!r}"
            )

    @property
    def speedup(self) -> float:
        """The eps^-alpha rate multiplier (or the exploratory override)."""
        exponent = self.walk.alpha if self.rho_exponent is None else self.rho_exponent
        return self.eps**-exponent

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    @property
    def noise_coef(self) -> float:
        """Scale applied to sigma(U) * dB: the eps^-1/2 of the lattice system."""
        return 1.0 / math.sqrt(self.eps)

    def heat_spectrum(self) -> np.ndarray:
        """exp(-dt eps^-alpha (1 - mu_hat)) at the torus frequencies (half band)."""
        omc = one_minus_char_on_box(self.walk.measure, self.N)
        return np.exp(-self.dt * self.speedup * omc)


@dataclass(frozen=True)
class FieldState:
    t: float
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)


# ---------------------------------------------------------------------------
# stepping kernels shared by public steppers and the batch engine


def _heat_apply(values: np.ndarray, spectrum: np.ndarray) -> np.ndarray:
    return np.fft.irfft(np.fft.rfft(values, axis=-1) * spectrum, axis=-1)


def _euler_update(
    values: np.ndarray,
    walk: WalkModel,
    drift_coef: float,
    sigma: SigmaSpec,
    noise_coef: float,
    z: np.ndarray,
) -> np.ndarray:
    return values + drift_coef * generator_apply(walk, values) + noise_coef * sigma.apply(values) * z


def _splitstep_update(
    values: np.ndarray,
    spectrum: np.ndarray,
    sigma: SigmaSpec,
    noise_coef: float,
    z: np.ndarray,
) -> np.ndarray:
    # in-place chain, bit-identical to relaxed + noise_coef * sigma(relaxed) * z
    # (sigma.apply returns a fresh array; IEEE multiplication commutes exactly)
    relaxed = _heat_apply(values, spectrum)
    sig = sigma.apply(relaxed)
    sig *= noise_coef
    sig *= z
    relaxed += sig
    return relaxed


def step_euler(state: FieldState, config: SheConfig, noise: NoiseIncrement) -> FieldState:
    """One explicit Euler step of the lattice system.

    values'[j] = values[j] + dt eps^-alpha (L values)[j]
                 + eps^-1/2 sigma(values[j]) dB[j]
    """
    if config.scheme != "euler":
        raise ValueError("config.scheme must be 'euler' for step_euler")
    if noise.values.shape[-1] != config.N:
        raise ValueError("noise increment has wrong length")
    with np.errstate(over="ignore", invalid="ignore"):
        new = _euler_update(
            state.values,
            config.walk,
            config.dt * config.speedup,
            config.sigma,
            config.noise_coef,
            noise.values,
        )
    if not np.all(np.isfinite(new)):
        raise TrajectoryBlowup(state.t + config.dt, config.replica)
    return FieldState(t=state.t + config.dt, values=new)


def step_splitstep(
    state: FieldState,
    config: SheConfig,
    noise: NoiseIncrement,
    heat_table: DiscreteKernelTable,
) -> FieldState:
    """One split step: exact heat semigroup over dt, then the noise kick.

    The semigroup is applied spectrally with the walk symbol -- the same
    kernel the supplied ``heat_table`` tabulates.  Working from the symbol
    keeps the zero mode exactly 1, so constant fields are exact fixed points;
    the table argument pins the caller to a consistent (walk, eps, dt, N).
    """
    if config.scheme != "splitstep":
        raise ValueError("config.scheme must be 'splitstep' for step_splitstep")
    if noise.values.shape[-1] != config.N:
        raise ValueError("noise increment has wrong length")
    if (
        heat_table.N != config.N
        or heat_table.eps != config.eps
        or not math.isclose(heat_table.t, config.dt, rel_tol=1e-12)
    ):
        raise ValueError("heat_table was built for a different (eps, dt, N)")
    with np.errstate(over="ignore", invalid="ignore"):
        new = _splitstep_update(
            state.values,
            config.heat_spectrum(),
            config.sigma,
            config.noise_coef,
            noise.values,
        )
    if not np.all(np.isfinite(new)):
        raise TrajectoryBlowup(state.t + config.dt, config.replica)
    return FieldState(t=state.t + config.dt, values=new)


# ---------------------------------------------------------------------------
# batch engine


@dataclass
class BatchResult:
    """Outcome of a replica block run to the horizon."""

    final_values: np.ndarray  # (count, N); aborted rows are NaN
    final_t: float
    abort_step: np.ndarray  # (count,) int; -1 where the trajectory survived
    neg_pairs: int  # (site, step) pairs with a negative field value
    total_pairs: int  # all live (site, step) pairs inspected
    value_min: float  # running min over all live values seen
    value_max: float

    @property
    def aborted(self) -> np.ndarray:
        return self.abort_step >= 0


def run_batch(
    config: SheConfig,
    replica0: int,
    count: int,
    snapshot_steps: Sequence[int] = (),
    on_snapshot: Callable[[int, float, np.ndarray, np.ndarray], None] | None = None,
) -> BatchResult:
    """Run replicas ``replica0 .. replica0+count-1`` to the horizon.

    ``on_snapshot(step, t, values, alive)`` fires after each step listed in
    ``snapshot_steps`` (step counts from 1; pass 0 to observe the initial
    field).  ``values`` is the live (count, N) buffer -- consume it before
    returning.  Blown-up replicas have their rows set to NaN and are excluded
    from the negativity and range accounting from that step on.
    """
    if config.N % 4:
        raise ValueError("N must be a multiple of 4 (noise block alignment)")
    n_steps = config.n_steps
    values = np.ones((count, config.N))
    alive = np.ones(count, dtype=bool)
    abort_step = np.full(count, -1, dtype=np.int64)
    wanted = set(int(s) for s in snapshot_steps)
    neg_pairs = 0
    total_pairs = 0
    value_min = 1.0
    value_max = 1.0

    if on_snapshot is not None and 0 in wanted:
        on_snapshot(0, 0.0, values, alive)

    if config.scheme == "splitstep":
        spectrum = config.heat_spectrum()
    drift_coef = config.dt * config.speedup
    noise_scale = math.sqrt(config.dt)
    sigma = config.sigma
    walk = config.walk
    coef = config.noise_coef

    # overflow inside a trajectory is an expected, accounted-for outcome
    # (the row aborts); keep numpy quiet about it
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_steps + 1):
            z = standard_normals(config.seed, step - 1, replica0, count, config.N)
            z *= noise_scale
            if config.scheme == "splitstep":
                values = _splitstep_update(values, spectrum, sigma, coef, z)
            else:
                values = _euler_update(values, walk, drift_coef, sigma, coef, z)

            # per-row extrema double as the blowup detector: any NaN/inf in a
            # row leaves its min or max non-finite (NaN propagates through both)
            row_min = values.min(axis=1)
            row_max = values.max(axis=1)
            row_ok = np.isfinite(row_min) & np.isfinite(row_max)
            died = alive & ~row_ok
            if np.any(died):
                abort_step[died] = step
                values[died] = np.nan
                alive &= row_ok

            if np.any(alive):
                lo = float(row_min[alive].min())
                hi = float(row_max[alive].max())
                if lo < value_min:
                    value_min = lo
                if hi > value_max:
                    value_max = hi
                total_pairs += int(np.count_nonzero(alive)) * config.N
                if lo < 0.0:  # scan for negative pairs only when one exists
                    live = values[alive] if not alive.all() else values
                    neg_pairs += int(np.count_nonzero(live < 0.0))

            if on_snapshot is not None and step in wanted:
                on_snapshot(step, step * config.dt, values, alive)

    return BatchResult(
        final_values=values,
        final_t=n_steps * config.dt,
        abort_step=abort_step,
        neg_pairs=neg_pairs,
        total_pairs=total_pairs,
        value_min=value_min,
        value_max=value_max,
    )


def snapshot_steps_for(config: SheConfig, times: Sequence[float]) -> list[int]:
    """Map requested times to step indices (nearest step, capped to the run)."""
    n = config.n_steps
    return sorted({min(max(round(t / config.dt), 0), n) for t in times})


def simulate(
    config: SheConfig,
    snapshot_times: Sequence[float] | None = None,
) -> FieldState | tuple[FieldState, list[FieldState]]:
    """Run one trajectory from U_0 = 1 to the horizon.

    Deterministic in (config, seed, replica).  With ``snapshot_times`` the
    return value is ``(final, snapshots)`` where snapshot times snap to the
    step grid.  Raises :class:`TrajectoryBlowup` if the field leaves the
    representable range, carrying the abort time.
    """
    snaps: list[FieldState] = []
    steps = [] if snapshot_times is None else snapshot_steps_for(config, snapshot_times)

    def keep(step: int, t: float, values: np.ndarray, alive: np.ndarray) -> None:
        if not alive[0]:
            return
        snaps.append(FieldState(t=t, values=values[0].copy()))

    result = run_batch(
        config,
        config.replica,
        1,
        snapshot_steps=steps,
        on_snapshot=keep if steps else None,
    )
    if result.abort_step[0] >= 0:
        raise TrajectoryBlowup(float(result.abort_step[0] * config.dt), config.replica)
    final = FieldState(t=result.final_t, values=result.final_values[0])
    if snapshot_times is None:
        return final
    return final, snaps


@dataclass(frozen=True)
class CoupledResult:
    """Terminal fields of a resolution pair driven by one sheet."""

    fine: FieldState
    coarse: FieldState
    sup_difference: float  # max over snapshot times and coarse sites of |coarse - fine|


def _coupled_snapshot_steps(n_coarse_steps: int, n_snapshots: int) -> np.ndarray:
    if n_coarse_steps == 0:
        return np.array([], dtype=np.int64)
    k = min(n_snapshots, n_coarse_steps)
    return np.unique(np.round(np.linspace(1, n_coarse_steps, k)).astype(np.int64))


def run_coupled_batch(
    config_fine: SheConfig,
    config_coarse: SheConfig,
    replica0: int,
    count: int,
    n_snapshots: int = 50,
    site_stride: int = 1,
    on_final: Callable[[np.ndarray, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Drive replica blocks at two resolutions from one sheet.

    Returns the per-replica sup over snapshot times and coarse sites of the
    absolute difference between the coarse field and the fine field read at
    the coarse sites.  ``site_stride`` restricts the sup to every stride-th
    coarse site; a resolution ladder passes the level's stride so every rung
    measures the same physical positions and the extreme-value statistics of
    the sup stay comparable across rungs.  ``on_final(fine_values,
    coarse_values)`` receives the terminal buffers.  Aborted replicas yield
    NaN sup entries.
    """
    if config_coarse.eps != 2 * config_fine.eps:
        raise ValueError("coarse eps must be twice fine eps")
    if config_fine.N != 2 * config_coarse.N:
        raise ValueError("fine N must be twice coarse N")
    if config_fine.walk is not config_coarse.walk and config_fine.walk != config_coarse.walk:
        raise ValueError("coupled configs must share the walk")
    if config_fine.sigma != config_coarse.sigma:
        raise ValueError("coupled configs must share sigma")
    if config_fine.seed != config_coarse.seed or config_fine.replica != config_coarse.replica:
        raise ValueError("coupled configs must share seed and replica")
    if abs(config_fine.T - config_coarse.T) > 1e-12:
        raise ValueError("coupled configs must share the horizon")
    ratio = config_coarse.dt / config_fine.dt
    m = round(ratio)
    if m < 1 or abs(ratio - m) > 1e-9 * ratio:
        raise ValueError("coarse dt must be an integer multiple of fine dt")
    if config_fine.scheme != config_coarse.scheme:
        raise ValueError("coupled configs must share the scheme")
    if site_stride < 1 or config_coarse.N % site_stride:
        raise ValueError("site_stride must divide the coarse site count")

    n_coarse = config_coarse.n_steps
    watch = set(int(s) for s in _coupled_snapshot_steps(n_coarse, n_snapshots))

    fine = np.ones((count, config_fine.N))
    coarse = np.ones((count, config_coarse.N))
    sup = np.zeros(count)

    if config_fine.scheme == "splitstep":
        spec_f = config_fine.heat_spectrum()
        spec_c = config_coarse.heat_spectrum()
    drift_f = config_fine.dt * config_fine.speedup
    drift_c = config_coarse.dt * config_coarse.speedup
    scale_f = math.sqrt(config_fine.dt)
    sigma = config_fine.sigma
    walk = config_fine.walk
    coef_f = config_fine.noise_coef
    coef_c = config_coarse.noise_coef

    fine_step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for kstep in range(1, n_coarse + 1):
            acc = np.zeros((count, config_coarse.N))
            for _ in range(m):
                z = standard_normals(
                    config_fine.seed, fine_step, replica0, count, config_fine.N
                )
                z *= scale_f
                acc += (z[:, 0::2] + z[:, 1::2]) / math.sqrt(2.0)
                if config_fine.scheme == "splitstep":
                    fine = _splitstep_update(fine, spec_f, sigma, coef_f, z)
                else:
                    fine = _euler_update(fine, walk, drift_f, sigma, coef_f, z)
                fine_step += 1
            if config_coarse.scheme == "splitstep":
                coarse = _splitstep_update(coarse, spec_c, sigma, coef_c, acc)
            else:
                coarse = _euler_update(coarse, walk, drift_c, sigma, coef_c, acc)
            if kstep in watch:
                gap = coarse[:, ::site_stride] - fine[:, :: 2 * site_stride]
                sup = np.fmax(sup, np.max(np.abs(gap), axis=1))

    bad = ~np.isfinite(fine.sum(axis=1)) | ~np.isfinite(coarse.sum(axis=1))
    sup[bad] = np.nan
    if on_final is not None:
        on_final(fine, coarse)
    return sup


def simulate_coupled(
    config_fine: SheConfig,
    config_coarse: SheConfig,
    n_snapshots: int = 50,
) -> CoupledResult:
    """One coupled replica at resolutions (eps/2, eps); see run_coupled_batch."""
    finals: dict[str, np.ndarray] = {}

    def grab(fine_vals: np.ndarray, coarse_vals: np.ndarray) -> None:
        finals["fine"] = fine_vals[0].copy()
        finals["coarse"] = coarse_vals[0].copy()

    sup = run_coupled_batch(
        config_fine,
        config_coarse,
        config_fine.replica,
        1,
        n_snapshots=n_snapshots,
        on_final=grab,
    )
    if not np.isfinite(sup[0]):
        raise TrajectoryBlowup(config_fine.T, config_fine.replica)
    t_end = config_coarse.n_steps * config_coarse.dt
    return CoupledResult(
        fine=FieldState(t=t_end, values=finals["fine"]),
        coarse=FieldState(t=t_end, values=finals["coarse"]),
        sup_difference=float(sup[0]),
    )
