"""Stable heat kernels, lattice transition kernels, and the estimates tying them.

Continuum side: the symmetric stable density ``p_t`` with symbol
``exp(-nu t |z|^alpha)``, evaluated pointwise by oscillatory quadrature and on
lattices by exact Fourier periodization.  Discrete side: the transition kernel
``P_t`` of the rescaled walk, obtained by inverting its semigroup on the torus
frequencies.  Both lattices share the same periodization, so their difference
is free of box-wrap artifacts and the local-CLT sup error can be measured
directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from shelab.walks import WalkModel, make_simple_walk, one_minus_char_on_box

# boundary mass tolerated by sup-error comparisons before raising
BOUNDARY_TOL = 1e-14
# default placement of the local-CLT regime threshold, > 20 + 4a for a <= 11
DEFAULT_K = 64.0
MAX_FOLDS = 64


class CutoffError(RuntimeError):
    """Frequency content does not decay inside the representable band."""


class BoundaryMassError(RuntimeError):
    """A kernel is non-negligible at the box edge; the box is too small."""


@dataclass(frozen=True)
class StableKernel:
    """Symmetric alpha-stable heat kernel with symbol exp(-nu t |z|^alpha)."""

    alpha: float
    nu: float

    def __post_init__(self) -> None:
        if not 1.0 < self.alpha <= 2.0:
            raise ValueError("alpha must lie in (1, 2]")
        if self.nu <= 0:
            raise ValueError("nu must be positive")


@dataclass(frozen=True)
class DiscreteKernelTable:
    """P_t(j eps) for j on a periodic box of N sites (j > N/2 is the negative side)."""

    eps: float
    t: float
    N: int
    values: np.ndarray  # clamped to >= 0; raw inversion residue checked at build

    def __post_init__(self) -> None:
        raw = np.asarray(self.values, dtype=float)
        if raw.shape != (self.N,):
            raise ValueError("values must have shape (N,)")
        if float(raw.min()) < -1e-14:
            raise ValueError(
                f"inversion produced {float(raw.min())!r} < -1e-14; "
                "not a transition kernel"
            )
        total = float(raw.sum())
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"kernel mass {total!r} differs from 1 beyond 1e-10")
        clamped = np.maximum(raw, 0.0)
        clamped.setflags(write=False)
        object.__setattr__(self, "values", clamped)


@dataclass(frozen=True)
class LcltErrorReport:
    """Sup-norm distance between the rescaled lattice kernel and its stable limit.

    ``bound_value`` is the active branch of the a-priori bound with the
    calibrated constant; the statement and proof of that bound disagree on the
    exponent of |ln eps| in the large-t branch, so ``bound_value_alt`` carries
    the other variant rather than adjudicating between them.
    """

    sup_error: float
    bound_value: float
    bound_value_alt: float
    lam: float  # frequency split separating bulk from tail in the large-t analysis
    regime: str  # "large-t" or "small-t"
    eps: float
    t: float
    K: float
    C: float

    def to_record(self) -> dict[str, float | str]:
        return {
            "sup_error": self.sup_error,
            "bound_value": self.bound_value,
            "bound_value_alt": self.bound_value_alt,
            "lambda": self.lam,
            "regime": self.regime,
            "eps": self.eps,
            "t": self.t,
            "K": self.K,
            "C": self.C,
        }


def _require_power_of_two(n: int) -> None:
    if n < 2 or n & (n - 1):
        raise ValueError(f"N must be a power of two, got {n}")


def stable_density(kernel: StableKernel, t: float, x: float) -> float:
    """Pointwise stable density by Fourier inversion.

    p_t(x) = (1/pi) * int_0^inf cos(z x) exp(-nu t z^alpha) dz, evaluated with
    cosine-weighted adaptive quadrature; absolute error well below 1e-9.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    scale = kernel.nu * t
    z_cut = (45.0 / scale) ** (1.0 / kernel.alpha)
    if x == 0.0:
        val, _ = integrate.quad(
            lambda z: math.exp(-scale * z**kernel.alpha), 0.0, z_cut, limit=400
        )
    else:
        val, _ = integrate.quad(
            lambda z: math.exp(-scale * z**kernel.alpha),
            0.0,
            z_cut,
            weight="cos",
            wvar=abs(x),
            limit=400,
        )
    return max(val / math.pi, 0.0)


def _folded_symbol(decay, N: int, L: float) -> np.ndarray:
    """Half-spectrum D_b = sum_n decay(2 pi |b + n N| / L) for b = 0..N/2.

    Folding the symbol onto the torus frequencies makes the subsequent inverse
    transform the *exact* periodization of the continuum kernel with period L,
    which is precisely how a lattice kernel on the same box wraps.
    """
    b = np.arange(N // 2 + 1, dtype=float)
    base = 2.0 * math.pi / L
    out = decay(base * b)
    for n in range(1, MAX_FOLDS + 1):
        add = decay(base * (n * N + b)) + decay(base * np.abs(b - n * N))
        out += add
        if float(add.max()) < 1e-18:
            return out
    raise CutoffError(
        "symbol does not decay within the folded band; t too small for this box"
    )


def stable_density_grid(kernel: StableKernel, t: float, eps: float, N: int) -> np.ndarray:
    """Stable density sampled at x = j*eps on a periodic box of N sites.

    Returns the L-periodization of p_t (L = N*eps), computed by folding the
    symbol onto the torus frequencies and inverting with a real FFT.  The fold
    is summed until additions fall below 1e-18, so the quadrature itself is
    exact; what remains is the wraparound of p_t at distance L, which matches
    the wraparound of any lattice kernel built on the same box.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    _require_power_of_two(N)
    scale = kernel.nu * t
    alpha = kernel.alpha
    L = N * eps

    def decay(z: np.ndarray) -> np.ndarray:
        return np.exp(-scale * z**alpha)

    spectrum = _folded_symbol(decay, N, L)
    vals = np.fft.irfft(spectrum, n=N) / eps
    return np.maximum(vals, 0.0)


def discrete_transition(model: WalkModel, eps: float, t: float, N: int) -> DiscreteKernelTable:
    """Transition kernel of the rescaled walk by torus Fourier inversion.

    values[j] = (1/N) * sum_k exp(-t eps^-alpha (1 - mu_hat(z_k))) cos(j z_k)
    with z_k = 2 pi k / N.  The frequency-zero term is exactly 1, so the table
    sums to 1 to rounding; t = 0 gives the identity kernel.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    _require_power_of_two(N)
    omc = one_minus_char_on_box(model.measure, N)
    spectrum = np.exp(-t * eps**-model.alpha * omc)
    vals = np.fft.irfft(spectrum, n=N)
    return DiscreteKernelTable(eps=eps, t=t, N=N, values=vals)


def l2_kernel_identity(kernel: StableKernel, t: float) -> tuple[float, float]:
    """Check (p_t * p_t)(0) = p_2t(0) by two independent routes.

    The left side integrates the squared density over space (pointwise values
    from :func:`stable_density`, plus an analytic power-tail correction for
    alpha < 2); the right side is a single inversion at doubled time.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    alpha, nu = kernel.alpha, kernel.nu
    scale = (nu * t) ** (1.0 / alpha)
    if alpha == 2.0:
        y_max = 8.0 * math.sqrt(4.0 * nu * t) + 2.0
        tail = 0.0
    else:
        y_max = 40.0 * max(1.0, scale)
        # p_t(y) ~ A y^-(1+alpha) with A = nu t Gamma(1+alpha) sin(pi alpha/2) / pi
        amp = nu * t * math.gamma(1.0 + alpha) * math.sin(math.pi * alpha / 2.0) / math.pi
        tail = amp**2 * y_max ** (-1.0 - 2.0 * alpha) / (1.0 + 2.0 * alpha)
    body, _ = integrate.quad(
        lambda y: stable_density(kernel, t, y) ** 2, 0.0, y_max, limit=400
    )
    lhs = 2.0 * (body + tail)
    rhs = stable_density(kernel, 2.0 * t, 0.0)
    return lhs, rhs


@lru_cache(maxsize=8)
def _lclt_constant(K: float) -> float:
    """Calibrate the constant C of the sup-error bound, once, on the simple walk.

    The fit is done at eps = 0.2 at the earliest time inside the large-t
    regime for this K (1.25x the regime threshold), then held fixed for every
    other (model, eps, t).
    """
    model = make_simple_walk()
    eps = 0.2
    a, alpha = model.a, model.alpha
    log_eps = abs(math.log(eps))
    t_cal = 1.25 * K * eps**alpha * log_eps ** ((a + alpha) / a)
    x_edge = math.sqrt(4.0 * model.nu * t_cal * 40.0)
    N = 1 << max(8, math.ceil(math.log2(2.6 * x_edge / eps)))
    table = discrete_transition(model, eps, t_cal, N)
    cont = stable_density_grid(StableKernel(alpha, model.nu), t_cal, eps, N)
    sup = float(np.max(np.abs(table.values / eps - cont)))
    shape = eps**a * log_eps ** ((a + alpha) / alpha) / t_cal ** ((a + 1.0) / alpha)
    return sup / shape


def lclt_sup_error(
    model: WalkModel,
    eps: float,
    t: float,
    N: int,
    K: float = DEFAULT_K,
    boundary_tol: float = BOUNDARY_TOL,
) -> LcltErrorReport:
    """Sup over the box of |eps^-1 P_t(x) - p_t(x)| with the a-priori bound.

    Both kernels are computed with identical periodization, so wraparound
    cancels in the difference; ``boundary_tol`` guards against boxes too small
    for the kernels themselves.  Heavy-tail walks have power-law kernels whose
    boundary values cannot reach 1e-14 at practical box sizes; callers pass an
    explicit looser tolerance for those, justified by the identical-fold
    cancellation.

    At t = 0 the lattice kernel is an atom while the continuum limit is a
    point mass, so the sup distance is reported as infinity.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    a, alpha = model.a, model.alpha
    log_eps = abs(math.log(eps))
    C = _lclt_constant(K)
    threshold = K * eps**alpha * log_eps ** ((a + alpha) / a)

    if t == 0.0:
        return LcltErrorReport(
            sup_error=math.inf,
            bound_value=math.inf,
            bound_value_alt=math.inf,
            lam=math.inf,
            regime="small-t",
            eps=eps,
            t=t,
            K=K,
            C=C,
        )

    table = discrete_transition(model, eps, t, N)
    cont = stable_density_grid(StableKernel(alpha, model.nu), t, eps, N)
    edge = N // 2
    edge_disc = float(table.values[edge] / eps)
    edge_cont = float(cont[edge])
    if max(edge_disc, edge_cont) > boundary_tol:
        raise BoundaryMassError(
            f"kernel boundary values ({edge_disc:.3e}, {edge_cont:.3e}) exceed "
            f"{boundary_tol:.1e}; enlarge the box"
        )
    sup = float(np.max(np.abs(table.values / eps - cont)))

    lam = ((10.0 + 2.0 * a) * log_eps / (model.nu * t)) ** (1.0 / alpha)
    if t >= threshold:
        regime = "large-t"
        denom = t ** ((a + 1.0) / alpha)
        bound = C * eps**a * log_eps ** ((a + alpha) / alpha) / denom
        bound_alt = C * eps**a * log_eps ** ((a + alpha) / a) / denom
    else:
        regime = "small-t"
        bound = C * (t ** (-1.0 / alpha) + 1.0 / eps)
        bound_alt = bound
    return LcltErrorReport(
        sup_error=sup,
        bound_value=bound,
        bound_value_alt=bound_alt,
        lam=lam,
        regime=regime,
        eps=eps,
        t=t,
        K=K,
        C=C,
    )


def kernel_l2_difference(
    model: WalkModel,
    eps: float,
    T: float,
    nodes: int = 64,
    N: int | None = None,
) -> float:
    """Time-integrated squared L2 distance between the kernels.

    Evaluates int_{eps^alpha}^T dt sum_j eps |eps^-1 P_t(j eps) - p_t(j eps)|^2
    on a log-spaced time grid (the integrand is a power law in t, so log
    spacing equidistributes relative error).
    """
    if T <= eps**model.alpha:
        raise ValueError("T must exceed eps^alpha")
    if N is None:
        N = default_box(model, eps, T, tail_level=1e-9)
    kernel = StableKernel(model.alpha, model.nu)
    times = np.geomspace(eps**model.alpha, T, nodes)
    vals = np.empty(nodes)
    for i, t in enumerate(times):
        table = discrete_transition(model, eps, float(t), N)
        cont = stable_density_grid(kernel, float(t), eps, N)
        diff = table.values / eps - cont
        vals[i] = eps * float(np.sum(diff * diff))
    return float(np.trapezoid(vals, times))


def discrete_l2_mass(model: WalkModel, eps: float, s: float, N: int) -> float:
    """sum_j P_s(j eps)^2 via Parseval on the torus; always <= 1."""
    omc = one_minus_char_on_box(model.measure, N)
    rates = 2.0 * s * eps**-model.alpha * omc
    terms = np.exp(-rates)
    # reassemble the full torus spectrum from the half: k and N-k coincide
    total = terms[0] + terms[-1] + 2.0 * float(np.sum(terms[1:-1]))
    return total / N


def green_function_bound(
    model: WalkModel,
    eps: float,
    t: float,
    N: int | None = None,
) -> float:
    """eps^-1 * int_0^t sum_j P_s(j eps)^2 ds, exactly in s via the torus spectrum.

    Each torus frequency contributes an explicit exponential integral, so no
    time quadrature is involved.  The result stays bounded as eps -> 0.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0.0:
        return 0.0
    if N is None:
        N = default_box(model, eps, t, tail_level=1e-9)
    omc = one_minus_char_on_box(model.measure, N)
    c = eps**-model.alpha * omc
    out = np.empty_like(c)
    out[0] = t  # zero-frequency term integrates the constant 1
    pos = c[1:]
    out[1:] = (1.0 - np.exp(-2.0 * t * pos)) / (2.0 * pos)
    total = out[0] + out[-1] + 2.0 * float(np.sum(out[1:-1]))
    return total / (N * eps)


def default_box(model: WalkModel, eps: float, t_max: float, tail_level: float = 1e-15) -> int:
    """Smallest power-of-two box whose edge keeps p_{t_max} below tail_level.

    Gaussian decay for alpha = 2; the stable power tail otherwise.  A floor of
    2x the measure's truncation radius keeps jump aliasing out of play.
    """
    nu_t = model.nu * t_max
    if model.alpha == 2.0:
        x_edge = math.sqrt(4.0 * nu_t * math.log(1.0 / tail_level))
    else:
        amp = (
            nu_t
            * math.gamma(1.0 + model.alpha)
            * math.sin(math.pi * model.alpha / 2.0)
            / math.pi
        )
        x_edge = (amp / tail_level) ** (1.0 / (1.0 + model.alpha))
    sites = max(2.6 * x_edge / eps, 2.0 * model.measure.truncation_radius, 64.0)
    return 1 << math.ceil(math.log2(sites))


def kernel_comparison_rows(
    model: WalkModel, eps: float, t: float, N: int
) -> list[tuple[int, float, float, float, float]]:
    """Rows (j, x, P, p, diff) for CSV export, j running over the signed box."""
    table = discrete_transition(model, eps, t, N)
    cont = stable_density_grid(StableKernel(model.alpha, model.nu), t, eps, N)
    rows = []
    for idx in range(N):
        j = idx if idx <= N // 2 else idx - N
        rows.append(
            (
                j,
                j * eps,
                float(table.values[idx]),
                float(cont[idx]),
                float(table.values[idx] / eps - cont[idx]),
            )
        )
    rows.sort(key=lambda r: r[0])
    return rows
