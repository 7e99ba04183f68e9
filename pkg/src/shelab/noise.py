"""Discretized Brownian-sheet increments with counter-based keying.

Every Gaussian increment is a pure function of (seed, replica, site, step):
the uniform word comes from a Philox block cipher keyed by (seed, stream tag)
with the counter laid out so that word ``replica * N + j`` at counter slot
``step`` is the increment for site ``j``.  The inverse normal CDF turns words
into deviates, so the map uniform -> normal is monotone and couplings across
sigma-variants or resolutions compare like with like.

Coarse resolutions are driven by the *same* sheet as fine ones through the
exact partition identity coarse[j] = (fine[2j] + fine[2j+1]) / sqrt(2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

# fixed stream tag occupying the second Philox key word; distinguishes the
# increment stream from any future keyed stream sharing a master seed
_STREAM_TAG = 0x7368656574313244

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SheetGrid:
    """Discretization cell layout plus the noise identity (seed, replica)."""

    eps: float  # spatial cell width
    dt: float  # time step
    N: int  # periodic site count
    seed: int  # 64-bit master seed
    replica: int  # replica index >= 0

    def __post_init__(self) -> None:
        if self.eps <= 0 or self.dt <= 0:
            raise ValueError("eps and dt must be positive")
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.replica < 0:
            raise ValueError("replica must be nonnegative")


@dataclass(frozen=True)
class NoiseIncrement:
    """Per-site Gaussian increments for one time step (variance dt each)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("increments must be finite")
        object.__setattr__(self, "values", vals)


def standard_normals(
    seed: int, step: int, replica0: int, count: int, n_sites: int
) -> np.ndarray:
    """Standard-normal block for replicas [replica0, replica0+count), one step.

    Word ``r * n_sites + j`` of the keyed stream maps to (replica r, site j),
    independent of how callers batch replicas; a Philox counter block holds 4
    words, so ``n_sites`` must be a multiple of 4 to keep every replica's
    stream block-aligned.
    """
    if n_sites % 4:
        raise ValueError("site count must be a multiple of 4 for block alignment")
    if step < 0 or replica0 < 0:
        raise ValueError("step and replica must be nonnegative")
    word0 = replica0 * n_sites
    bitgen = Philox(
        key=np.array([seed, _STREAM_TAG], dtype=np.uint64),
        counter=np.array([word0 // 4, 0, step, 0], dtype=np.uint64),
    )
    u = Generator(bitgen).random(count * n_sites)
    # random() can emit exactly 0.0 (probability 2^-53 per word); nudge those
    # to the next representable cell so the inverse CDF stays finite
    np.fmax(u, 2.0**-54, out=u)
    ndtri(u, out=u)
    return u.reshape(count, n_sites)


def sample_increments(grid: SheetGrid, step: int) -> NoiseIncrement:
    """Increments ΔB for one step of one replica; pure in (seed, replica, j, step)."""
    z = standard_normals(grid.seed, step, grid.replica, 1, grid.N)[0]
    return NoiseIncrement(values=z * math.sqrt(grid.dt))


def coarsen(fine: NoiseIncrement) -> NoiseIncrement:
    """Halve the spatial resolution by the sheet-partition identity.

    coarse[j] = (fine[2j] + fine[2j+1]) / sqrt(2): merging two width-eps/2
    cells into one width-eps cell preserves the per-cell variance.
    """
    vals = fine.values
    if vals.shape[-1] % 2:
        raise ValueError("cannot coarsen an odd number of sites")
    merged = (vals[..., 0::2] + vals[..., 1::2]) / _SQRT2
    return NoiseIncrement(values=merged)


def coupled_streams(
    grid_fine: SheetGrid, grid_coarse: SheetGrid
) -> Iterator[tuple[list[NoiseIncrement], NoiseIncrement]]:
    """Drive two resolutions from one sheet.

    Yields, per coarse step, the list of fine increments for that window and
    the coarse increment obtained by coarsening each fine increment and
    summing over the window (Brownian additivity in time).
    """
    if grid_fine.seed != grid_coarse.seed or grid_fine.replica != grid_coarse.replica:
        raise ValueError("coupled grids must share seed and replica")
    if grid_fine.N != 2 * grid_coarse.N:
        raise ValueError("fine grid must have exactly twice the sites")
    ratio = grid_coarse.dt / grid_fine.dt
    m = round(ratio)
    if m < 1 or abs(ratio - m) > 1e-9 * ratio:
        raise ValueError(
            f"coarse dt must be an integer multiple of fine dt (ratio {ratio!r})"
        )
    step = 0
    while True:
        fines = []
        total = np.zeros(grid_coarse.N)
        for _ in range(m):
            inc = sample_increments(grid_fine, step)
            fines.append(inc)
            total = total + coarsen(inc).values
            step += 1
        yield fines, NoiseIncrement(values=total)
