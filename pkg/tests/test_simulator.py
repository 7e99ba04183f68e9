import math

import numpy as np
import pytest

from shelab.kernels import discrete_transition
from shelab.noise import SheetGrid, coupled_streams, sample_increments
from shelab.simulator import (
    BatchResult,
    FieldState,
    SheConfig,
    SigmaSpec,
    TrajectoryBlowup,
    default_dt,
    run_batch,
    run_coupled_batch,
    simulate,
    simulate_coupled,
    snapshot_steps_for,
    step_euler,
    step_splitstep,
)
from shelab.walks import make_simple_walk, make_stable_tail_walk, one_minus_char_on_box

WALK = make_simple_walk()


def linear(lam=1.0):
    return SigmaSpec(kind="linear", lam=lam)


def config(**kw):
    base = dict(walk=WALK, eps=0.1, T=0.1, N=64, sigma=linear(), seed=3)
    base.update(kw)
    return SheConfig(**base)


# --- sigma specs ------------------------------------------------------------


def test_sigma_certified_constants():
    assert linear(0.7).lip == 0.7
    assert linear(0.7).l_lower == 0.7
    ab = SigmaSpec(kind="abs_linear", lam=0.7)
    assert (ab.lip, ab.l_lower) == (0.7, 0.7)
    cl = SigmaSpec(kind="clipped_linear", lam=0.7, clip=2.0)
    assert (cl.lip, cl.l_lower) == (0.7, 0.0)
    const = SigmaSpec(kind="affine_bounded", lam=0.7)
    assert (const.lip, const.l_lower) == (0.0, 0.0)
    assert not const.fixes_zero
    assert SigmaSpec(kind="affine_bounded", lam=0.0).fixes_zero
    assert cl.fixes_zero and ab.fixes_zero


def test_sigma_validation():
    with pytest.raises(ValueError):
        SigmaSpec(kind="cubic")
    with pytest.raises(ValueError):
        SigmaSpec(kind="clipped_linear", lam=1.0)  # missing clip
    with pytest.raises(ValueError):
        SigmaSpec(kind="linear", lam=1.0, clip=2.0)  # clip on the wrong kind
    with pytest.raises(ValueError):
        SigmaSpec(kind="linear", lam=-1.0)


def test_sigma_apply():
    z = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    assert np.array_equal(linear(2.0).apply(z), 2.0 * z)
    assert np.array_equal(SigmaSpec(kind="abs_linear", lam=2.0).apply(z), 2.0 * np.abs(z))
    clipped = SigmaSpec(kind="clipped_linear", lam=2.0, clip=1.5).apply(z)
    assert np.array_equal(clipped, np.minimum(2.0 * np.abs(z), 1.5))
    assert np.array_equal(SigmaSpec(kind="affine_bounded", lam=0.3).apply(z), np.full(5, 0.3))


# --- configuration ----------------------------------------------------------


def test_default_dt():
    assert default_dt(WALK, 0.05) == 0.05**2 / 4
    assert default_dt(WALK, 0.1) == 1e-3  # capped: 0.1^2/4 exceeds the resolution cap
    assert default_dt(WALK, 1.0) == 1e-3
    heavy = make_stable_tail_walk(alpha=1.5, truncation_radius=6)
    assert default_dt(heavy, 0.01) == 0.01**1.5 / 4
    assert default_dt(heavy, 0.25) == 1e-3


def test_config_validation():
    with pytest.raises(ValueError):
        config(N=63)  # not a power of two
    with pytest.raises(ValueError):
        config(N=4)  # too small
    with pytest.raises(ValueError):
        config(eps=0.0)
    with pytest.raises(ValueError):
        config(T=-1.0)
    with pytest.raises(ValueError):
        config(scheme="implicit")
    with pytest.raises(ValueError):
        config(seed=-1)
    # euler stability: dt above eps^alpha/4 rejected, at the bound accepted
    with pytest.raises(ValueError):
        config(scheme="euler", dt=0.1**2 / 4 * 1.5)
    config(scheme="euler", dt=0.1**2 / 4)
    config(scheme="splitstep", dt=0.1)  # splitstep has no stability cap


def test_config_derived_quantities():
    cfg = config(eps=0.2, dt=1e-3, T=0.5)
    assert cfg.speedup == 0.2**-2
    assert cfg.noise_coef == 1 / math.sqrt(0.2)
    assert cfg.n_steps == 500
    assert config(rho_exponent=1.0, eps=0.2).speedup == 5.0
    spec = cfg.heat_spectrum()
    assert spec.shape == (cfg.N // 2 + 1,)
    assert spec[0] == 1.0  # zero mode exact: constants are fixed points
    assert np.all(spec <= 1.0)


def test_field_state_rejects_nonfinite():
    with pytest.raises(ValueError):
        FieldState(t=0.0, values=np.array([1.0, np.inf]))


# --- exactness and determinism ----------------------------------------------


def test_zero_sigma_keeps_flat_field_exact():
    # with sigma == 0 the dynamics reduce to the heat flow, whose constant
    # fixed point both schemes must preserve to the last bit
    for scheme in ("euler", "splitstep"):
        cfg = config(sigma=linear(0.0), scheme=scheme, T=0.2, dt=1e-3)
        final = simulate(cfg)
        assert np.all(final.values == 1.0)


def test_manual_steps_match_simulate_bitwise():
    cfg = config(T=0.05, dt=2.5e-3)
    table = discrete_transition(WALK, cfg.eps, cfg.dt, cfg.N)
    grid = SheetGrid(eps=cfg.eps, dt=cfg.dt, N=cfg.N, seed=cfg.seed, replica=cfg.replica)
    state = FieldState(t=0.0, values=np.ones(cfg.N))
    for step in range(cfg.n_steps):
        state = step_splitstep(state, cfg, sample_increments(grid, step), table)
    final = simulate(cfg)
    assert np.array_equal(state.values, final.values)
    assert final.t == pytest.approx(state.t)

    cfg_e = config(T=0.05, dt=2.5e-3, scheme="euler")
    state = FieldState(t=0.0, values=np.ones(cfg_e.N))
    for step in range(cfg_e.n_steps):
        state = step_euler(state, cfg_e, sample_increments(grid, step))
    assert np.array_equal(state.values, simulate(cfg_e).values)


def test_step_validation():
    cfg = config(dt=2.5e-3)
    grid = SheetGrid(eps=cfg.eps, dt=cfg.dt, N=cfg.N, seed=3, replica=0)
    inc = sample_increments(grid, 0)
    state = FieldState(t=0.0, values=np.ones(cfg.N))
    table = discrete_transition(WALK, cfg.eps, cfg.dt, cfg.N)
    with pytest.raises(ValueError):
        step_euler(state, cfg, inc)  # scheme is splitstep
    with pytest.raises(ValueError):
        step_splitstep(state, config(scheme="euler", dt=2.5e-3), inc, table)
    short = sample_increments(SheetGrid(eps=0.1, dt=cfg.dt, N=32, seed=3, replica=0), 0)
    with pytest.raises(ValueError):
        step_splitstep(state, cfg, short, table)
    stale = discrete_transition(WALK, cfg.eps, 2 * cfg.dt, cfg.N)
    with pytest.raises(ValueError):
        step_splitstep(state, cfg, inc, stale)


def test_batch_rows_match_single_runs_bitwise():
    cfg = config(T=0.05, dt=2.5e-3)
    batch = run_batch(cfg, 5, 4)
    for r in range(4):
        single = simulate(config(T=0.05, dt=2.5e-3, replica=5 + r))
        assert np.array_equal(batch.final_values[r], single.values)
    assert not batch.aborted.any()
    assert batch.total_pairs == 4 * cfg.n_steps * cfg.N


def test_t_zero_returns_initial_field():
    final = simulate(config(T=0.0))
    assert final.t == 0.0
    assert np.all(final.values == 1.0)


# --- accounting -------------------------------------------------------------


def test_batch_accounting_matches_brute_force():
    # negative pairs / extrema bookkeeping recomputed trajectory by trajectory
    cfg = config(N=8, T=0.06, dt=2e-3, sigma=linear(3.0), seed=11)
    batch = run_batch(cfg, 0, 3)
    neg = 0
    vmin, vmax = 1.0, 1.0
    for r in range(3):
        c = config(N=8, T=0.06, dt=2e-3, sigma=linear(3.0), seed=11, replica=r)
        grid = SheetGrid(eps=c.eps, dt=c.dt, N=c.N, seed=c.seed, replica=r)
        table = discrete_transition(WALK, c.eps, c.dt, c.N)
        state = FieldState(t=0.0, values=np.ones(c.N))
        for step in range(c.n_steps):
            state = step_splitstep(state, c, sample_increments(grid, step), table)
            neg += int(np.count_nonzero(state.values < 0))
            vmin = min(vmin, state.values.min())
            vmax = max(vmax, state.values.max())
    assert batch.neg_pairs == neg
    assert batch.value_min == vmin
    assert batch.value_max == vmax


def test_blowup_detected_and_reported():
    cfg = config(T=1.0, dt=0.01, sigma=linear(1e6), N=8, seed=1)
    with pytest.raises(TrajectoryBlowup) as err:
        simulate(cfg)
    assert err.value.t > 0
    batch = run_batch(cfg, 0, 5)
    assert batch.aborted.all()
    assert np.all(batch.abort_step >= 1)
    assert np.all(np.isnan(batch.final_values))


def test_coarser_euler_steps_produce_more_negative_mass():
    # the explicit scheme overshoots through zero more often at larger dt
    def neg_fraction(dt):
        cfg = config(eps=0.2, N=64, T=0.5, dt=dt, scheme="euler", sigma=linear(3.0), seed=7)
        batch = run_batch(cfg, 0, 200)
        assert not batch.aborted.any()
        return batch.neg_pairs / batch.total_pairs

    coarse, fine = neg_fraction(0.01), neg_fraction(0.0025)
    assert coarse > fine > 0
    assert coarse > 2 * fine


# --- snapshots ---------------------------------------------------------------


def test_snapshot_steps_round_to_grid():
    cfg = config(T=1.0, dt=0.25)
    assert snapshot_steps_for(cfg, [0.1, 0.26, 0.9, 1.0, 2.0]) == [0, 1, 4]


def test_simulate_with_snapshots():
    cfg = config(T=0.1, dt=0.01)
    final, snaps = simulate(cfg, snapshot_times=[0.0, 0.05, 0.1])
    assert [s.t for s in snaps] == [0.0, pytest.approx(0.05), pytest.approx(0.1)]
    assert np.all(snaps[0].values == 1.0)
    assert np.array_equal(snaps[-1].values, final.values)


def test_on_snapshot_receives_initial_field():
    cfg = config(T=0.02, dt=0.01)
    seen = []
    run_batch(cfg, 0, 2, snapshot_steps=[0, 2], on_snapshot=lambda s, t, v, a: seen.append((s, t, v.copy())))
    assert [s for s, _, _ in seen] == [0, 2]
    assert seen[0][1] == 0.0
    assert np.all(seen[0][2] == 1.0)


# --- second-moment oracle ----------------------------------------------------


def _exact_second_moment(cfg: SheConfig, n_steps: int) -> float:
    """E[U_n(0)^2] for the splitstep scheme with linear sigma, computed exactly.

    With sigma(u) = lam u the field stays Gaussian-linear in the noise and its
    translation-invariant covariance is circulant, so one step acts on the
    covariance spectrum as c_k -> h_k^2 c_k + (lam^2 dt / eps) * mean(c),
    where h_k is the one-step heat symbol.  No sampling error.
    """
    omc = one_minus_char_on_box(cfg.walk.measure, cfg.N)
    full = np.concatenate([omc, omc[-2:0:-1]])  # mirror the rfft half band
    spec2 = np.exp(-cfg.dt * cfg.speedup * full) ** 2
    kick = cfg.sigma.lam**2 * cfg.dt / cfg.eps
    c_hat = np.zeros(cfg.N)
    c_hat[0] = cfg.N  # U_0 == 1: all-ones covariance
    for _ in range(n_steps):
        c_hat *= spec2
        c_hat += kick * c_hat.mean()
    return float(c_hat.mean())


def test_monte_carlo_second_moment_matches_exact_recursion():
    from shelab.experiments import estimate_moment

    cfg = config(eps=0.1, N=256, T=0.5, dt=2.5e-3, seed=0)
    exact = _exact_second_moment(cfg, cfg.n_steps)
    report = estimate_moment(cfg, points=(0,), order=2, replicas=2500)
    assert abs(report.estimate - exact) < 4 * report.std_error
    # the lattice value is a real discretization of the continuum equation:
    # it should be near (but not equal to) the continuum second moment
    theta = cfg.sigma.lam**4 / (8 * WALK.nu)
    continuum = math.exp(theta * 0.5) * (1 + math.erf(math.sqrt(theta * 0.5)))
    assert abs(exact / continuum - 1) < 0.02


# --- coupled resolutions -----------------------------------------------------


def _pair(T=0.1, lam=1.0, seed=3, stride_n=64):
    fine = SheConfig(
        walk=WALK, eps=0.1, T=T, N=stride_n, sigma=linear(lam), dt=0.1**2 / 4, seed=seed
    )
    coarse = SheConfig(
        walk=WALK, eps=0.2, T=T, N=stride_n // 2, sigma=linear(lam), dt=0.2**2 / 4, seed=seed
    )
    return fine, coarse


def test_coupled_validation():
    fine, coarse = _pair()
    with pytest.raises(ValueError):
        run_coupled_batch(fine, fine, 0, 1)
    with pytest.raises(ValueError):
        run_coupled_batch(
            SheConfig(walk=WALK, eps=0.1, T=0.1, N=32, sigma=linear(), dt=fine.dt), coarse, 0, 1
        )
    with pytest.raises(ValueError):
        run_coupled_batch(fine, SheConfig(walk=WALK, eps=0.2, T=0.1, N=32, sigma=linear(), dt=0.011), 0, 1)
    with pytest.raises(ValueError):
        run_coupled_batch(fine, SheConfig(walk=WALK, eps=0.2, T=0.1, N=32, sigma=linear(2.0), dt=0.01), 0, 1)
    with pytest.raises(ValueError):
        run_coupled_batch(fine, SheConfig(walk=WALK, eps=0.2, T=0.1, N=32, sigma=linear(), dt=0.01, seed=9), 0, 1)
    with pytest.raises(ValueError):
        run_coupled_batch(fine, coarse, 0, 1, site_stride=3)


def test_coupled_matches_manual_twin_loop_bitwise():
    fine_cfg, coarse_cfg = _pair()
    result = simulate_coupled(fine_cfg, coarse_cfg)

    grid_f = SheetGrid(eps=0.1, dt=fine_cfg.dt, N=fine_cfg.N, seed=3, replica=0)
    grid_c = SheetGrid(eps=0.2, dt=coarse_cfg.dt, N=coarse_cfg.N, seed=3, replica=0)
    stream = coupled_streams(grid_f, grid_c)
    table_f = discrete_transition(WALK, 0.1, fine_cfg.dt, fine_cfg.N)
    table_c = discrete_transition(WALK, 0.2, coarse_cfg.dt, coarse_cfg.N)
    uf = FieldState(t=0.0, values=np.ones(fine_cfg.N))
    uc = FieldState(t=0.0, values=np.ones(coarse_cfg.N))
    sup = 0.0
    for _ in range(coarse_cfg.n_steps):
        fine_incs, coarse_inc = next(stream)
        for inc in fine_incs:
            uf = step_splitstep(uf, fine_cfg, inc, table_f)
        uc = step_splitstep(uc, coarse_cfg, coarse_inc, table_c)
        sup = max(sup, float(np.max(np.abs(uc.values - uf.values[::2]))))

    assert np.array_equal(result.fine.values, uf.values)
    assert np.array_equal(result.coarse.values, uc.values)
    assert result.sup_difference == sup > 0


def test_site_stride_restricts_the_sup():
    fine_cfg, coarse_cfg = _pair(T=0.2)
    full = run_coupled_batch(fine_cfg, coarse_cfg, 0, 8, site_stride=1)
    strided = run_coupled_batch(fine_cfg, coarse_cfg, 0, 8, site_stride=4)
    assert np.all(strided <= full)
    assert np.all(strided > 0)


def test_coupled_pair_tracks_each_other():
    # the whole point of the coupling: one sheet keeps the two resolutions
    # close, while independent seeds leave them order-one apart
    fine_cfg, coarse_cfg = _pair(T=0.5)
    coupled = run_coupled_batch(fine_cfg, coarse_cfg, 0, 16)
    alt = SheConfig(
        walk=WALK, eps=0.2, T=0.5, N=32, sigma=linear(), dt=0.2**2 / 4, seed=99
    )
    fine_final = run_batch(fine_cfg, 0, 16).final_values
    alt_final = run_batch(alt, 0, 16).final_values
    indep = np.max(np.abs(alt_final - fine_final[:, ::2]), axis=1)
    assert np.median(coupled) < np.median(indep)
