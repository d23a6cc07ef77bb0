import math

import numpy as np
import pytest

from phi4lattice.dynamics import (
    BatchChain,
    BlowUpError,
    ChainState,
    SimConfig,
    _Stepper,
    drift_phi,
    drift_psi,
    run_chain,
    step,
)
from phi4lattice.lattice import Field, build_grid, laplacian, mu_symbol, sample_test_function
from phi4lattice.noise import NoiseStream
from phi4lattice.potential import TruncatedPotential
from phi4lattice.renorm import RenormConstants, compute_c1


def grid1(n=4):
    return build_grid(1, 1.0, n)


class TestDrifts:
    def test_zero_field(self):
        g = grid1()
        rc = RenormConstants.for_grid(g)
        assert np.all(drift_phi(g.zero_field(), rc).values == 0.0)

    def test_constant_field(self):
        g = grid1()
        rc = RenormConstants.for_grid(g)
        c = 1.3
        out = drift_phi(Field(g, np.full(g.shape, c)), rc)
        expected = rc.mass_counterterm * c - c**3
        assert np.allclose(out.values, expected, rtol=1e-14)

    def test_sitewise_oracle(self):
        g = build_grid(1, 1.0, 3)
        rc = RenormConstants.for_grid(g)
        rng = np.random.default_rng(3)
        u = Field(g, rng.standard_normal(g.shape))
        lap = laplacian(u).values
        expected = lap + rc.mass_counterterm * u.values - u.values**3
        assert np.allclose(drift_phi(u, rc).values, expected, rtol=1e-14)

    def test_psi_beta_zero_reduces(self):
        g = grid1()
        rc = RenormConstants.for_grid(g)
        p = TruncatedPotential(3)
        psi_eps = np.ones(g.shape) * 0.2
        rng = np.random.default_rng(4)
        u = Field(g, rng.standard_normal(g.shape))
        assert np.array_equal(
            drift_psi(u, rc, p, 0.0, psi_eps).values, drift_phi(u, rc).values
        )

    def test_psi_plateau_region(self):
        g = grid1()
        rc = RenormConstants.for_grid(g)
        p = TruncatedPotential(2)
        psi_eps = np.ones(g.shape)
        u = Field(g, np.full(g.shape, 10.0))  # pairing = 10 > n+1
        tilted = drift_psi(u, rc, p, 0.5, psi_eps)
        assert np.array_equal(tilted.values, drift_phi(u, rc).values)

    def test_psi_untruncated_oracle(self):
        g = grid1()
        rc = RenormConstants.for_grid(g)
        p = TruncatedPotential(math.inf)
        rng = np.random.default_rng(5)
        psi_eps = rng.uniform(0, 1, g.shape)
        u = Field(g, rng.standard_normal(g.shape))
        x = g.eps * np.sum(u.values * psi_eps)
        expected = drift_phi(u, rc).values + 0.7 * x**3 * psi_eps
        assert np.allclose(drift_psi(u, rc, p, 0.7, psi_eps).values, expected, rtol=1e-13)


class TestStep:
    def test_eigenmode_decay_factor(self):
        cfg = SimConfig(d=1, L=1.0, N=4, dt=0.05, t_end=1.0, quadratic=True)
        g = cfg.grid()
        st = _Stepper(cfg, g)
        k = 2
        u0 = np.cos(2 * np.pi * k * g.axis_coords())
        u1 = st.advance(u0.copy(), np.zeros(g.shape))
        mu = mu_symbol(g)
        assert np.allclose(u1, u0 / (1.0 + 0.05 * (mu[k] + cfg.m2)), rtol=1e-12)

    def test_imex_explicit_richardson(self):
        # one-step difference between the schemes is O(dt^2)
        g = build_grid(1, 1.0, 3)
        rng = np.random.default_rng(6)
        u0 = 0.3 * rng.standard_normal(g.shape)
        errs = []
        for dt in (2e-4, 1e-4):
            cfg_i = SimConfig(d=1, L=1.0, N=3, dt=dt, t_end=dt, integrator="imex")
            cfg_e = SimConfig(d=1, L=1.0, N=3, dt=dt, t_end=dt, integrator="explicit")
            a = _Stepper(cfg_i, g).advance(u0.copy(), np.zeros(g.shape))
            b = _Stepper(cfg_e, g).advance(u0.copy(), np.zeros(g.shape))
            errs.append(np.max(np.abs(a - b)))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)

    def test_split_consistency(self):
        # split and imex converge to each other at O(dt^2) per step
        g = build_grid(1, 1.0, 3)
        rng = np.random.default_rng(7)
        u0 = 0.5 * rng.standard_normal(g.shape)
        errs = []
        for dt in (2e-4, 1e-4):
            cfg_i = SimConfig(d=1, L=1.0, N=3, dt=dt, t_end=dt, integrator="imex")
            cfg_s = SimConfig(d=1, L=1.0, N=3, dt=dt, t_end=dt, integrator="split")
            a = _Stepper(cfg_i, g).advance(u0.copy(), np.zeros(g.shape))
            b = _Stepper(cfg_s, g).advance(u0.copy(), np.zeros(g.shape))
            errs.append(np.max(np.abs(a - b)))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)

    def test_determinism(self):
        cfg = SimConfig(d=1, L=1.0, N=4, dt=1e-2, t_end=0.3, seed=77)
        a = run_chain(cfg).final_state.field.values
        b = run_chain(cfg).final_state.field.values
        assert a.tobytes() == b.tobytes()

    def test_blow_up_reported(self):
        cfg = SimConfig(d=1, L=1.0, N=4, dt=0.5, t_end=5.0, seed=1)
        g = cfg.grid()
        huge = Field(g, np.full(g.shape, 1e6))
        with pytest.raises(BlowUpError) as err:
            run_chain(cfg, initial=huge)
        assert err.value.step_index >= 1

    def test_split_survives_huge_data(self):
        cfg = SimConfig(d=1, L=1.0, N=4, dt=1e-3, t_end=0.1, seed=1, integrator="split")
        g = cfg.grid()
        huge = Field(g, np.full(g.shape, 1e6))
        res = run_chain(cfg, initial=huge)
        assert np.all(np.isfinite(res.final_state.field.values))
        assert np.max(np.abs(res.final_state.field.values)) < 1e3

    def test_cfl_validation(self):
        with pytest.raises(ValueError):
            SimConfig(d=1, L=1.0, N=4, dt=1e-2, t_end=1.0, integrator="explicit")
        # dt below the bound is accepted
        SimConfig(d=1, L=1.0, N=4, dt=1e-3, t_end=1.0, integrator="explicit")


class TestSymmetries:
    def test_beta_zero_reduction_bytewise(self):
        common = dict(d=1, L=1.0, N=4, dt=1e-2, t_end=0.3, seed=5)
        r_phi = run_chain(SimConfig(beta=0.0, **common))
        r_psi = run_chain(SimConfig(beta=0.0, potential_n=3, **common))
        assert r_phi.final_state.field.values.tobytes() == r_psi.final_state.field.values.tobytes()
        assert np.array_equal(r_phi.pairing, r_psi.pairing)

    def test_odd_symmetry_negated_noise(self):
        cfg = SimConfig(d=1, L=1.0, N=4, dt=1e-2, t_end=1.0, seed=9)
        g = cfg.grid()
        st = _Stepper(cfg, g)
        stream = NoiseStream(9, g)
        rng = np.random.default_rng(2)
        u = rng.standard_normal(g.shape)
        v = -u.copy()
        for _ in range(30):
            eta = st.noise_scale * stream.standard_normals()
            u = st.advance(u, eta)
            v = st.advance(v, -eta)
        assert np.array_equal(u, -v)


class TestRunChain:
    def test_thinning_count(self):
        cfg = SimConfig(d=1, L=1.0, N=4, dt=1e-2, t_end=1.0, seed=3, burn_in=20, thinning=7)
        res = run_chain(cfg)
        assert len(res.pairing) == (100 - 20) // 7

    def test_resume_identical(self):
        cfg = SimConfig(d=1, L=1.0, N=4, dt=1e-2, t_end=1.0, seed=31, snapshot_every=50)
        full = run_chain(cfg)
        half_cfg = SimConfig(d=1, L=1.0, N=4, dt=1e-2, t_end=0.5, seed=31, snapshot_every=50)
        half = run_chain(half_cfg)
        snap_step, snap_field = half.snapshots[-1]
        stream = NoiseStream(31, cfg.grid())
        stream.counter = snap_step
        resumed = run_chain(
            cfg,
            resume_state=ChainState(field=snap_field.copy(), step=snap_step, stream=stream),
        )
        assert resumed.final_state.field.values.tobytes() == full.final_state.field.values.tobytes()

    def test_time_bookkeeping(self):
        cfg = SimConfig(d=1, L=1.0, N=4, dt=0.025, t_end=0.5, seed=4)
        res = run_chain(cfg)
        assert res.final_state.field.time == pytest.approx(0.5)
        assert res.final_state.check_time(cfg.dt)


class TestGaussianMode:
    def test_stationary_site_variance(self):
        cfg = SimConfig(d=1, L=1.0, N=4, dt=0.5, t_end=1.0, seed=10,
                        quadratic=True, integrator="exact_gaussian")
        batch = BatchChain(cfg, n_chains=512, stationary_start=True)
        samples = [batch.values.copy()]
        for _ in range(30):
            batch.advance(2)
            samples.append(batch.values.copy())
        pooled = np.concatenate(samples)
        c1 = compute_c1(cfg.grid(), cfg.m2)
        per_draw = pooled.reshape(len(samples), -1).mean(axis=1)
        se = np.std(pooled**2) / math.sqrt(pooled.size / 2.0)
        assert abs(np.mean(pooled**2) - c1) < 4.0 * se

    def test_batch_matches_single_chain(self):
        cfg = SimConfig(d=1, L=1.0, N=4, dt=1e-2, t_end=0.2, seed=12)
        single = run_chain(cfg)
        batch = BatchChain(cfg, n_chains=1)
        batch.advance(cfg.n_steps())
        assert np.allclose(batch.values[0], single.final_state.field.values, rtol=1e-12)

    def test_dt_robustness_of_stationary_moment(self):
        # stationary mean of the squared pairing moves < 5% under dt -> dt/2
        moments = []
        for dt, stream_id in ((0.02, 1), (0.01, 2)):
            cfg = SimConfig(d=1, L=1.0, N=4, dt=dt, t_end=1.0, seed=100, stream_id=stream_id)
            batch = BatchChain(cfg, n_chains=256)
            batch.advance(int(5.0 / dt))
            recs = batch.sample_pairings(400, max(1, int(0.1 / dt)))
            moments.append(np.mean(recs**2))
        assert abs(moments[1] / moments[0] - 1.0) < 0.05
