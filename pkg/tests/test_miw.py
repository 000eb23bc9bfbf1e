"""Finite-K ensembles: sampling, second-order trajectories, KDE, frequencies."""

import numpy as np
import pytest

import worldflow as wf
from oracles import free_trajectory


@pytest.fixture(scope="module")
def gauss_grid():
    return wf.make_grid([[-8.0, 8.0]], [1024])


@pytest.fixture(scope="module")
def gauss_rho(gauss_grid):
    q = gauss_grid.axis_coords(0)
    rho = np.exp(-(q**2) / 2.0)
    return rho / wf.riemann_sum(rho, gauss_grid)


@pytest.fixture(scope="module")
def halves():
    return {
        "left": wf.Region(boxes=(((-8.0, 0.0),),), name="left"),
        "right": wf.Region(boxes=(((0.0, 8.0),),), name="right"),
    }


class TestSampleWorlds:
    def test_uniform_unit_interval(self):
        grid = wf.make_grid([[0.0, 1.0]], [64])
        pts = wf.sample_worlds(np.ones(64), grid, 4, seed=0)
        assert pts.shape == (4, 1)
        assert np.all((pts >= 0.0) & (pts <= 1.0))

    def test_gaussian_mean_within_clt_bound(self, gauss_grid, gauss_rho):
        pts = wf.sample_worlds(gauss_rho, gauss_grid, 10_000, seed=7)
        assert abs(float(pts.mean())) <= 4.0 / np.sqrt(10_000)

    def test_rejection_sampling_2d_means(self):
        grid = wf.make_grid([[-6.0, 6.0], [-6.0, 6.0]], [128, 128])
        xs, ys = grid.meshes()
        rho = np.exp(-(xs**2 + ys**2) / 2.0)
        pts = wf.sample_worlds(rho, grid, 4000, seed=11)
        assert pts.shape == (4000, 2)
        assert np.all(np.abs(pts.mean(axis=0)) <= 4.0 / np.sqrt(4000))

    def test_same_seed_is_deterministic(self, gauss_grid, gauss_rho):
        a = wf.sample_worlds(gauss_rho, gauss_grid, 256, seed=42)
        b = wf.sample_worlds(gauss_rho, gauss_grid, 256, seed=42)
        assert np.array_equal(a, b)

    def test_zero_mass_density_rejected(self, gauss_grid):
        with pytest.raises(ValueError, match="zero total mass"):
            wf.sample_worlds(np.zeros(1024), gauss_grid, 16, seed=0)

    def test_single_world_rejected(self, gauss_grid, gauss_rho):
        with pytest.raises(ValueError, match="K >= 2"):
            wf.sample_worlds(gauss_rho, gauss_grid, 1, seed=0)


class TestNewtonianTrajectories:
    def test_harmonic_ground_is_static(self):
        # V + Q is constant for the ground state, so the force vanishes
        grid = wf.make_grid([[-10.0, 10.0]], [512])
        params = wf.PhysicsParams(
            hbar=1.0, masses=(1.0,), potential=wf.Potential(kind="harmonic", omega=1.0)
        )
        psi0 = wf.make_state(grid, {"kind": "harmonic_eigenstate", "n": 0, "omega": 1.0})
        store = wf.evolve(psi0, params, dt_step=0.001, n_steps=1000, frame_stride=100)
        q0 = np.linspace(-2.0, 2.0, 9)[:, None]
        ens = wf.newtonian_trajectories(store, q0, dt_traj=0.005)
        assert float(np.nanmax(np.abs(ens.positions - q0[None, :, :]))) <= 1e-6

    def test_free_gaussian_matches_closed_form(self, free_store):
        q0 = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
        ens = wf.newtonian_trajectories(free_store, q0, dt_traj=0.01)
        worst = 0.0
        for i, t in enumerate(ens.times):
            ref = free_trajectory(q0[:, 0], float(t), sigma0=1.0)
            worst = max(worst, float(np.max(np.abs(ens.positions[i, :, 0] - ref))))
        assert worst <= 1e-3

    def test_plane_wave_moves_uniformly(self):
        grid = wf.make_grid([[-4 * np.pi, 4 * np.pi]], [256])
        params = wf.PhysicsParams(hbar=1.0, masses=(1.0,), potential=wf.Potential(kind="free"))
        psi = wf.make_state(grid, {"kind": "plane_wave", "momentum": [2.0]})
        store = wf.evolve(psi, params, dt_step=0.005, n_steps=100, frame_stride=10)
        q0 = np.linspace(-6.0, 6.0, 7)[:, None]
        ens = wf.newtonian_trajectories(store, q0, dt_traj=0.005)
        ref = q0[None, :, :] + 2.0 * np.asarray(ens.times)[:, None, None]
        assert float(np.max(np.abs(ens.positions - ref))) <= 1e-9
        # initial velocities come from the guiding field: exactly k/m here
        assert float(np.max(np.abs(ens.velocities[0] - 2.0))) <= 1e-8

    def test_initial_velocity_matches_guiding_field(self, free_store):
        # the packet starts real, so the first-order flow starts at rest
        ens = wf.newtonian_trajectories(free_store, np.array([[1.5]]), dt_traj=0.01)
        assert float(np.max(np.abs(ens.velocities[0]))) <= 1e-8

    def test_start_on_node_rejected(self):
        grid = wf.make_grid([[-10.0, 10.0]], [512])
        params = wf.PhysicsParams(
            hbar=1.0, masses=(1.0,), potential=wf.Potential(kind="harmonic", omega=1.0)
        )
        psi = wf.make_state(grid, {"kind": "harmonic_eigenstate", "n": 1, "omega": 1.0})
        store = wf.evolve(psi, params, dt_step=0.001, n_steps=10, frame_stride=10)
        with pytest.raises(ValueError, match="near-node"):
            wf.newtonian_trajectories(store, np.array([[0.0]]), dt_traj=0.001)


class TestEmpiricalDensity:
    def test_single_world_is_one_kernel_bump(self, gauss_grid):
        kde = wf.empirical_density(np.array([[0.3]]), gauss_grid, bandwidth=0.2)
        q = gauss_grid.axis_coords(0)
        assert abs(q[int(np.argmax(kde))] - 0.3) <= gauss_grid.spacing[0]
        assert wf.riemann_sum(kde, gauss_grid) == pytest.approx(1.0, abs=1e-9)

    def test_silverman_l1_at_ten_thousand(self, gauss_grid, gauss_rho):
        pts = wf.sample_worlds(gauss_rho, gauss_grid, 10_000, seed=3)
        kde = wf.empirical_density(pts, gauss_grid)
        l1 = wf.riemann_sum(np.abs(kde - gauss_rho), gauss_grid)
        assert l1 <= 0.05

    def test_l1_error_decreases_with_k(self, gauss_grid, gauss_rho):
        l1s = []
        for k in (100, 1000, 10_000):
            pts = wf.sample_worlds(gauss_rho, gauss_grid, k, seed=3)
            kde = wf.empirical_density(pts, gauss_grid)
            l1s.append(float(wf.riemann_sum(np.abs(kde - gauss_rho), gauss_grid)))
        assert l1s[0] > l1s[1] > l1s[2]
        # Monte Carlo regime before the bandwidth bias floor sets in
        early_slope = np.log(l1s[1] / l1s[0]) / np.log(10.0)
        assert early_slope == pytest.approx(-0.5, abs=0.2)

    def test_bandwidth_must_be_positive(self, gauss_grid):
        with pytest.raises(ValueError, match="bandwidth"):
            wf.empirical_density(np.array([[0.0], [1.0]]), gauss_grid, bandwidth=0.0)


class TestOutcomeFrequencies:
    def test_even_split_within_binomial_bound(self, gauss_grid, gauss_rho, halves):
        pts = wf.sample_worlds(gauss_rho, gauss_grid, 10_000, seed=5)
        freqs = wf.miw_outcome_frequencies(pts, halves)
        bound = 3.0 * np.sqrt(0.25 / 10_000)
        assert abs(freqs["left"] - 0.5) <= bound
        assert abs(freqs["right"] - 0.5) <= bound
        assert freqs["left"] + freqs["right"] == pytest.approx(1.0, abs=1e-12)

    def test_error_roughly_halves_from_k_to_4k(self, gauss_grid, gauss_rho, halves):
        # RMS over independent seeds; single draws are too noisy to compare
        errs = {2500: [], 10_000: []}
        for seed in range(24):
            for k, bump in ((2500, 0), (10_000, 1000)):
                pts = wf.sample_worlds(gauss_rho, gauss_grid, k, seed=seed + bump)
                errs[k].append(wf.miw_outcome_frequencies(pts, halves)["right"] - 0.5)
        ratio = np.sqrt(np.mean(np.square(errs[2500]))) / np.sqrt(np.mean(np.square(errs[10_000])))
        assert 1.4 <= ratio <= 2.6

    def test_two_worlds_quantize_fractions(self, gauss_grid, gauss_rho, halves):
        for seed in range(8):
            pts = wf.sample_worlds(gauss_rho, gauss_grid, 2, seed=seed)
            freqs = wf.miw_outcome_frequencies(pts, halves)
            assert freqs["left"] in (0.0, 0.5, 1.0)
            assert freqs["right"] in (0.0, 0.5, 1.0)

    def test_worlds_outside_all_regions_leave_residual(self, gauss_grid, gauss_rho):
        inner = {"core": wf.Region(boxes=(((-1.0, 1.0),),), name="core")}
        pts = wf.sample_worlds(gauss_rho, gauss_grid, 4096, seed=9)
        freqs = wf.miw_outcome_frequencies(pts, inner)
        assert 0.0 < freqs["core"] < 1.0


@pytest.fixture(scope="module")
def vortex_setup():
    grid = wf.make_grid([[-8.0, 8.0], [-8.0, 8.0]], [256, 256])
    psi = wf.make_state(grid, {"kind": "vortex", "sigma": 1.4, "charge": 1})
    params = wf.PhysicsParams(
        hbar=1.0, masses=(1.0, 1.0), potential=wf.Potential(kind="free")
    )
    return grid, psi, params


class TestQuantizationCheck:
    def test_ground_state_has_zero_circulation(self):
        grid = wf.make_grid([[-8.0, 8.0], [-8.0, 8.0]], [256, 256])
        s = 2**-0.5
        psi = wf.make_state(grid, {"kind": "gaussian", "center": [0.0, 0.0], "sigma": [s, s]})
        params = wf.PhysicsParams(
            hbar=1.0, masses=(1.0, 1.0), potential=wf.Potential(kind="harmonic", omega=1.0)
        )
        res = wf.quantization_check(psi, params, {"center": [0.0, 0.0], "radius": 2.0, "samples": 720})
        assert res.n == 0
        assert res.residual <= 1e-6

    def test_unit_vortex_circulates_one_quantum(self, vortex_setup):
        _, psi, params = vortex_setup
        res = wf.quantization_check(psi, params, {"center": [0.0, 0.0], "radius": 2.0, "samples": 720})
        assert res.n == 1
        assert res.residual <= 1e-3
        assert res.circulation == pytest.approx(2 * np.pi, abs=1e-3)

    def test_double_traversal_doubles_n(self, vortex_setup):
        _, psi, params = vortex_setup
        res = wf.quantization_check(
            psi, params, {"center": [0.0, 0.0], "radius": 2.0, "samples": 720, "winds": 2}
        )
        assert res.n == 2
        assert res.residual <= 2e-3

    def test_reparameterization_and_rescaling_invariance(self, vortex_setup):
        grid, psi, params = vortex_setup
        loop = {"center": [0.0, 0.0], "radius": 2.0, "samples": 720}
        base = wf.quantization_check(psi, params, loop)
        fine = wf.quantization_check(
            psi, params, {"center": [0.0, 0.0], "radius": 2.0, "samples": 1440}
        )
        scaled = wf.quantization_check(
            wf.WaveField(grid, 0.0, psi.amplitudes * 3.0), params, loop
        )
        assert fine.n == base.n == scaled.n
        assert abs(fine.circulation - base.circulation) <= 1e-3
        assert abs(scaled.circulation - base.circulation) <= 1e-12

    def test_loop_through_node_core_rejected(self, vortex_setup):
        _, psi, params = vortex_setup
        with pytest.raises(ValueError, match="node"):
            wf.quantization_check(
                psi, params, {"center": [0.0, 0.0], "radius": 0.05, "samples": 360}
            )
