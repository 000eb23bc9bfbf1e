"""Amounts of world-substance over regions, flows through surfaces, pushforwards."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import worldflow as wf
from oracles import gaussian_mass


@pytest.fixture(scope="module")
def grid():
    # spacing 1/64 so unit-interval region edges land on lattice points;
    # the Riemann boundary error is then O(spacing^2), well under 1e-4
    return wf.make_grid([[-8.0, 8.0]], [1024])


@pytest.fixture(scope="module")
def gaussian_rho(grid):
    psi = wf.normalize(wf.make_state(grid, {"kind": "gaussian", "sigma": [1.0]}))
    return wf.density(psi)


class TestSubstantialAmount:
    def test_full_domain_is_total(self, grid, gaussian_rho):
        assert wf.substantial_amount(
            gaussian_rho, grid, wf.full_region(grid)
        ) == pytest.approx(1.0, abs=1e-12)

    def test_central_interval_matches_gaussian_cdf(self, grid, gaussian_rho):
        region = wf.Region(boxes=(((-1.0, 1.0),),), name="core")
        expected = gaussian_mass(-1.0, 1.0, 0.0, 1.0)
        assert expected == pytest.approx(0.6827, abs=1e-4)
        got = wf.substantial_amount(gaussian_rho, grid, region)
        assert got == pytest.approx(expected, abs=1e-4)

    def test_disjoint_union_adds_exactly(self, grid, gaussian_rho):
        a = wf.Region(boxes=(((-2.0, -1.0),),))
        b = wf.Region(boxes=(((1.0, 2.0),),))
        both = wf.Region(boxes=(((-2.0, -1.0),), ((1.0, 2.0),)))
        total = wf.substantial_amount(gaussian_rho, grid, both)
        parts = wf.substantial_amount(gaussian_rho, grid, a) + wf.substantial_amount(
            gaussian_rho, grid, b
        )
        # identical cell sets; only the float summation order may differ
        assert total == pytest.approx(parts, abs=1e-15)

    def test_overlapping_boxes_counted_once(self, grid, gaussian_rho):
        overlapping = wf.Region(boxes=(((-1.0, 0.5),), ((-0.5, 1.0),)))
        union = wf.Region(boxes=(((-1.0, 1.0),),))
        assert wf.substantial_amount(gaussian_rho, grid, overlapping) == pytest.approx(
            wf.substantial_amount(gaussian_rho, grid, union), abs=1e-15
        )

    def test_empty_interval_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            wf.Region(boxes=(((1.0, 1.0),),), name="nil")

    def test_region_outside_grid_named_in_error(self, grid):
        region = wf.Region(boxes=(((5.0, 15.0),),), name="runaway")
        with pytest.raises(ValueError, match="runaway"):
            region.validate_within(grid)


class TestWorldProbability:
    def test_full_domain_is_one(self, grid, gaussian_rho):
        assert wf.world_probability(gaussian_rho, grid, wf.full_region(grid)) == 1.0

    def test_symmetric_gaussian_right_half(self):
        # offset the lattice half a cell so no sample sits exactly on q = 0;
        # the two halves are then mirror images and split the mass evenly
        h = 16.0 / 1024
        g = wf.make_grid([[-8.0 + h / 2, 8.0 + h / 2]], [1024])
        rho = wf.density(wf.normalize(wf.make_state(g, {"kind": "gaussian", "sigma": [1.0]})))
        right = wf.Region(boxes=(((0.0, 8.0 + h / 2),),))
        assert wf.world_probability(rho, g, right) == pytest.approx(0.5, abs=1e-6)

    def test_probability_ignores_global_scale(self, grid, gaussian_rho):
        region = wf.Region(boxes=(((-1.0, 2.0),),))
        p1 = wf.world_probability(gaussian_rho, grid, region)
        p4 = wf.world_probability(4.0 * gaussian_rho, grid, region)
        assert abs(p1 - p4) < 1e-12

    @given(scale=st.floats(1e-3, 1e3), edge=st.floats(-3.0, 3.0))
    @settings(max_examples=25, deadline=None)
    def test_scale_invariance_property(self, grid, gaussian_rho, scale, edge):
        region = wf.Region(boxes=(((edge, edge + 1.0),),))
        base = wf.world_probability(gaussian_rho, grid, region)
        scaled = wf.world_probability(scale * gaussian_rho, grid, region)
        assert scaled == pytest.approx(base, abs=1e-12)

    def test_monotone_under_region_growth(self, grid, gaussian_rho):
        small = wf.Region(boxes=(((0.0, 1.0),),))
        large = wf.Region(boxes=(((0.0, 3.0),),))
        assert wf.world_probability(gaussian_rho, grid, small) <= wf.world_probability(
            gaussian_rho, grid, large
        )


class TestSubstantialFlow:
    def test_plane_wave_flux_value(self, free_params):
        g = wf.make_grid([[-4.0 * np.pi, 4.0 * np.pi]], [256])
        psi = wf.normalize(wf.make_state(g, {"kind": "plane_wave", "momentum": [2.0]}))
        j = wf.current(psi, free_params)
        surface = wf.Surface(axis=0, level=0.0, orientation=1)
        flux = wf.substantial_flow(j, g, surface)
        # rho = 1/L after normalization, v = hbar k / m = 2
        expected = 2.0 / (8.0 * np.pi)
        assert flux == pytest.approx(expected, rel=1e-9)
        assert flux > 0

    def test_orientation_flips_sign_exactly(self, free_params):
        g = wf.make_grid([[-4.0 * np.pi, 4.0 * np.pi]], [256])
        psi = wf.normalize(wf.make_state(g, {"kind": "plane_wave", "momentum": [2.0]}))
        j = wf.current(psi, free_params)
        plus = wf.substantial_flow(j, g, wf.Surface(axis=0, level=0.0, orientation=1))
        minus = wf.substantial_flow(j, g, wf.Surface(axis=0, level=0.0, orientation=-1))
        assert plus == -minus

    def test_gaussian_rate_matches_flux(self, free_store, free_params):
        # d/dt of the amount beyond q = 1 vs the flow through q = 1
        region = wf.Region(boxes=(((1.0, 10.0),),))
        surface = wf.Surface(axis=0, level=1.0, orientation=1)
        times, amounts, fluxes = [], [], []
        for i in range(len(free_store)):
            f = free_store.field_at(i)
            frame = wf.flow_frame(f, free_params)
            times.append(f.time)
            amounts.append(wf.substantial_amount(frame.rho, free_store.grid, region))
            fluxes.append(wf.substantial_flow(frame.current, free_store.grid, surface))
        times = np.asarray(times)
        amounts = np.asarray(amounts)
        mid = len(times) // 2
        rate = (amounts[mid + 1] - amounts[mid - 1]) / (times[mid + 1] - times[mid - 1])
        assert rate == pytest.approx(fluxes[mid], rel=0.02)


class TestPushforwardMeasure:
    def test_square_map_probabilities(self):
        # worlds uniform on [0,1] mapped through x^2: P([0,a]) = sqrt(a)
        rho = np.ones(400000)
        for a in (0.04, 0.25, 0.81):
            p = wf.pushforward_measure(rho, (0.0, 1.0), np.square, [(0.0, a)])
            assert p == pytest.approx(np.sqrt(a), abs=1e-6)

    def test_square_map_induced_density(self):
        rho = np.ones(400000)
        ys = np.array([0.09, 0.25, 0.64])
        dens = wf.induced_density(rho, (0.0, 1.0), np.square, ys)
        assert dens == pytest.approx(0.5 / np.sqrt(ys), abs=1e-3)
        assert dens[1] == pytest.approx(1.0, abs=1e-3)

    def test_identity_map_preserves_measure(self):
        rho = np.ones(100000)
        p = wf.pushforward_measure(rho, (0.0, 1.0), lambda x: x, [(0.2, 0.7)])
        assert p == pytest.approx(0.5, abs=1e-9)
