import dataclasses

import numpy as np
import pytest
from scipy.integrate import simpson

from aeroinv.discretization import build_collocation_grid
from aeroinv.errors import NonPositiveIntensity, ZeroTruth
from aeroinv.simulation_study import (
    N_FINE,
    N_INTEGRATION,
    SizeDistribution,
    compute_extinction_from_intensities,
    eval_size_distribution,
    fine_grid,
    forward_extinctions,
    integration_grid,
    parameter_grid,
    reduced_config,
    relative_l2_error,
    run_study,
    simulate_measurement,
    study_wavelengths,
)


class TestWavelengths:
    def test_band_structure(self):
        wl = study_wavelengths()
        assert wl.size == 48
        assert wl[0] == 0.6 and wl[7] == 0.8
        assert wl[8] == 1.1 and wl[15] == 1.3
        assert wl[16] == 1.6 and wl[23] == 1.8
        assert wl[24] == 2.1 and wl[39] == 2.5
        assert wl[40] == 3.1 and wl[47] == 3.3

    def test_inverse_crime_guard(self):
        # the forward grid must differ from the inversion integration grid
        assert N_FINE != N_INTEGRATION
        f, i = fine_grid(), integration_grid()
        assert len(f) != len(i)
        interior = i.points[1:-1]
        assert not np.all(np.isin(interior, f.points))


class TestSizeDistributions:
    def test_hedrih_vanishes_at_origin(self):
        dist = SizeDistribution("hedrih", 1e4, (1.5,))
        assert eval_size_distribution(dist, 1e-8) < 1e-12

    def test_log_normal_mode(self):
        sigma, mu = 0.35, 1.9
        dist = SizeDistribution("log_normal", 1e4, (sigma, mu))
        r = np.linspace(0.01, 7.0, 200001)
        argmax = r[np.argmax(eval_size_distribution(dist, r))]
        expect = np.exp(np.log(mu) - sigma**2)
        assert abs(argmax - expect) <= (r[1] - r[0])

    def test_rrsb_mode(self):
        n_exp, nu = 5.0, 2.2
        dist = SizeDistribution("rrsb", 1e4, (n_exp, nu))
        r = np.linspace(0.01, 7.0, 200001)
        argmax = r[np.argmax(eval_size_distribution(dist, r))]
        expect = nu * ((n_exp - 1) / n_exp) ** (1 / n_exp)
        assert abs(argmax - expect) <= (r[1] - r[0])


class TestParameterGrids:
    @pytest.mark.parametrize("family", ["log_normal", "rrsb", "hedrih"])
    def test_cardinality_and_tail_bound(self, family):
        grid = parameter_grid(family)
        assert len(grid) == 100
        for dist in grid:
            assert eval_size_distribution(dist, 7.0) <= 10.0 + 1e-6

    def test_hedrih_eta_max(self):
        grid = parameter_grid("hedrih")
        assert grid[-1].params[0] == pytest.approx(2.0566, abs=1e-3)

    def test_modes_at_least_one_micron(self):
        for family in ("log_normal", "rrsb"):
            r = np.linspace(0.01, 7.0, 20001)
            for dist in parameter_grid(family)[:20]:
                argmax = r[np.argmax(eval_size_distribution(dist, r))]
                assert argmax >= 1.0 - 2 * (r[1] - r[0])


class TestForward:
    def test_zero_distribution(self):
        dist = SizeDistribution("hedrih", 1e-12, (1.5,))
        wl = np.array([0.6, 1.2])
        e = forward_extinctions(dist, lambda r, l: np.ones_like(r), wl)
        assert np.all(e < 1e-10)

    def test_unit_kernel_matches_finer_quadrature(self):
        dist = SizeDistribution("log_normal", 1e4, (0.3, 1.8))
        wl = np.array([0.6])
        e = forward_extinctions(dist, lambda r, l: np.ones_like(r), wl)
        fine = np.linspace(0.01, 7.0, 100001)
        oracle = simpson(eval_size_distribution(dist, fine), x=fine)
        assert e[0] == pytest.approx(oracle, rel=1e-8)

    def test_linearity(self):
        wl = np.array([0.8, 2.2])
        k = lambda r, l: (1 + r) / l
        d1 = SizeDistribution("hedrih", 1e4, (1.4,))
        d2 = SizeDistribution("hedrih", 2e4, (1.4,))
        assert forward_extinctions(d2, k, wl) == pytest.approx(
            2.0 * forward_extinctions(d1, k, wl)
        )


class TestSimulateMeasurement:
    def test_zero_noise(self):
        wl = np.array([0.6, 1.2, 2.2])
        e = np.array([10.0, 20.0, 30.0])
        meas = simulate_measurement(wl, e, 0.0, repeats=300, rng=0)
        assert np.array_equal(meas.mean_extinction, e)
        assert np.all(meas.variance == 1e-30)  # floored

    def test_sample_mean_clt_bound(self):
        wl = study_wavelengths()
        e = np.full(48, 100.0)
        meas = simulate_measurement(wl, e, 0.30, repeats=300, rng=1)
        assert np.all(np.abs(meas.mean_extinction - e) <= 4 * 30.0 / np.sqrt(300))

    def test_sample_variance_chi2_band(self):
        # chi^2(299) quantile oracle: sample variance / sigma^2 in [0.7, 1.4]
        wl = study_wavelengths()
        e = np.full(48, 50.0)
        meas = simulate_measurement(wl, e, 0.30, repeats=300, rng=2)
        ratio = meas.variance / (0.30 * 50.0) ** 2
        assert np.all(ratio >= 0.7) and np.all(ratio <= 1.4)


class TestIntensityExtinction:
    def test_no_attenuation(self):
        e = compute_extinction_from_intensities(
            np.array([5.0]), np.array([5.0]), 0.0, 0.0, 800.0, 400.0
        )
        assert e[0] == 0.0

    def test_unit_computation(self):
        # one e-folding over a 400 mm gap
        e = compute_extinction_from_intensities(
            np.array([np.exp(-1.0)]), np.array([1.0]), 0.0, 0.0, 800.0, 400.0
        )
        assert e[0] == pytest.approx(2.5e-3)

    def test_floated_section_cancels(self):
        i_long, i_short = np.array([2.0]), np.array([3.0])
        base = compute_extinction_from_intensities(
            i_long, i_short, 0.1, 0.2, 800.0, 400.0, x_floated=0.0
        )
        moved = compute_extinction_from_intensities(
            i_long, i_short, 0.1, 0.2, 800.0, 400.0, x_floated=55.0
        )
        assert base[0] == moved[0]

    def test_nonpositive_intensity(self):
        with pytest.raises(NonPositiveIntensity):
            compute_extinction_from_intensities(
                np.array([1.0]), np.array([2.0]), 1.5, 0.0, 800.0, 400.0
            )


class TestRelativeError:
    def test_zero_reconstruction_is_hundred_percent(self):
        dist = SizeDistribution("log_normal", 1e4, (0.3, 1.8))
        grid = build_collocation_grid(10, integration_grid())
        err = relative_l2_error(np.zeros(8), grid, dist)
        assert err == pytest.approx(100.0)

    def test_scaled_reconstruction(self):
        # weights representing the truth well, scaled by 1.1 -> ~10% error
        dist = SizeDistribution("hedrih", 1e4, (1.5,))
        igrid = integration_grid()
        grid = build_collocation_grid(300, igrid)
        w = eval_size_distribution(dist, grid.points[1:-1])
        base = relative_l2_error(w, grid, dist)
        assert base <= 0.5
        err = relative_l2_error(1.1 * w, grid, dist)
        assert err == pytest.approx(10.0, abs=0.5)

    def test_zero_truth_raises(self):
        dist = SizeDistribution("log_normal", 1e4, (0.05, 500.0))
        grid = build_collocation_grid(6, integration_grid())
        with pytest.raises(ZeroTruth):
            relative_l2_error(np.ones(4), grid, dist)


class TestStudyHarness:
    def tiny_config(self):
        return reduced_config(
            families=("log_normal",),
            methods=("constrained",),
            parameter_indices=(44,),
            repeats_per_parameter=1,
            mc_samples=2000,
        )

    def test_smoke_run(self):
        report = run_study(self.tiny_config())
        assert len(report.records) == 1
        rec = report.records[0]
        assert rec.status == "success"
        assert rec.l2_error < 100.0
        stats = report.method_stats[("log_normal", "constrained", "tikhonov")]
        assert stats.l2_failures == 0
        assert stats.runs == 1

    def test_determinism(self):
        strip = lambda rec: dataclasses.replace(rec, runtime=0.0)
        a = run_study(self.tiny_config())
        b = run_study(self.tiny_config())
        assert [strip(r) for r in a.records] == [strip(r) for r in b.records]

    def test_run_labels_exhaustive(self):
        report = run_study(self.tiny_config())
        valid = {"success", "l2_failure", "fraction_failure", "no_model_failure"}
        assert {r.status for r in report.records} <= valid
