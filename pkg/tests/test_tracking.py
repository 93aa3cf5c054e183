import numpy as np
import pytest

from sgaskf.filters import EstimatorSpec, VbConfig
from sgaskf.noise import NoiseFamily, sample_measurement_noise, true_covariance
from sgaskf.tracking import (
    GM_U_GRID,
    SGAS_ALPHA_GRID,
    ST_DOF_GRID,
    FilterSetup,
    MonteCarloReport,
    FilterReport,
    RunResult,
    ScenarioConfig,
    constant_velocity_model,
    effectiveness,
    run_lost,
    run_monte_carlo,
    simulate_track,
)

RBAR = 10.0 * np.eye(2)


def make_result(pos_sq, failed=False, nonfinite=False, steps=None):
    pos = np.asarray(pos_sq, dtype=float)
    t = len(pos)
    return RunResult(
        pos_sq_err=pos,
        vel_sq_err=np.zeros(t),
        steps_completed=steps if steps is not None else t,
        step_failed=failed,
        nonfinite=nonfinite,
        wall_time=0.0,
        iterations=np.zeros(t),
        fallback_iters=np.zeros(t),
    )


class TestNoiseFamilies:
    def test_gm_unit_scale_collapses_to_gaussian(self):
        gm = NoiseFamily(kind="gaussian_mixture", scale_matrix=RBAR, outlier_scale=1.0)
        rng = np.random.default_rng(3)
        draws = sample_measurement_noise(gm, rng, size=1000)
        replay = np.random.default_rng(3)
        core = replay.standard_normal((1000, 2)) @ np.linalg.cholesky(RBAR).T
        assert np.allclose(draws, core)

    def test_sgas_alpha_two_is_exact_gaussian(self):
        fam = NoiseFamily(kind="sgas", scale_matrix=RBAR, shape=2.0)
        rng = np.random.default_rng(4)
        draws = sample_measurement_noise(fam, rng, size=500)
        replay = np.random.default_rng(4)
        core = replay.standard_normal((500, 2)) @ np.linalg.cholesky(RBAR).T
        assert np.allclose(draws, core)

    def test_gm_second_moment(self):
        gm = NoiseFamily(kind="gaussian_mixture", scale_matrix=RBAR, outlier_scale=100.0)
        rng = np.random.default_rng(11)
        draws = sample_measurement_noise(gm, rng, size=10**6)
        cov = draws.T @ draws / len(draws)
        assert np.allclose(cov, 109.0 * np.eye(2), rtol=0.02, atol=0.5)

    @pytest.mark.parametrize(
        "kind,shape,expected_factor",
        [("student_t", 6.0, 6.0 / 4.0), ("slash", 5.0, 5.0 / 3.0), ("variance_gamma", 4.0, 1.0)],
    )
    def test_gsm_second_moments(self, kind, shape, expected_factor):
        fam = NoiseFamily(kind=kind, scale_matrix=RBAR, shape=shape)
        rng = np.random.default_rng(int(shape))
        draws = sample_measurement_noise(fam, rng, size=10**6)
        cov = draws.T @ draws / len(draws)
        assert np.allclose(cov, expected_factor * RBAR, rtol=0.02, atol=0.5)
        assert np.allclose(true_covariance(fam), expected_factor * RBAR)

    def test_true_covariance_existence(self):
        assert true_covariance(NoiseFamily(kind="sgas", scale_matrix=RBAR, shape=0.5)) is None
        assert true_covariance(NoiseFamily(kind="student_t", scale_matrix=RBAR, shape=2.0)) is None
        assert np.allclose(
            true_covariance(NoiseFamily(kind="sgas", scale_matrix=RBAR, shape=2.0)), RBAR
        )
        gm = NoiseFamily(kind="gaussian_mixture", scale_matrix=RBAR, outlier_scale=100.0)
        assert np.allclose(true_covariance(gm), 109.0 * np.eye(2))

    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseFamily(kind="unknown", scale_matrix=RBAR)
        with pytest.raises(ValueError):
            NoiseFamily(kind="sgas", scale_matrix=RBAR, shape=2.5)
        with pytest.raises(ValueError):
            NoiseFamily(kind="gaussian_mixture", scale_matrix=RBAR, outlier_scale=0.5)
        with pytest.raises(ValueError):
            NoiseFamily(kind="student_t", scale_matrix=np.array([[1.0, 2.0], [0.0, 1.0]]), shape=3.0)


class TestModelAndTrack:
    def test_process_noise_blocks(self):
        model = constant_velocity_model(1.0, 0.1)
        third, half = 1.0 / 3.0, 0.5
        expected = 0.1 * np.array(
            [
                [third, 0.0, half, 0.0],
                [0.0, third, 0.0, half],
                [half, 0.0, 1.0, 0.0],
                [0.0, half, 0.0, 1.0],
            ]
        )
        assert np.allclose(model.q, expected)
        assert np.allclose(model.f[:2, 2:], np.eye(2))
        assert np.allclose(model.h, np.block([np.eye(2), np.zeros((2, 2))]))

    def test_noiseless_kinematics(self):
        tiny = NoiseFamily(kind="gaussian_mixture", scale_matrix=1e-30 * np.eye(2),
                           outlier_scale=1.0)
        cfg = ScenarioConfig(
            noise=tiny,
            filters=(FilterSetup(name="kf", kind="kf"),),
            duration=5,
            q_factor=0.0,
            p0=np.zeros((4, 4)),
            mc_runs=1,
            master_seed=0,
        )
        states, zs = simulate_track(cfg, 0)
        for k in range(5):
            assert np.allclose(states[k, :2], [10.0 * (k + 1), 10.0 * (k + 1)])
            assert np.allclose(zs[k], states[k, :2], atol=1e-13)

    def test_deterministic_per_run_streams(self):
        noise = NoiseFamily(kind="sgas", scale_matrix=RBAR, shape=0.9)
        cfg = ScenarioConfig(
            noise=noise, filters=(FilterSetup(name="kf", kind="kf"),), duration=30,
            mc_runs=2, master_seed=123,
        )
        s1, z1 = simulate_track(cfg, 1)
        s2, z2 = simulate_track(cfg, 1)
        assert np.array_equal(s1, s2) and np.array_equal(z1, z2)
        s3, _ = simulate_track(cfg, 0)
        assert not np.allclose(s1, s3)


class TestAggregation:
    def test_rmse_formula_fixture(self):
        cfg = ScenarioConfig(
            noise=NoiseFamily(kind="gaussian", scale_matrix=RBAR),
            filters=(FilterSetup(name="kf", kind="kf"),),
            duration=1,
            mc_runs=2,
        )
        report = MonteCarloReport(
            cfg=cfg,
            filters={"kf": FilterReport(name="kf", applicable=True,
                                        results=[make_result([9.0]), make_result([16.0])])},
        )
        pos, _ = report.step_rmse("kf")
        assert pos[0] == pytest.approx(np.sqrt(12.5), rel=1e-12)

    def test_single_run_kf_rmse_matches_reference(self):
        noise = NoiseFamily(kind="gaussian", scale_matrix=RBAR)
        cfg = ScenarioConfig(
            noise=noise, filters=(FilterSetup(name="kf", kind="kf"),), duration=30,
            mc_runs=1, master_seed=7,
        )
        report = run_monte_carlo(cfg, workers=1)
        states, zs = simulate_track(cfg, 0)
        model = cfg.model()
        x, p = cfg.x0.copy(), cfg.p0.copy()
        expected = []
        for k in range(cfg.duration):
            x_pred = model.f @ x
            p_pred = model.f @ p @ model.f.T + model.q
            s = model.h @ p_pred @ model.h.T + RBAR
            gain = p_pred @ model.h.T @ np.linalg.inv(s)
            x = x_pred + gain @ (zs[k] - model.h @ x_pred)
            p = (np.eye(4) - gain @ model.h) @ p_pred
            expected.append(np.sum((x[:2] - states[k, :2]) ** 2))
        pos, _ = report.step_rmse("kf")
        assert np.allclose(pos, np.sqrt(expected), rtol=1e-9)

    def test_order_and_worker_invariance(self):
        noise = NoiseFamily(kind="student_t", scale_matrix=RBAR, shape=3.0)
        flt = FilterSetup(
            name="rstkf", kind="vb",
            family=noise,
            vb=VbConfig(estimator=EstimatorSpec(kind="closed_form")),
        )
        cfg = ScenarioConfig(noise=noise, filters=(flt,), duration=15, mc_runs=4, master_seed=5)
        seq = run_monte_carlo(cfg, workers=1)
        par = run_monte_carlo(cfg, workers=4)
        for a, b in zip(seq.filters["rstkf"].results, par.filters["rstkf"].results):
            assert np.allclose(a.pos_sq_err, b.pos_sq_err, equal_nan=True)
        assert seq.summary("rstkf")["pos_rmse"] == par.summary("rstkf")["pos_rmse"]

    def test_paper_sweep_grids(self):
        assert SGAS_ALPHA_GRID == (0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 1.85)
        assert ST_DOF_GRID == (0.3, 0.5, 0.7, 0.9, 1.2, 1.7, 2.5, 3.5, 6.0)
        assert GM_U_GRID == (5.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8)

    def test_worker_count_env_cap(self, monkeypatch):
        from sgaskf.tracking import _worker_count

        monkeypatch.setenv("RKF_THREADS", "3")
        assert _worker_count() == 3
        monkeypatch.delenv("RKF_THREADS")
        assert _worker_count() >= 1

    def test_kftncm_not_applicable_under_stable_noise(self):
        noise = NoiseFamily(kind="sgas", scale_matrix=RBAR, shape=0.5)
        cfg = ScenarioConfig(
            noise=noise,
            filters=(FilterSetup(name="kftncm", kind="kftncm"),),
            duration=5,
            mc_runs=1,
        )
        report = run_monte_carlo(cfg, workers=1)
        assert not report.filters["kftncm"].applicable
        assert report.summary("kftncm") == {"name": "kftncm", "applicable": False}


class TestEffectiveness:
    def test_all_good(self):
        results = [make_result(np.ones(30)) for _ in range(10)]
        assert effectiveness(results)

    def test_boundary_fraction(self):
        results = [make_result(np.ones(30)) for _ in range(19)]
        results.append(make_result(np.ones(30), nonfinite=True))
        assert effectiveness(results, min_fraction=0.95)  # 19/20 passes the >= test
        results.append(make_result(np.ones(30), nonfinite=True))
        assert not effectiveness(results, min_fraction=0.95)  # 19/21 fails

    def test_threshold_after_warmup_only(self):
        err = np.ones(30)
        err[5] = 1e7  # inside the warm-up window
        assert not run_lost(make_result(err), loss_threshold=500.0, warmup=10)
        err2 = np.ones(30)
        err2[20] = 600.0**2
        assert run_lost(make_result(err2), loss_threshold=500.0, warmup=10)

    def test_step_failure_is_lost(self):
        assert run_lost(make_result(np.ones(5), failed=True), 500.0)

    def test_kf_loses_more_than_gsis_under_extreme_outliers(self):
        body = {
            "noise": {"kind": "gm", "shape": 1e8},
            "duration": 60,
            "mc_runs": 8,
            "seed": 19,
        }
        from sgaskf.cli import scenario_from_dict

        body["filters"] = [{"name": "kf"}, {"name": "rkf-sgas-gsis"}]
        cfg = scenario_from_dict(body)
        report = run_monte_carlo(cfg, workers=4)
        kf_lost = report.summary("kf")["lost_runs"]
        gsis_lost = report.summary("rkf-sgas-gsis")["lost_runs"]
        assert kf_lost > gsis_lost
