"""Wiring tests: config -> structure -> fit -> forecast artifacts."""

import dataclasses
import hashlib

import numpy as np
import pytest

from btvc.errors import ValidationError
from btvc.evaluation import BacktestPlan, backtest
from btvc.fourier import FourierSpec, fourier_design
from btvc.kernels import KnotGrid, kernel_matrix
from btvc.model import ModelDesign, predict
from btvc.pipeline import (
    backtest_plan_from,
    build_structure,
    forecast_dates,
    forecast_design,
    forecast_quantiles,
    forecaster_from_config,
    input_digest,
    load_frame,
    map_config_from,
    model_scale_arrays,
    predict_from_fit,
    read_future_csv,
    run_backtest,
    run_fit,
    run_manifest,
    svi_config_from,
    training_design,
    write_forecast_csv,
)
from btvc.runconfig import RunConfig
from btvc.timeframe import transform_regressors

from tests.test_timeframe import make_frame, write_csv

FAST = dict(map_iterations=60, map_restarts=1)


def small_cfg(**kw):
    values = dict(FAST, fourier="7:1", seed=2)
    values.update(kw)
    return dataclasses.replace(RunConfig(), **values)


def small_frame(T=60, P=2, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(1.0, 4.0, size=(T, P))
    y = np.exp(1.5 + 0.2 * x[:, 0] + rng.normal(0, 0.05, T))
    return make_frame(T=T, P=P, x=x, y=y)


class TestBuildStructure:
    def test_shapes_and_structure_keys(self):
        frame = small_frame()
        inputs, hp, structure = build_structure(frame, small_cfg())
        assert inputs.design.regressors.shape == (60, 2)
        assert inputs.design.seasonal.shape == (60, 2)  # one harmonic
        assert inputs.target.shape == (60,)
        assert structure["T"] == 60
        assert structure["step_days"] == 1
        assert structure["last_date"] == str(frame.timestamps[-1])
        assert structure["knots_lev"] == [30, 60]
        assert structure["knots_seas"] == [60]  # distance clamped to T
        assert structure["knots_reg"] == [30, 60]
        assert structure["fourier"] == [[7.0, 1]]
        assert structure["link"] == "log"
        assert structure["regressor_names"] == ["x1", "x2"]

    def test_auto_rho_is_half_the_knot_gap(self):
        frame = small_frame()
        _, _, structure = build_structure(frame, small_cfg(knot_distance_reg=20))
        assert structure["rho"] == 10.0

    def test_auto_rho_single_knot_falls_back_to_quarter_span(self):
        frame = small_frame()
        _, _, structure = build_structure(frame, small_cfg(knot_count_reg=1))
        assert structure["rho"] == 15.0

    def test_explicit_rho_wins(self):
        _, _, structure = build_structure(small_frame(), small_cfg(rho=4.5))
        assert structure["rho"] == 4.5

    def test_model_scale_arrays_log_vs_identity(self):
        frame = small_frame()
        target, x = model_scale_arrays(frame, small_cfg())
        np.testing.assert_allclose(target, np.log(frame.response))
        np.testing.assert_allclose(x, np.log1p(frame.regressors))
        target_i, x_i = model_scale_arrays(frame, small_cfg(link="identity"))
        np.testing.assert_array_equal(target_i, frame.response)
        np.testing.assert_array_equal(x_i, frame.regressors)

    def test_init_scale_defaults_to_ten_response_sds(self):
        frame = small_frame()
        target, _ = model_scale_arrays(frame, small_cfg())
        _, hp, _ = build_structure(frame, small_cfg())
        assert hp.init_scale_lev == pytest.approx(10.0 * float(np.std(target)))
        _, hp2, _ = build_structure(frame, small_cfg(init_scale_lev=3.0))
        assert hp2.init_scale_lev == 3.0


class TestConfigBridges:
    def test_map_config_fields(self):
        cfg = small_cfg(map_learning_rate=0.01, seed=9)
        mc = map_config_from(cfg)
        assert mc.learning_rate == 0.01
        assert mc.iterations == 60
        assert mc.restarts == 1
        assert mc.seed == 9

    def test_svi_config_fields(self):
        cfg = small_cfg(svi_iterations=123, svi_samples=4, seed=9)
        sc = svi_config_from(cfg)
        assert sc.iterations == 123
        assert sc.samples_per_step == 4
        assert sc.seed == 9

    def test_backtest_plan_stride_zero_means_horizon(self):
        plan = backtest_plan_from(small_cfg(backtest_stride=0))
        assert plan.stride is None
        assert backtest_plan_from(small_cfg(backtest_stride=3)).stride == 3


class TestSavedFitDesigns:
    def test_training_design_matches_original(self):
        frame = small_frame()
        cfg = small_cfg()
        inputs, _, structure = build_structure(frame, cfg)
        rebuilt = training_design(structure, frame, cfg)
        np.testing.assert_array_equal(rebuilt.regressors, inputs.design.regressors)
        np.testing.assert_array_equal(rebuilt.seasonal, inputs.design.seasonal)
        np.testing.assert_array_equal(rebuilt.k_reg.weights, inputs.design.k_reg.weights)
        np.testing.assert_array_equal(rebuilt.k_lev.weights, inputs.design.k_lev.weights)

    def test_training_design_rejects_mismatched_data(self):
        frame = small_frame()
        cfg = small_cfg()
        _, _, structure = build_structure(frame, cfg)
        with pytest.raises(ValidationError, match="59 rows but the fit was trained on 60"):
            training_design(structure, small_frame(T=59), cfg)
        renamed = dataclasses.replace(frame, regressor_names=("a", "b"))
        with pytest.raises(ValidationError, match="regressor columns do not match"):
            training_design(structure, renamed, cfg)

    def test_forecast_design_continues_the_training_rows(self):
        frame = small_frame()
        cfg = small_cfg()
        _, _, structure = build_structure(frame, cfg)
        h = 5
        T = structure["T"]
        future = np.full((h, 2), 2.5)
        fc = forecast_design(structure, future, h)
        specs = (FourierSpec(7.0, 1),)
        np.testing.assert_array_equal(
            fc.seasonal, fourier_design(T + h, specs).matrix[T:]
        )
        grid = KnotGrid(np.asarray(structure["knots_reg"]), T)
        full = kernel_matrix(grid, "gaussian", rho=structure["rho"], n_times=T + h)
        np.testing.assert_array_equal(fc.k_reg.weights, full.weights[T:])
        # log link: future regressors get the same zero policy as training
        np.testing.assert_allclose(fc.regressors, np.log1p(future))

    def test_forecast_design_validation(self):
        _, _, structure = build_structure(small_frame(), small_cfg())
        with pytest.raises(ValidationError, match="horizon must be >= 1"):
            forecast_design(structure, np.zeros((0, 2)), 0)
        with pytest.raises(ValidationError, match=r"shape \(3, 1\) does not match \(3, 2\)"):
            forecast_design(structure, np.zeros((3, 1)), 3)


class TestFitAndForecast:
    def test_predict_from_fit_equals_extended_design_predict(self):
        frame = small_frame()
        cfg = small_cfg()
        fit, inputs = run_fit(frame, cfg)
        h = 4
        future = np.full((h, 2), 3.0)
        quick = predict_from_fit(fit, future, h)

        structure = fit.structure
        T = structure["T"]
        specs = (FourierSpec(7.0, 1),)
        _, x_train = model_scale_arrays(frame, cfg)
        full = ModelDesign(
            regressors=np.vstack([x_train, transform_regressors(future, "shift1", None)]),
            seasonal=fourier_design(T + h, specs).matrix,
            k_lev=kernel_matrix(KnotGrid(structure["knots_lev"], T), "level", n_times=T + h),
            k_seas=kernel_matrix(KnotGrid(structure["knots_seas"], T), "level", n_times=T + h),
            k_reg=kernel_matrix(
                KnotGrid(structure["knots_reg"], T), "gaussian",
                rho=structure["rho"], n_times=T + h,
            ),
            regressor_names=frame.regressor_names,
        )
        manual = predict(fit.params, full, h, link="log")
        np.testing.assert_allclose(quick, manual, rtol=0, atol=1e-12)
        assert np.all(quick > 0)  # log link returns original scale

    def test_predict_from_fit_zero_horizon(self):
        fit, _ = run_fit(small_frame(), small_cfg())
        assert predict_from_fit(fit, np.zeros((0, 2)), 0).size == 0

    def test_forecast_quantiles_need_svi(self):
        fit, _ = run_fit(small_frame(), small_cfg())
        with pytest.raises(ValidationError, match="MAP-only"):
            forecast_quantiles(fit, np.zeros((2, 2)), 2, [0.5], n_draws=10)

    def test_forecast_quantiles_ordered(self):
        cfg = small_cfg(mode="svi", svi_iterations=80)
        fit, _ = run_fit(small_frame(), cfg)
        future = np.full((3, 2), 2.0)
        q = forecast_quantiles(fit, future, 3, [0.1, 0.5, 0.9], n_draws=64, seed=5)
        assert set(q) == {0.1, 0.5, 0.9}
        assert q[0.5].shape == (3,)
        assert np.all(q[0.1] <= q[0.5]) and np.all(q[0.5] <= q[0.9])

    def test_run_backtest_equals_manual_assembly(self):
        frame = small_frame(T=70)
        cfg = small_cfg(
            backtest_horizon=5, backtest_splits=2, backtest_min_train=40,
            map_iterations=40,
        )
        report = run_backtest(frame, cfg)
        manual = backtest(
            frame, forecaster_from_config(cfg), backtest_plan_from(cfg),
            root_seed=cfg.seed,
        )
        assert report.per_split == manual.per_split


class TestFilePlumbing:
    def test_load_frame_negative_regressors_follow_link(self, tmp_path):
        rows = [
            ["date", "y", "x1"],
            ["2024-01-01", "5.0", "-1.0"],
            ["2024-01-02", "6.0", "0.5"],
        ]
        path = tmp_path / "d.csv"
        write_csv(path, rows)
        frame = load_frame(str(path), small_cfg(link="identity"))
        assert frame.regressors[0, 0] == -1.0
        with pytest.raises(ValidationError):
            load_frame(str(path), small_cfg(link="log"))

    def future_structure(self):
        return {
            "regressor_names": ["x1", "x2"],
            "step_days": 1,
            "last_date": "2024-02-29",
        }

    def test_read_future_csv_happy_path(self, tmp_path):
        rows = [
            ["date", "x1", "x2"],
            ["2024-03-01", "1.0", "2.0"],
            ["2024-03-02", "3.0", "4.0"],
            ["2024-03-03", "5.0", "6.0"],
        ]
        path = tmp_path / "future.csv"
        write_csv(path, rows)
        x = read_future_csv(str(path), self.future_structure(), 2)
        np.testing.assert_array_equal(x, [[1.0, 2.0], [3.0, 4.0]])

    def test_read_future_csv_errors(self, tmp_path):
        path = tmp_path / "future.csv"
        write_csv(path, [["date", "x1"], ["2024-03-01", "1.0"]])
        with pytest.raises(ValidationError, match=r"missing columns: \['x2'\]"):
            read_future_csv(str(path), self.future_structure(), 1)

        write_csv(path, [["date", "x1", "x2"], ["2024-03-01", "1.0", "2.0"]])
        with pytest.raises(ValidationError, match="horizon 3 exceeds the 1 supplied"):
            read_future_csv(str(path), self.future_structure(), 3)

        rows = [
            ["date", "x1", "x2"],
            ["2024-03-01", "1.0", "2.0"],
            ["2024-03-04", "3.0", "4.0"],  # gap
        ]
        write_csv(path, rows)
        with pytest.raises(ValidationError, match="row 2 has date 2024-03-04, expected 2024-03-02"):
            read_future_csv(str(path), self.future_structure(), 2)

        write_csv(path, [["date", "x1", "x2"], ["2024-03-01", "1.0", "oops"]])
        with pytest.raises(ValidationError, match="unparsable value in column 'x2', future row 1"):
            read_future_csv(str(path), self.future_structure(), 1)

    def test_forecast_dates_continue_the_calendar(self):
        dates = forecast_dates({"step_days": 7, "last_date": "2024-01-01"}, 3)
        assert [str(d) for d in dates] == ["2024-01-08", "2024-01-15", "2024-01-22"]

    def test_write_forecast_csv(self, tmp_path):
        path = tmp_path / "fc.csv"
        point = np.array([1.5, 2.5])
        q = {0.025: np.array([1.0, 2.0]), 0.975: np.array([2.0, 3.0])}
        write_forecast_csv(str(path), {"step_days": 1, "last_date": "2024-02-29"}, point, q)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "date,forecast,q_0.025,q_0.975"
        assert lines[1] == "2024-03-01,1.5,1.0,2.0"
        assert lines[2] == "2024-03-02,2.5,2.0,3.0"

    def test_input_digest_is_sha256(self, tmp_path):
        path = tmp_path / "blob.csv"
        path.write_bytes(b"date,y\n2024-01-01,3\n")
        assert input_digest(str(path)) == hashlib.sha256(path.read_bytes()).hexdigest()

    def test_run_manifest_contents(self, tmp_path):
        path = tmp_path / "blob.csv"
        path.write_bytes(b"abc")
        cfg = small_cfg(seed=17)
        manifest = run_manifest(cfg, "fit", str(path))
        assert manifest["command"] == "fit"
        assert manifest["seed"] == 17
        assert manifest["config"]["map_iterations"] == 60
        assert manifest["input_sha256"] == hashlib.sha256(b"abc").hexdigest()
        assert set(manifest["versions"]) == {"package", "numpy", "python"}
        assert run_manifest(cfg, "simulate", None)["input_sha256"] is None
