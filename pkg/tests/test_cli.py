import json

import pytest

from sgaskf import __version__
from sgaskf.cli import main

SMALL_TRACK = {
    "duration": 25,
    "mc_runs": 3,
    "seed": 7,
    "noise": {"kind": "gm", "shape": 100.0},
    "filters": [{"name": "kf"}, {"name": "kftncm"}, {"name": "rstkf"}, {"name": "rkf-sgas-gsis"}],
}


def read_csv(path):
    lines = path.read_text(encoding="utf-8").strip().split("\n")
    header = lines[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    return header, rows


class TestScaleSweep:
    def test_glq_value_matches_oracle(self, tmp_path):
        rc = main([
            "scale-sweep", "--alpha", "1.0", "--eta-grid", "10", "--m", "2",
            "--method", "glq", "--l", "30", "--out", str(tmp_path),
        ])
        assert rc == 0
        header, rows = read_csv(tmp_path / "scale_sweep.csv")
        assert header == ["alpha", "eta", "m", "method", "n_or_l", "value",
                          "method_used", "gs_terms", "wall_ns"]
        assert len(rows) == 1
        # at alpha = 1 the posterior is conjugate: E[y^-1] = (2m+2)/(2 eta + 1)
        assert float(rows[0]["value"]) == pytest.approx(6.0 / 21.0, rel=1e-3)
        assert rows[0]["method_used"] == "glq"

    def test_gsis_transitions_to_is_at_small_eta(self, tmp_path):
        rc = main([
            "scale-sweep", "--alpha", "1.85", "--eta-grid", "60,30,0.5,0.1",
            "--method", "gsis", "--n", "200", "--out", str(tmp_path),
        ])
        assert rc == 0
        _, rows = read_csv(tmp_path / "scale_sweep.csv")
        methods = [r["method_used"] for r in rows]
        assert methods[-1] == "is"
        assert "gs" in methods  # large eta converges through the series

    def test_missing_alpha_exits_2(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["scale-sweep", "--eta-grid", "1", "--method", "is", "--out", str(tmp_path)])
        assert exc.value.code == 2
        assert not (tmp_path / "scale_sweep.csv").exists()

    def test_bad_eta_grid_exits_2(self, tmp_path):
        rc = main([
            "scale-sweep", "--alpha", "1.0", "--eta-grid", "abc",
            "--method", "is", "--out", str(tmp_path),
        ])
        assert rc == 2

    def test_gs_divergence_row(self, tmp_path):
        rc = main([
            "scale-sweep", "--alpha", "1.85", "--eta-grid", "0.1",
            "--method", "gs", "--out", str(tmp_path),
        ])
        assert rc == 0
        _, rows = read_csv(tmp_path / "scale_sweep.csv")
        assert rows[0]["value"] == ""
        assert rows[0]["method_used"] == "diverged"


class TestTrack:
    def write_config(self, tmp_path, body=None):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps(body or SMALL_TRACK), encoding="utf-8")
        return cfg

    def test_outputs_and_schema(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["track", "--config", str(cfg), "--out", str(out), "--workers", "2"]) == 0
        header, rows = read_csv(out / "rmse_time.csv")
        assert header == ["step", "filter", "pos_rmse", "vel_rmse"]
        assert len(rows) == 25 * 4
        header, rows = read_csv(out / "summary.csv")
        assert header == ["filter", "shape_param", "pos_rmse", "vel_rmse", "avg_iters",
                          "avg_time_s", "fallback_ratio", "effective"]
        by_name = {r["filter"]: r for r in rows}
        assert by_name["kf"]["effective"] in ("true", "false")
        assert by_name["kf"]["avg_time_s"] == ""  # timing is opt-in
        assert by_name["rkf-sgas-gsis"]["fallback_ratio"] != ""
        assert by_name["rstkf"]["fallback_ratio"] == ""
        assert float(by_name["kf"]["shape_param"]) == 100.0

    def test_byte_identical_reruns(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["track", "--config", str(cfg), "--out", str(out1), "--workers", "2"]) == 0
        assert main(["track", "--config", str(cfg), "--out", str(out2), "--workers", "1"]) == 0
        for name in ("rmse_time.csv", "summary.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["track", "--config", str(cfg), "--out", str(out1), "--seed", "99"]) == 0
        assert main(["track", "--config", str(cfg), "--out", str(out2)]) == 0
        assert (out1 / "rmse_time.csv").read_bytes() != (out2 / "rmse_time.csv").read_bytes()

    def test_unknown_filter_exits_2(self, tmp_path, capsys):
        body = dict(SMALL_TRACK, filters=[{"name": "kalman-xl"}])
        cfg = self.write_config(tmp_path, body)
        assert main(["track", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "kalman-xl" in err and "rkf-sgas-gsis" in err

    def test_config_parse_error_reports_position(self, tmp_path, capsys):
        cfg = tmp_path / "broken.json"
        cfg.write_text('{"duration": 25,\n  bad\n}', encoding="utf-8")
        assert main(["track", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "line 2" in err and "column" in err

    def test_plots_do_not_change_csv(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out1, out2 = tmp_path / "plain", tmp_path / "plotted"
        assert main(["track", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["track", "--config", str(cfg), "--out", str(out2), "--plots"]) == 0
        assert (out2 / "rmse_pos_time.svg").exists()
        assert (out2 / "rmse_vel_time.svg").exists()
        for name in ("rmse_time.csv", "summary.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        assert not (out1 / "rmse_pos_time.svg").exists()

    def test_svg_bytes_reproducible(self, tmp_path):
        body = dict(SMALL_TRACK, mc_runs=2, duration=10, filters=[{"name": "kf"}])
        cfg = self.write_config(tmp_path, body)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["track", "--config", str(cfg), "--out", str(out1), "--plots"]) == 0
        assert main(["track", "--config", str(cfg), "--out", str(out2), "--plots"]) == 0
        assert (out1 / "rmse_pos_time.svg").read_bytes() == (out2 / "rmse_pos_time.svg").read_bytes()

    def test_paper_scale_flag(self, tmp_path):
        body = dict(SMALL_TRACK, mc_runs=1, duration=10,
                    filters=[{"name": "kf"}])
        cfg = self.write_config(tmp_path, body)
        out = tmp_path / "o"
        assert main(["track", "--config", str(cfg), "--out", str(out), "--paper-scale"]) == 0
        _, rows = read_csv(out / "rmse_time.csv")
        assert len(rows) == 300  # 300 steps once the paper protocol is active

    def test_timing_flag_fills_column(self, tmp_path):
        body = dict(SMALL_TRACK, mc_runs=1, duration=10, filters=[{"name": "rstkf"}])
        cfg = self.write_config(tmp_path, body)
        out = tmp_path / "o"
        assert main(["track", "--config", str(cfg), "--out", str(out), "--timing"]) == 0
        _, rows = read_csv(out / "summary.csv")
        assert float(rows[0]["avg_time_s"]) > 0.0


class TestStableCheck:
    def test_alpha_one_passes(self, capsys):
        assert main(["stable-check", "--alpha", "1.0", "--seed", "2"]) == 0
        out = capsys.readouterr().out
        assert "laplace" in out and "ks" in out

    def test_alpha_two_degenerate_note(self, capsys):
        assert main(["stable-check", "--alpha", "2.0"]) == 0
        assert "point mass" in capsys.readouterr().out

    def test_alpha_out_of_range_exits_2(self):
        assert main(["stable-check", "--alpha", "2.5"]) == 2


def test_version(capsys):
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__
