import numpy as np
import pytest

from sidelab.cli import RunConfig, dump_config, emit_plot_data, load_config, main, run
from sidelab.errors import ConfigError


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SCALAR_ANALYZE = """
[system]
kind = scalar
lambda = -4
mu = 1

[task]
name = analyze

[numeric]
dt_bar = {dt_bar}

[output]
dir = {out}
"""

SIMULATE = """
[system]
kind = scalar
lambda = -1
mu = 0.5

[task]
name = simulate

[numeric]
x0 = 1.0
dt = 0.5
t = 2.0
seed = {seed}
substeps = 4

[output]
dir = {out}
"""


class TestConfigParsing:
    def test_missing_key_names_it(self, tmp_path):
        cfg = write(
            tmp_path,
            "bad.ini",
            "[system]\nkind = scalar\nlambda = -1\n\n[task]\nname = simulate\n\n[numeric]\nt = 1.0\n",
        )
        with pytest.raises(ConfigError, match="'dt'"):
            load_config(cfg)

    def test_malformed_file(self, tmp_path):
        cfg = write(tmp_path, "bad.ini", "not an ini at all\n")
        with pytest.raises(ConfigError):
            load_config(cfg)

    def test_unknown_task(self, tmp_path):
        cfg = write(tmp_path, "bad.ini", "[system]\nkind = scalar\nlambda = -1\n\n[task]\nname = dance\n")
        with pytest.raises(ConfigError, match="dance"):
            load_config(cfg)

    def test_matrix_rows(self, tmp_path):
        cfg = write(
            tmp_path,
            "lin.ini",
            "[system]\nkind = linear\nf = -1 0 ; 0 -2\ng1 = 0.5 0 ; 0 0.5\n\n[task]\nname = analyze\n",
        )
        parsed = load_config(cfg)
        sde = parsed.system()
        assert np.allclose(sde.drift_matrix, [[-1.0, 0.0], [0.0, -2.0]])
        assert sde.noise_dim == 1

    def test_ragged_matrix_rejected(self, tmp_path):
        cfg = write(
            tmp_path,
            "lin.ini",
            "[system]\nkind = linear\nf = -1 0 ; 0\n\n[task]\nname = analyze\n",
        )
        with pytest.raises(ConfigError, match="'f'"):
            load_config(cfg)

    def test_round_trip(self, tmp_path):
        cfg_path = write(tmp_path, "sim.ini", SIMULATE.format(seed=3, out=tmp_path / "o"))
        cfg = load_config(cfg_path)
        dumped = tmp_path / "dumped.ini"
        dump_config(cfg, dumped)
        assert load_config(dumped) == cfg


class TestExitCodes:
    def test_analyze_feasible_is_zero(self, tmp_path, capsys):
        cfg = write(tmp_path, "a.ini", SCALAR_ANALYZE.format(dt_bar=0.4, out=tmp_path / "o"))
        assert main(["--config", cfg]) == 0
        assert (tmp_path / "o" / "certificate.txt").exists()

    def test_analyze_infeasible_is_one(self, tmp_path):
        cfg = write(tmp_path, "a.ini", SCALAR_ANALYZE.format(dt_bar=0.5, out=tmp_path / "o"))
        assert main(["--config", cfg]) == 1

    def test_bad_config_is_two(self, tmp_path, capsys):
        cfg = write(
            tmp_path,
            "bad.ini",
            "[system]\nkind = scalar\nlambda = -1\n\n[task]\nname = simulate\n\n[numeric]\nt = 1.0\n",
        )
        assert main(["--config", cfg]) == 2
        assert "dt" in capsys.readouterr().err

    def test_missing_file_is_two(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.ini")]) == 2

    def test_task_override(self, tmp_path):
        cfg = write(tmp_path, "a.ini", SCALAR_ANALYZE.format(dt_bar=0.4, out=tmp_path / "o"))
        assert main(["max-stepsize", "--config", cfg]) == 0
        report = (tmp_path / "o" / "report.txt").read_text()
        assert "max stepsize" in report and "0.4375" in report

    def test_cps_demo_stepsize_too_large_is_one(self, tmp_path):
        cfg = write(
            tmp_path,
            "d.ini",
            "[system]\nkind = controller\na = 1\nkp = 2\n\n[task]\nname = cps-demo\n\n"
            f"[numeric]\nx0 = 1\ndt = 0.8\nt = 5\n\n[output]\ndir = {tmp_path/'o'}\n",
        )
        assert main(["--config", cfg]) == 1

    def test_cps_demo_ok(self, tmp_path):
        cfg = write(
            tmp_path,
            "d.ini",
            "[system]\nkind = controller\na = 1\nkp = 2\n\n[task]\nname = cps-demo\n\n"
            f"[numeric]\nx0 = 1\ndt = 0.5\nt = 5\n\n[output]\ndir = {tmp_path/'o'}\n",
        )
        assert main(["--config", cfg]) == 0
        assert (tmp_path / "o" / "trajectory.csv").exists()


class TestArtifacts:
    def test_simulate_row_count(self, tmp_path):
        out = tmp_path / "o"
        cfg = write(tmp_path, "s.ini", SIMULATE.format(seed=1, out=out))
        assert main(["--config", cfg]) == 0
        lines = (out / "trajectory.csv").read_text().strip().splitlines()
        # header + N substeps + impulse doubles + initial row
        n_steps, n_impulses = 4 * 4, 4
        assert len(lines) == 1 + n_steps + n_impulses + 1
        assert lines[0] == "t,x_1,y_1,X_1,impulse_flag"

    def test_simulate_deterministic_bytes(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        cfg_a = write(tmp_path, "sa.ini", SIMULATE.format(seed=11, out=out_a))
        cfg_b = write(tmp_path, "sb.ini", SIMULATE.format(seed=11, out=out_b))
        assert main(["--config", cfg_a]) == 0
        assert main(["--config", cfg_b]) == 0
        assert (out_a / "trajectory.csv").read_bytes() == (out_b / "trajectory.csv").read_bytes()

    def test_converge_rows_match_levels(self, tmp_path):
        out = tmp_path / "o"
        cfg = write(
            tmp_path,
            "c.ini",
            "[system]\nkind = scalar\nlambda = -1\nmu = 0.5\n\n[task]\nname = converge\n\n"
            f"[numeric]\nx0 = 1\ndt = 0.0625\nt = 1.0\nlevels = 4\ntrajectories = 64\nseed = 2\n\n"
            f"[output]\ndir = {out}\n",
        )
        assert main(["--config", cfg]) == 0
        lines = (out / "errors.csv").read_text().strip().splitlines()
        assert lines[0] == "level,dt,error,stderr"
        assert len(lines) == 1 + 4

    def test_exponent_fit_has_window_rows(self, tmp_path):
        out = tmp_path / "o"
        cfg = write(
            tmp_path,
            "e.ini",
            "[system]\nkind = scalar\nlambda = -1\nmu = 0.5\n\n[task]\nname = exponent\n\n"
            f"[numeric]\nx0 = 1\ndt = 0.05\nt = 2.0\np = 2\ntrajectories = 200\nseed = 3\n\n"
            f"[output]\ndir = {out}\n",
        )
        assert main(["--config", cfg]) == 0
        lines = (out / "exponent_fit.csv").read_text().strip().splitlines()
        assert lines[0] == "t,log_mean_moment"
        assert len(lines) - 1 >= 10

    def test_run_api_overrides(self, tmp_path):
        out = tmp_path / "alt"
        cfg = write(tmp_path, "s.ini", SIMULATE.format(seed=1, out=tmp_path / "orig"))
        code = run(cfg, {"out": str(out), "seed": 5, "dump_config": True})
        assert code == 0
        assert (out / "config.ini").exists()
        reloaded = load_config(out / "config.ini")
        assert reloaded.seed == 5 and reloaded.outdir == str(out)


class TestEmitPlotData:
    def test_empty_series_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plot_data([], tmp_path)

    def test_writes_header_and_rows(self, tmp_path):
        paths = emit_plot_data([("s.csv", ["a", "b"], [[1.0, 2.0], [3.0, 4.0]])], tmp_path)
        text = paths[0].read_text().splitlines()
        assert text[0] == "a,b" and len(text) == 3
