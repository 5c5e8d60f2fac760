import csv
import subprocess
import sys

import numpy as np
import pytest

from truncdiff import cli
from truncdiff.config import ConfigError, load_config, parse_config
from truncdiff.network import AdapterDenoiser
from truncdiff.pgm import read_pgm, write_pgm
from truncdiff.schedule import make_linear_schedule

TARGET = """
[target]
weights = [0.5, 0.5]
means = [[-3.0, 0.0], [3.0, 0.0]]
variances = [[1.0, 1.0], [1.0, 1.0]]
"""

SMALL = """seed = 7
n_samples = 300
[schedule]
T = 100
[sweep]
T_trunc = [0, 20, 100]
n_steps = [1, 2]
""" + TARGET


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path, "seed = 1\n" + TARGET))
        assert cfg.schedule.T == 1000 and cfg.schedule.beta_end == 0.02
        assert cfg.coarse.kind == "biased" and cfg.n_samples == 5000
        assert cfg.timing is False and len(cfg.digest) == 12
        assert cfg.base_dir == tmp_path

    def test_unknown_key_named(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_config(write(tmp_path, "seed = 1\n" + TARGET + "\n[schedule]\nTT = 5\n"))
        assert info.value.key == "schedule.TT"

    def test_unknown_top_level(self, tmp_path):
        with pytest.raises(ConfigError, match="bogus"):
            load_config(write(tmp_path, "seed = 1\nbogus = 2\n" + TARGET))

    def test_parse_error_has_line_and_column(self, tmp_path):
        with pytest.raises(ConfigError, match=r"line 2, column"):
            load_config(write(tmp_path, "seed = 1\nT = = 3\n"))

    def test_missing_target(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "seed = 1\n"))
        assert load_config(write(tmp_path, "[schedule]\nT = 10\n"), require_target=False).schedule.T == 10

    def test_sweep_steps_bounded_by_truncation(self):
        raw = {"seed": 0, "sweep": {"T_trunc": [5], "n_steps": [10]}}
        with pytest.raises(ConfigError) as info:
            parse_config(raw, require_target=False)
        assert info.value.key == "sweep.n_steps"
        raw["sweep"]["sampler"] = "ddpm"
        parse_config(raw, require_target=False)

    def test_truncation_beyond_schedule(self):
        with pytest.raises(ConfigError):
            parse_config({"seed": 0, "schedule": {"T": 50}, "sweep": {"T_trunc": [60], "n_steps": [1]}},
                         require_target=False)

    def test_zero_truncation_cells_collapse(self, tmp_path):
        cfg = load_config(write(tmp_path, SMALL))
        assert cfg.sweep_cells() == [(0, 0), (0, 0), (20, 1), (20, 2), (100, 1), (100, 2)]

    @pytest.mark.parametrize("snippet", ["[coarse]\nkind = \"overdispersed\"\nscale = 0.5\n",
                                         "[coarse]\nkind = \"gan\"\n",
                                         "[train]\nlock_base = 1\n",
                                         "[denoiser]\nkind = \"checkpoint\"\n",
                                         "n_samples = 1\n"])
    def test_invalid_values(self, tmp_path, snippet):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "seed = 1\n" + snippet + TARGET))

    def test_bad_target(self, tmp_path):
        text = "seed = 1\n[target]\nweights = [0.5]\nmeans = [[0.0]]\nvariances = [[1.0]]\n"
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, text))


class TestCli:
    def test_schedule_dump(self, tmp_path, capsys):
        cfg = write(tmp_path, "[schedule]\nT = 5\n")
        out = tmp_path / "s.csv"
        assert cli.main(["schedule-dump", str(cfg), "-o", str(out)]) == 0
        rows = read_csv(out)
        assert rows[0] == ["t", "beta", "alpha", "alpha_bar", "sigma"]
        assert len(rows) == 6 and rows[1] == ["1", "0.0001", "0.9999", "0.9999", "0.0"]
        sched = make_linear_schedule(5)
        assert float(rows[-1][3]) == sched.alpha_bars[5]

    def test_truncate_experiment_is_byte_identical(self, tmp_path):
        cfg = write(tmp_path, SMALL)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(["truncate-experiment", str(cfg), "-o", str(a)]) == 0
        assert cli.main(["truncate-experiment", str(cfg), "-o", str(b), "--workers", "3"]) == 0
        assert a.read_bytes() == b.read_bytes()
        rows = read_csv(a)
        assert rows[0][:4] == ["experiment_id", "sampler", "T_trunc", "n_steps"]
        assert [r[1] for r in rows[1:]] == ["coarse", "coarse", "ddim", "ddim", "ddim", "ddim"]
        assert rows[1][5] == rows[2][5]
        assert all(r[-1] == "" for r in rows[1:])

    def test_truncate_experiment_changes_with_seed(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        cli.main(["truncate-experiment", str(write(tmp_path, SMALL)), "-o", str(a)])
        cli.main(["truncate-experiment", str(write(tmp_path, SMALL.replace("seed = 7", "seed = 8"), "c2.toml")),
                  "-o", str(b)])
        assert read_csv(a)[1][5] != read_csv(b)[1][5]

    def test_timing_column(self, tmp_path):
        out = tmp_path / "t.csv"
        cli.main(["truncate-experiment", str(write(tmp_path, "timing = true\n" + SMALL)), "-o", str(out)])
        assert all(float(r[-1]) >= 0 for r in read_csv(out)[1:])

    def test_failed_marker_row(self, tmp_path, monkeypatch):
        import truncdiff.experiment as experiment
        from truncdiff.exceptions import NumericError

        calls = []
        real = experiment.metric_report

        def flaky(*args, **kwargs):
            calls.append(1)
            if len(calls) == 3:
                raise NumericError("boom")
            return real(*args, **kwargs)

        monkeypatch.setattr(experiment, "metric_report", flaky)
        out = tmp_path / "f.csv"
        assert cli.main(["truncate-experiment", str(write(tmp_path, SMALL)), "-o", str(out)]) == 2
        rows = read_csv(out)
        assert rows[-1][0] == "FAILED" and "boom" in rows[-1][1]
        assert len(rows) == 4

    def test_missing_config_exit_code(self, tmp_path, capsys):
        assert cli.main(["sample", str(tmp_path / "none.toml")]) == 1
        assert "error" in capsys.readouterr().err

    def test_sample_truncated(self, tmp_path):
        cfg = write(tmp_path, SMALL + "\n[sample]\nT_trunc = 20\nn_steps = 2\n")
        out = tmp_path / "x.csv"
        assert cli.main(["sample", str(cfg), "-o", str(out)]) == 0
        rows = read_csv(out)
        assert rows[0] == ["x0", "x1"] and len(rows) == 301

    def test_sample_from_noise_ddpm(self, tmp_path):
        cfg = write(tmp_path, SMALL + "\n[sample]\nsampler = \"ddpm\"\n")
        out = tmp_path / "x.csv"
        assert cli.main(["sample", str(cfg), "-o", str(out)]) == 0
        X = np.array(read_csv(out)[1:], dtype=float)
        assert np.all(np.isfinite(X)) and X.shape == (300, 2)

    def test_train_then_sample_from_checkpoint(self, tmp_path):
        text = SMALL + "\n[train]\nsteps = 50\nbatch_size = 16\nhidden_sizes = [8]\ncheckpoint = \"net.npz\"\n"
        cfg = write(tmp_path, text)
        loss = tmp_path / "loss.csv"
        assert cli.main(["train", str(cfg), "-o", str(loss)]) == 0
        rows = read_csv(loss)
        assert rows[0] == ["step", "loss"] and len(rows) == 51
        assert AdapterDenoiser.load(tmp_path / "net.npz").schedule_.T == 100
        cfg2 = write(tmp_path, text + "\n[denoiser]\nkind = \"checkpoint\"\npath = \"net.npz\"\n", "c2.toml")
        assert cli.main(["sample", str(cfg2), "-o", str(tmp_path / "s.csv")]) == 0

    def test_gradcheck(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL + "\n[train]\nhidden_sizes = [8, 8]\n")
        assert cli.main(["gradcheck", str(cfg)]) == 0
        assert "PASS" in capsys.readouterr().out
        bad = write(tmp_path, SMALL + "\n[train]\nhidden_sizes = [8, 8]\n[gradcheck]\ntolerance = 1e-30\n", "b.toml")
        assert cli.main(["gradcheck", str(bad)]) == 2

    def test_blend(self, tmp_path):
        rng = np.random.default_rng(0)
        f = rng.integers(0, 256, (8, 8)) / 255
        mask = np.zeros((8, 8))
        mask[2:6, 2:6] = 1
        for name, img in (("f.pgm", f), ("h.pgm", f), ("m.pgm", mask)):
            write_pgm(tmp_path / name, img)
        out = tmp_path / "o.pgm"
        args = [str(tmp_path / n) for n in ("f.pgm", "h.pgm", "m.pgm")] + [str(out)]
        assert cli.main(["blend", *args]) == 0
        np.testing.assert_array_equal(read_pgm(out), f)
        assert cli.main(["blend", *args, "--solver", "dense", "--ascii"]) == 0
        assert out.read_bytes()[:2] == b"P2"

    def test_blend_solver_failure(self, tmp_path):
        rng = np.random.default_rng(1)
        for name in ("f.pgm", "h.pgm"):
            write_pgm(tmp_path / name, rng.random((12, 12)))
        mask = np.ones((12, 12))
        mask[0] = 0
        write_pgm(tmp_path / "m.pgm", mask)
        args = [str(tmp_path / n) for n in ("f.pgm", "h.pgm", "m.pgm", "o.pgm")]
        assert cli.main(["blend", *args, "--max-iter", "1"]) == 2

    def test_console_module_runs(self, tmp_path):
        cfg = write(tmp_path, "[schedule]\nT = 3\n")
        res = subprocess.run([sys.executable, "-m", "truncdiff.cli", "schedule-dump", str(cfg)],
                             capture_output=True, text=True, check=True)
        assert res.stdout.splitlines()[0] == "t,beta,alpha,alpha_bar,sigma"
