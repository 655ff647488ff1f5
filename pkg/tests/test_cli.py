import io
import pytest

from fracalign import __version__
from fracalign.cli import ConfigError, RunConfig, main, parse_config, run, write_atomic

MINIMAL = """
scenario:
  num_users: 3
  antennas: 4
  streams: [2, 2, 2]
  noise_variance: 0.1
scheme:
  name: ia
sweep:
  snr_db: [0, 10]
  channel_realizations: 2
  symbols_per_realization: 50
seed: 5
"""

FIA_M3 = """
scenario: {num_users: 3, antennas: 3, streams: [2, 2, 2]}
scheme: {name: fia-mimo, columns: 2}
"""


def _run(text, sub, **over):
    cfg = parse_config(text)
    fields = {f: getattr(cfg, f) for f in RunConfig.__dataclass_fields__}
    fields.update(subcommand=sub, **over)
    out, err = io.StringIO(), io.StringIO()
    return run(RunConfig(**fields), out, err), out.getvalue(), err.getvalue()


class TestParse:
    def test_minimal(self):
        cfg = parse_config(MINIMAL)
        assert cfg.scenario.num_users == 3
        assert cfg.scenario.streams == (2, 2, 2)
        assert cfg.schemes[0].name == "ia"
        assert cfg.sweep.snr_db == (0.0, 10.0)
        assert cfg.seed == 5

    def test_too_many_streams_names_user(self):
        with pytest.raises(ConfigError, match=r"scenario\.streams\[1\].*user 1"):
            parse_config(MINIMAL.replace("[2, 2, 2]", "[2, 5, 2]"))

    def test_negative_noise(self):
        with pytest.raises(ConfigError, match="noise_variance"):
            parse_config(MINIMAL.replace("0.1", "-0.1"))

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"scheme\.colour"):
            parse_config(MINIMAL.replace("name: ia", "name: ia\n  colour: red"))

    def test_nested_optimizer_error(self):
        text = MINIMAL.replace("name: ia", "name: eia-optimized\n  optimizer: {shrink: 2.0}")
        with pytest.raises(ConfigError, match=r"scheme\.optimizer"):
            parse_config(text)

    def test_scheme_list(self):
        text = MINIMAL.replace("scheme:\n  name: ia", "scheme:\n  - {name: ia}\n  - {name: min-mse-baseline}")
        assert [s.name for s in parse_config(text).schemes] == ["ia", "min-mse-baseline"]

    def test_malformed(self):
        with pytest.raises(ConfigError, match="malformed"):
            parse_config("scenario: [1, 2")

    def test_hash_tracks_content(self):
        a, b = parse_config(MINIMAL), parse_config(MINIMAL.replace("0.1", "0.2"))
        assert a.config_hash() == parse_config(MINIMAL).config_hash()
        assert a.config_hash() != b.config_hash()


class TestRun:
    def test_check_fia(self):
        code, out, _ = _run(FIA_M3, "check")
        assert code == 0
        assert out.splitlines() == ["fia-mimo 0 2 3 true", "fia-mimo 1 2 3 true", "fia-mimo 2 2 3 true"]

    def test_gradcheck(self, tmp_path):
        path = tmp_path / "grad.csv"
        code, out, _ = _run(MINIMAL, "gradcheck", out=str(path))
        assert code == 0
        assert "ok" in out.splitlines()[-1]
        text = path.read_text()
        assert text.startswith(f"# fracalign version={__version__}\n# seed=5\n# config_hash=")

    def test_sweep_unwritable(self, tmp_path):
        target = tmp_path / "taken"
        target.mkdir()
        code, _, err = _run(MINIMAL, "sweep", out=str(target))
        assert code == 1
        assert "is a directory" in err

    def test_sweep_missing_directory(self, tmp_path):
        code, _, err = _run(MINIMAL, "sweep", out=str(tmp_path / "nope" / "x.csv"))
        assert code == 1
        assert "does not exist" in err

    def test_sweep_csv(self, tmp_path):
        path = tmp_path / "sweep.csv"
        code, _, _ = _run(MINIMAL, "sweep", out=str(path))
        assert code == 0
        lines = path.read_text().splitlines()
        assert lines[1] == "# seed=5"
        assert lines[4].startswith("scheme,receiver,snr_db,trials")
        assert len(lines) == 7

    def test_design_and_optimize(self, tmp_path):
        code, out, _ = _run(MINIMAL, "design")
        assert code == 0 and "streams=(2, 2, 2)" in out
        text = MINIMAL.replace("name: ia", "name: eia-optimized\n  optimizer: {max_iters: 5}")
        path = tmp_path / "trace.csv"
        code, _, _ = _run(text, "optimize", out=str(path))
        assert code == 0
        assert path.read_text().splitlines()[4] == "iter,C,grad_norm"

    def test_conditioning_exit_code(self):
        text = FIA_M3.replace("antennas: 3", "antennas: 3, interference_gain: 0.0")
        code, _, err = _run(text, "check")
        assert code == 2
        assert "conditioning" in err


class TestMain:
    def test_seed_override_and_bad_seed(self, tmp_path, capsys):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(FIA_M3)
        assert main(["check", "--config", str(cfg), "--seed", "17"]) == 0
        assert main(["check", "--config", str(cfg), "--seed", str(2 ** 64)]) == 1
        assert "--seed" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["check", "--config", str(tmp_path / "none.yaml")]) == 1

    def test_threads(self, tmp_path):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(MINIMAL)
        out = tmp_path / "s.csv"
        assert main(["sweep", "--config", str(cfg), "--threads", "2", "--out", str(out)]) == 0
        assert out.exists()


def test_write_atomic_replaces(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("old")
    write_atomic(str(path), "new")
    assert path.read_text() == "new"
    assert [p.name for p in tmp_path.iterdir()] == ["a.csv"]
