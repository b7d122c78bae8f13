import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from implicit_shape.cli import build_problem, main
from implicit_shape.config import ConfigError, RunConfig, example_config

SMALL = ["mesh = structured 20 20", "max_iter = 3"]


def write_config(tmp_path, lines, name="run.cfg"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


class TestConfig:
    def test_defaults_match_example_1a(self):
        cfg = RunConfig()
        assert cfg.mesh == "structured 80 80"
        assert cfg.epsilon == 1e-4 and cfg.tol == 1e-6 and cfg.dt == 1e-3
        assert cfg.initial_g == "circle 0.2 0.2 0.5"
        assert example_config("1b").initial_g == "annulus 0.2 0.2 0.4 0.2"

    def test_roundtrip(self, tmp_path):
        cfg = RunConfig(epsilon=3e-3, scheme="rk4", figures=False, gamma="0.25",
                        constraint_negative="box 0 0.1 0 0.1")
        cfg.save(tmp_path / "c.cfg")
        assert RunConfig.load(tmp_path / "c.cfg") == cfg

    @settings(max_examples=30, deadline=None)
    @given(eps=st.floats(1e-8, 1.0), dt=st.floats(1e-5, 1e-2), it=st.integers(0, 500),
           fig=st.booleans())
    def test_roundtrip_property(self, eps, dt, it, fig):
        cfg = RunConfig(epsilon=eps, dt=dt, max_iter=it, figures=fig)
        assert RunConfig.parse(cfg.serialize()) == cfg

    def test_comments_and_blank_lines(self):
        cfg = RunConfig.parse("# header\n\nepsilon = 0.01  # coarse\n")
        assert cfg.epsilon == 0.01

    @pytest.mark.parametrize("text,line,fragment", [
        ("epsilon = 1e-4\nfoo = 1\n", 2, "unknown key"),
        ("dt = 1e-3\ndt = 2e-3\n", 2, "duplicate"),
        ("\n\nmax_iter = ten\n", 3, "integer"),
        ("figures = maybe\n", 1, "boolean"),
        ("just words\n", 1, "key = value"),
    ])
    def test_line_precise_errors(self, text, line, fragment):
        with pytest.raises(ConfigError, match=f"cfg:{line}: .*{fragment}"):
            RunConfig.parse(text, origin="cfg")

    @pytest.mark.parametrize("key,value", [
        ("epsilon", "-1"), ("scheme", "leapfrog"), ("initial_g", "square 1"),
        ("mesh", "structured 80"), ("rect", "1 -1 -1 1"), ("gamma", "-2"),
        ("constraint_zero", "segment 0 0"),
    ])
    def test_invalid_values(self, key, value):
        with pytest.raises(ConfigError):
            RunConfig.parse(f"{key} = {value}\n")

    def test_overrides(self):
        cfg = example_config("1a", ["epsilon=0.01", "max_iter = 7"])
        assert cfg.epsilon == 0.01 and cfg.max_iter == 7
        assert cfg.initial_g == "circle 0.2 0.2 0.5"
        with pytest.raises(ConfigError):
            example_config("1a", ["nonsense=1"])
        with pytest.raises(ConfigError):
            example_config("2c")


class TestCommands:
    def test_run_writes_artifacts(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, SMALL + [f"output_dir = {out}"])
        assert main(["run", "--config", str(cfg)]) == 0
        for name in ("config.txt", "history.csv", "diagnostics.txt", "summary.txt",
                     "field_g_final.txt", "field_y_final.txt", "field_u_final.txt",
                     "domains.png", "history.png", "g_final.png", "y_final.png",
                     "curve_k0000_c0.txt"):
            assert (out / name).exists(), name
        text = capsys.readouterr().out
        assert "status = " in text and "J drop factor" in text
        assert RunConfig.load(out / "config.txt") == RunConfig.load(cfg)

    def test_output_env_overrides(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IMPLICIT_SHAPE_OUTPUT", str(tmp_path / "env"))
        cfg = write_config(tmp_path, ["mesh = structured 20 20", "max_iter = 0",
                                      "figures = false", f"output_dir = {tmp_path / 'cfg'}"])
        assert main(["run", "--config", str(cfg)]) == 0
        assert (tmp_path / "env" / "history.csv").exists()
        assert not (tmp_path / "cfg").exists()

    def test_deterministic_history(self, tmp_path):
        texts = []
        for i in range(2):
            out = tmp_path / f"o{i}"
            cfg = write_config(tmp_path, SMALL + ["figures = false", f"output_dir = {out}"],
                               f"c{i}.cfg")
            assert main(["run", "--config", str(cfg)]) == 0
            texts.append((out / "history.csv").read_bytes())
        assert texts[0] == texts[1]

    def test_example_with_overrides(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IMPLICIT_SHAPE_OUTPUT", str(tmp_path / "ex"))
        assert main(["example", "1b", "--set", "mesh=structured 20 20", "--set",
                     "max_iter=1", "--set", "figures=false"]) == 0
        summary = (tmp_path / "ex" / "summary.txt").read_text()
        assert "components" in summary and "reference J" in summary

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path, ["mesh = structured 20 20", "epsilon = zero"])
        assert main(["run", "--config", str(cfg)]) == 2
        assert ":2:" in capsys.readouterr().err

    def test_initial_g_must_be_positive_on_boundary(self, tmp_path):
        cfg = write_config(tmp_path, ["mesh = structured 20 20", "initial_g = circle 0 0 3",
                                      f"output_dir = {tmp_path}"])
        assert main(["run", "--config", str(cfg)]) == 2

    def test_validate_gradient(self, tmp_path, capsys):
        cfg = write_config(tmp_path, ["mesh = structured 20 20",
                                      "initial_g = circle 0.2 0.2 0.5"])
        assert main(["validate-gradient", "--config", str(cfg)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("PASS zero direction")
        assert lines[-1] == f"{len(lines) - 1}/{len(lines) - 1} checks passed"

    def test_initial_fields_from_files(self, tmp_path):
        base = RunConfig(mesh="structured 20 20")
        problem, G0, _, _ = build_problem(base)
        np.savetxt(tmp_path / "g.txt", G0)
        cfg = RunConfig(mesh="structured 20 20", initial_g=f"file {tmp_path / 'g.txt'}")
        _, G1, _, _ = build_problem(cfg)
        np.testing.assert_array_equal(G1, G0)
