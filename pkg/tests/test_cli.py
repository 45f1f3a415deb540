import csv

import pytest

from dula import cli


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


CUSTOM = """
experiment.kind = custom
topology.n = 4
schedule.a = 0.05
schedule.b = 0.2
schedule.delta2 = 0.7
run.iterations = 200
run.record_every = 10
run.burn_in = 50
"""


class TestValidate:
    def test_admissible(self, tmp_path, capsys):
        assert cli.main(["validate", "--config", write(tmp_path, CUSTOM)]) == 0
        out = capsys.readouterr().out
        assert "b admissible: True" in out and out.strip().endswith("OK")

    def test_gain_too_large(self, tmp_path, capsys):
        # ring(4) has sigma_max = 4, so any b above 0.25 is rejected
        cfg = write(tmp_path, CUSTOM.replace("schedule.b = 0.2", "schedule.b = 0.3"))
        assert cli.main(["validate", "--config", cfg]) == 1
        assert "INVALID" in capsys.readouterr().out

    def test_window_violation_is_warning(self, tmp_path, capsys):
        cfg = write(tmp_path, CUSTOM.replace("schedule.delta2 = 0.7", "schedule.delta2 = 0.55"))
        assert cli.main(["validate", "--config", cfg]) == 0
        assert "WARNING" in capsys.readouterr().out

    def test_disconnected(self, tmp_path, capsys):
        cfg = write(tmp_path, CUSTOM + "topology.kind = edges\ntopology.edges = [(0, 1), (2, 3)]\n")
        assert cli.main(["validate", "--config", cfg]) == 1

    def test_bad_config_exit_code(self, tmp_path, capsys):
        assert cli.main(["validate", "--config", write(tmp_path, "run.nope = 3")]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["validate", "--config", str(tmp_path / "absent.cfg")]) == 2


class TestRunAndDiagnose:
    def test_custom_run_then_diagnose(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = write(tmp_path, CUSTOM)
        assert cli.main(["run", "--config", cfg, "--out", str(out), "--seed", "4"]) == 0
        run_dir = out / "dula_seed4"
        assert (run_dir / "samples.csv").exists()
        assert cli.main(["diagnose", "--run", str(run_dir)]) == 0
        with open(run_dir / "bounds.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 20
        assert all(float(r["bound"]) > 0 for r in rows)

    def test_seed_override_changes_output(self, tmp_path):
        cfg = write(tmp_path, CUSTOM)
        cli.main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
        cli.main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
        a = (tmp_path / "a" / "dula_seed1" / "samples.csv").read_text()
        b = (tmp_path / "b" / "dula_seed2" / "samples.csv").read_text()
        assert a != b

    def test_gm_run_and_diagnose(self, tmp_path, capsys):
        cfg = write(tmp_path, "experiment.kind = gm\nexperiment.sizes = [1, 3]\n"
                    "run.iterations = 800\nrun.burn_in = 100\nrun.record_every = 100\n")
        out = tmp_path / "gm"
        assert cli.main(["run", "--config", cfg, "--out", str(out)]) == 0
        assert "d_M" in capsys.readouterr().out
        assert cli.main(["diagnose", "--run", str(out / "n3_seed0")]) == 0
        with open(out / "n3_seed0" / "sinkhorn.csv") as fh:
            agents = [r["agent"] for r in csv.DictReader(fh)]
        assert agents == ["0", "1", "2", "pooled"]

    def test_diagnose_missing_run(self, tmp_path):
        assert cli.main(["diagnose", "--run", str(tmp_path / "nothing")]) == 2


def test_requires_subcommand():
    with pytest.raises(SystemExit):
        cli.main([])
