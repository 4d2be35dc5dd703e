import json
from pathlib import Path

import pytest

from transbox.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, main
from transbox.model import init_model, load_checkpoint, save_checkpoint
from transbox.ontology import load_ontology

FAMILY = Path(__file__).resolve().parents[1] / "data" / "family.el"
FAMILY_ARGS = ["--dim", "2", "--gamma", "0", "--lambda", "0", "--no-negatives", "--seed", "0"]

TEST_SPLIT = """\
Father SubClassOf Male and Parent
Male and Parent SubClassOf Father
Child SubClassOf hasParent some Mother
hasChild some Child SubClassOf Parent
hasChild some (Male and Child) SubClassOf Parent
Father SubClassOf Male
Mother SubClassOf Parent
"""


@pytest.fixture(scope="module")
def family_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("family")
    assert main(["train", "--ontology", str(FAMILY), "--out", str(out), "--epochs", "5000",
                 "--checkpoint-every", "2500", *FAMILY_ARGS]) == EXIT_OK
    return out


class TestTrain:
    def test_outputs(self, family_run):
        assert (family_run / "model.ckpt").is_file()
        assert sorted(p.name for p in (family_run / "checkpoints").iterdir()) == [
            "epoch002500.ckpt", "epoch005000.ckpt"]
        trace = (family_run / "trace.csv").read_text().splitlines()
        assert len(trace) == 5001
        manifest = json.loads((family_run / "manifest.json").read_text())
        assert manifest["command"] == "train" and manifest["seed"] == 0
        assert manifest["inputs"] == [str(FAMILY)]
        assert manifest["config"]["dim"] == 2 and manifest["config"]["negatives"] == 0
        model = load_checkpoint(family_run / "model.ckpt")
        assert model.metadata["config_digest"] == manifest["config_digest"]

    def test_flag_beats_file_beats_default(self, tmp_path):
        cfg = tmp_path / "train.ini"
        cfg.write_text("dim = 3\nlr = 0.05\nseed = 9\n")
        assert main(["train", "--ontology", str(FAMILY), "--out", str(tmp_path / "r"),
                     "--config", str(cfg), "--dim", "4", "--epochs", "0"]) == EXIT_OK
        conf = json.loads((tmp_path / "r" / "manifest.json").read_text())["config"]
        assert (conf["dim"], conf["lr"], conf["seed"], conf["gamma"]) == (4, 0.05, 9, 0.0)

    def test_section_header_accepted(self, tmp_path):
        cfg = tmp_path / "train.ini"
        cfg.write_text("[train]\ndim = 3\n")
        assert main(["train", "--ontology", str(FAMILY), "--out", str(tmp_path / "r"),
                     "--config", str(cfg), "--epochs", "0"]) == EXIT_OK

    def test_zero_epochs_writes_init(self, tmp_path):
        assert main(["train", "--ontology", str(FAMILY), "--out", str(tmp_path),
                     "--dim", "3", "--seed", "4", "--epochs", "0"]) == EXIT_OK
        model = load_checkpoint(tmp_path / "model.ckpt")
        assert model.same_parameters(init_model(load_ontology(FAMILY), 3, seed=4))

    def test_missing_ontology(self, tmp_path, capsys):
        assert main(["train", "--ontology", str(tmp_path / "nope.el"),
                     "--out", str(tmp_path)]) == EXIT_USAGE
        assert "nope.el" in capsys.readouterr().err

    def test_bad_values(self, tmp_path):
        assert main(["train", "--ontology", str(FAMILY), "--dim", "0",
                     "--out", str(tmp_path)]) == EXIT_USAGE
        assert main(["train", "--ontology", str(FAMILY), "--dim", "two"]) == EXIT_USAGE
        assert main(["train"]) == EXIT_USAGE

    def test_syntax_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.el"
        bad.write_text("A SubClassOf B\nA SubClassOf (\n")
        assert main(["train", "--ontology", str(bad), "--out", str(tmp_path)]) == EXIT_USAGE
        assert "2" in capsys.readouterr().err


class TestCheck:
    def test_trained_model_is_sound(self, family_run, capsys):
        assert main(["check", "--checkpoint", str(family_run / "model.ckpt"),
                     "--ontology", str(FAMILY)]) == EXIT_OK
        assert "sound=true" in capsys.readouterr().out

    def test_random_model_fails(self, tmp_path, capsys):
        save_checkpoint(init_model(load_ontology(FAMILY), 2, seed=0), tmp_path / "m.ckpt")
        assert main(["check", "--checkpoint", str(tmp_path / "m.ckpt"),
                     "--ontology", str(FAMILY)]) == EXIT_CHECK_FAILED
        assert "violated axioms" in capsys.readouterr().err

    def test_empty_ontology(self, tmp_path):
        save_checkpoint(init_model(load_ontology(FAMILY), 2, seed=0), tmp_path / "m.ckpt")
        (tmp_path / "empty.el").write_text("# nothing\n")
        assert main(["check", "--checkpoint", str(tmp_path / "m.ckpt"),
                     "--ontology", str(tmp_path / "empty.el")]) == EXIT_OK

    def test_unknown_name(self, tmp_path, capsys):
        save_checkpoint(init_model(load_ontology(FAMILY), 2, seed=0), tmp_path / "m.ckpt")
        (tmp_path / "o.el").write_text("Foo SubClassOf Male\n")
        assert main(["check", "--checkpoint", str(tmp_path / "m.ckpt"),
                     "--ontology", str(tmp_path / "o.el")]) == EXIT_USAGE
        assert "Foo" in capsys.readouterr().err

    def test_corrupt_checkpoint(self, tmp_path):
        (tmp_path / "m.ckpt").write_bytes(b"not a checkpoint")
        assert main(["check", "--checkpoint", str(tmp_path / "m.ckpt"),
                     "--ontology", str(FAMILY)]) == EXIT_USAGE


class TestEval:
    def test_reports(self, family_run, tmp_path, capsys):
        split = tmp_path / "test.el"
        split.write_text(TEST_SPLIT)
        out = tmp_path / "eval"
        assert main(["eval", "--checkpoint", str(family_run / "model.ckpt"), "--test", str(split),
                     "--tasks", "all,nf1", "--out", str(out)]) == EXIT_USAGE
        assert main(["eval", "--checkpoint", str(family_run / "model.ckpt"), "--test", str(split),
                     "--tasks", "rhs-atomic,rhs-complex,nf1", "--out", str(out)]) == EXIT_OK
        printed = capsys.readouterr().out
        for kind in ("rhs-atomic", "rhs-complex", "nf1"):
            kv = dict(line.split("=", 1)
                      for line in (out / f"{kind}.kv.txt").read_text().splitlines())
            assert kv["task"] == kind and 0 < float(kv["MRR"]) <= 1
            assert kind in (out / f"{kind}.table.txt").read_text()
            assert kind in printed
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "eval" and manifest["seed"] == 0

    def test_skips_empty_task(self, family_run, tmp_path, capsys):
        split = tmp_path / "test.el"
        split.write_text("Father SubClassOf Male\n")
        assert main(["eval", "--checkpoint", str(family_run / "model.ckpt"), "--test", str(split),
                     "--out", str(tmp_path / "e")]) == EXIT_OK
        assert "skipped" in capsys.readouterr().out

    def test_selection_needs_valid(self, family_run, tmp_path):
        split = tmp_path / "test.el"
        split.write_text(TEST_SPLIT)
        ckpts = [str(p) for p in sorted((family_run / "checkpoints").iterdir())]
        args = ["eval", "--checkpoint", *ckpts, "--test", str(split), "--tasks", "nf1",
                "--out", str(tmp_path / "e")]
        assert main(args) == EXIT_USAGE
        assert main(args + ["--valid", str(split), "--select-metric", "MR"]) == EXIT_OK
        manifest = json.loads((tmp_path / "e" / "manifest.json").read_text())
        assert manifest["selection"]["metric"] == "MR"
        assert manifest["checkpoint"] in ckpts

    def test_unknown_name(self, family_run, tmp_path, capsys):
        split = tmp_path / "test.el"
        split.write_text("Father SubClassOf Grandparent\n")
        assert main(["eval", "--checkpoint", str(family_run / "model.ckpt"), "--test", str(split),
                     "--out", str(tmp_path / "e")]) == EXIT_USAGE
        assert "Grandparent" in capsys.readouterr().err


class TestSimulate:
    def test_table(self, capsys):
        assert main(["simulate", "--dims", "1,2,50", "--samples", "20000", "--seed", "3"]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split() == ["n", "empirical", "analytic", "stderr", "z", "note"]
        rows = [line.split() for line in lines[1:]]
        assert [r[0] for r in rows] == ["1", "2", "50"]
        for r in rows[:2]:
            assert abs(float(r[4])) < 4
        assert float(rows[2][1]) == 0 and "analytic < 1.6e-09" in lines[3]

    def test_independent_offsets(self, capsys):
        assert main(["simulate", "--dims", "1", "--samples", "20000",
                     "--independent-offsets"]) == EXIT_OK
        row = capsys.readouterr().out.splitlines()[1].split()
        assert float(row[2]) == pytest.approx(17 / 24)

    @pytest.mark.parametrize("flags", [["--samples", "0"], ["--dims", "a,b"], ["--dims", "0"]])
    def test_usage_errors(self, flags):
        assert main(["simulate", *flags]) == EXIT_USAGE


class TestPlot2d:
    def test_svg(self, family_run, tmp_path):
        ckpt = str(family_run / "model.ckpt")
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        assert main(["plot2d", "--checkpoint", ckpt, "--out", str(a)]) == EXIT_OK
        assert main(["plot2d", "--checkpoint", ckpt, "--out", str(b)]) == EXIT_OK
        svg = a.read_text()
        assert svg.startswith("<svg") or svg.startswith("<?xml")
        assert svg.count('class="concept"') == 6 and svg.count('class="role"') == 2
        assert a.read_bytes() == b.read_bytes()
        assert main(["plot2d", "--checkpoint", ckpt, "--out", str(b), "--no-roles"]) == EXIT_OK
        assert b.read_text().count('class="role"') == 0

    def test_stdout(self, family_run, capsys):
        assert main(["plot2d", "--checkpoint", str(family_run / "model.ckpt")]) == EXIT_OK
        assert "</svg>" in capsys.readouterr().out

    def test_needs_two_dimensions(self, tmp_path, capsys):
        save_checkpoint(init_model(load_ontology(FAMILY), 50, seed=0), tmp_path / "m.ckpt")
        assert main(["plot2d", "--checkpoint", str(tmp_path / "m.ckpt")]) == EXIT_USAGE
        assert "dimension 2" in capsys.readouterr().err
