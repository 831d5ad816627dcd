import json

import pytest

from improvnet.cli import main
from improvnet.corpus import Corpus


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out-dir", str(d), "--pieces", "2", "--events-per-piece", "150",
                 "--seed", "1"]) == 0
    return d


class TestCommands:
    def test_synth_writes_corpus_and_manifest(self, workdir):
        c = Corpus.from_csv(workdir / "synthetic.csv")
        assert len(c) == 300 and c.piece_lengths() == [150, 150]
        m = json.loads((workdir / "synth_manifest.json").read_text())
        assert m["config"]["seed"] == 1 and m["command"] == "synth"

    def test_manifest_replay(self, workdir, tmp_path):
        assert main(["synth", "--config", str(workdir / "synth_manifest.json"),
                     "--out-dir", str(tmp_path)]) == 0
        assert (tmp_path / "synthetic.csv").read_bytes() == (workdir / "synthetic.csv").read_bytes()

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"pieces": 1, "events_per_piece": 30, "seed": 4}))
        assert main(["synth", "--config", str(cfg), "--events-per-piece", "20",
                     "--out-dir", str(tmp_path)]) == 0
        assert len(Corpus.from_csv(tmp_path / "synthetic.csv")) == 20

    def test_render_then_ingest(self, workdir, tmp_path, capsys):
        assert main(["render", "--events", str(workdir / "synthetic.csv"), "--out-dir", str(tmp_path)]) == 0
        mid = tmp_path / "synthetic.mid"
        assert main(["ingest", str(mid), str(mid), "--out-dir", str(tmp_path)]) == 0
        c = Corpus.from_csv(tmp_path / "ingested.csv")
        assert len(c.piece_bounds) == 2

    def test_ingest_refuses_partial_output(self, workdir, tmp_path, capsys):
        bad = tmp_path / "bad.mid"
        bad.write_bytes(b"not midi")
        main(["render", "--events", str(workdir / "synthetic.csv"), "--out-dir", str(tmp_path)])
        code = main(["ingest", str(tmp_path / "synthetic.mid"), str(bad), "--out-dir", str(tmp_path)])
        assert code == 2
        assert "bad.mid" in capsys.readouterr().err
        assert not (tmp_path / "ingested.csv").exists()

    def test_train_generate_stats(self, workdir, capsys):
        d = str(workdir)
        assert main(["train", "--corpus", f"{d}/synthetic.csv", "--epochs", "2", "--out-dir", d,
                     "--val-fraction", "0.2"]) == 0
        out = capsys.readouterr().out
        assert "naive" in out and "7565" in out
        assert main(["generate", "--model", f"{d}/model_cnn.json", "--seed-piece", f"{d}/synthetic.csv",
                     "--total", "40", "--out-dir", d]) == 0
        report = json.loads((workdir / "generated_report.json").read_text())
        assert report["summary"]["predictions"] == 40
        assert report["summary"]["seedings"] == 4
        assert (workdir / "generated.mid").exists()
        for which in ("describe", "pca", "density", "arlags"):
            assert main(["stats", which, "--corpus", f"{d}/synthetic.csv", "--out-dir", d,
                         "--max-lag", "3"]) == 0
        assert main(["stats", "ad", "--corpus", f"{d}/synthetic.csv", "--seed-piece",
                     f"{d}/synthetic.csv", "--generated", f"{d}/generated.csv", "--out-dir", d]) == 0
        cells = json.loads((workdir / "stats_ad.json").read_text())["cells"]
        assert len(cells) == 8

    def test_cramer_identical_files(self, workdir, capsys):
        f = str(workdir / "synthetic.csv")
        assert main(["stats", "cramer", "--corpus", f, "--generated", f, "--replicates", "99",
                     "--out-dir", str(workdir)]) == 0
        res = json.loads((workdir / "stats_cramer.json").read_text())
        assert res["generated_vs_corpus"]["statistic"] == 0.0

    def test_density_presets(self, workdir):
        main(["stats", "density", "--corpus", str(workdir / "synthetic.csv"), "--out-dir", str(workdir)])
        res = json.loads((workdir / "stats_density.json").read_text())
        assert res["corpus_duration"]["truncate_at"] == 200.0
        assert res["corpus_ioi"]["truncate_at"] == 100.0


class TestExitCodes:
    def test_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["nonsense"])
        assert exc.value.code == 1

    def test_missing_required(self, tmp_path, capsys):
        assert main(["train", "--out-dir", str(tmp_path)]) == 1

    def test_missing_file(self, tmp_path, capsys):
        assert main(["train", "--corpus", str(tmp_path / "none.csv"), "--out-dir", str(tmp_path)]) == 2

    def test_missing_columns_named(self, tmp_path, capsys):
        f = tmp_path / "x.csv"
        f.write_text("p1,vel\n60,70\n")
        assert main(["stats", "describe", "--corpus", str(f), "--out-dir", str(tmp_path)]) == 2
        assert "dur_ms" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"bogus": 1}')
        assert main(["synth", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 1

    def test_numerical_failure(self, workdir, tmp_path, monkeypatch, capsys):
        from improvnet import cli
        from improvnet.model import TrainingError

        def boom(*a, **k):
            raise TrainingError("non-finite loss at epoch 0")

        monkeypatch.setattr(cli, "train", boom)
        assert main(["train", "--corpus", str(workdir / "synthetic.csv"), "--out-dir", str(tmp_path)]) == 3
