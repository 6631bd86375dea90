import io
import struct
from pathlib import Path

import numpy as np
import pytest

from styleshift import checkpoint as ckpt_io
from styleshift.cli import main
from styleshift.config import ConfigError, RunConfig, load_config, parse_pairs

ROOT = Path(__file__).resolve().parents[1]
TINY = [
    "embed_dim=16", "ffn_dim=32", "layers=1", "heads=2", "max_len=32",
    "clf_embed_dim=16", "filters_per_size=8", "clf_max_steps=30", "min_freq=1",
    "batch_size=16", "dev_every=3",
]


def sets(*extra):
    out = []
    for kv in TINY + list(extra):
        out += ["--set", kv]
    return out


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-toy-corpus", "--out", str(d / "data"), "--seed", "0"]) == 0
    assert main(["train-classifier", "--labeled", str(d / "data/labeled.tsv"), "--parallel", str(d / "data/train.parallel.tsv"),
                 "--out", str(d / "clf.ckpt"), *sets()]) == 0
    assert main(["train", "--labeled", str(d / "data/labeled.tsv"), "--classifier", str(d / "clf.ckpt"),
                 "--parallel", str(d / "data/train.parallel.tsv"), "--dev", str(d / "data/dev.parallel.tsv"),
                 "--out-dir", str(d / "run"), "--max-steps", "4", *sets()]) == 0
    return d


def run(argv, capsys, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr("sys.stdin", io.StringIO(stdin))
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestGenToyCorpus:
    def test_deterministic(self, tmp_path, capsys):
        main(["gen-toy-corpus", "--out", str(tmp_path / "a"), "--seed", "3"])
        main(["gen-toy-corpus", "--out", str(tmp_path / "b"), "--seed", "3"])
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_sizes(self, work):
        data = work / "data"
        assert len((data / "train.parallel.tsv").read_text().splitlines()) == 500
        assert len((data / "labeled.tsv").read_text().splitlines()) == 2000
        assert len((data / "test.parallel.tsv").read_text().splitlines()) == 100


class TestTrainClassifier:
    def test_checkpoint_round_trip_byte_identical(self, work):
        raw = (work / "clf.ckpt").read_bytes()
        assert ckpt_io.to_bytes(ckpt_io.from_bytes(raw)) == raw

    def test_zero_steps_is_chance(self, work, tmp_path, capsys):
        code, out, _ = run(["train-classifier", "--labeled", str(work / "data/labeled.tsv"), "--out", str(tmp_path / "c.ckpt"),
                            "--max-steps", "0", *sets()], capsys)
        assert code == 0
        acc = float(out.strip().split("=")[1])
        assert 25.0 <= acc <= 75.0

    def test_missing_input(self, tmp_path, capsys):
        code, _, err = run(["train-classifier", "--labeled", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "c.ckpt")], capsys)
        assert code == 2 and "nope.tsv" in err
        assert not (tmp_path / "c.ckpt").exists()

    def test_bad_label(self, tmp_path, capsys):
        bad = tmp_path / "l.tsv"
        bad.write_text("casual\ta b\n", encoding="utf-8")
        code, _, err = run(["train-classifier", "--labeled", str(bad), "--out", str(tmp_path / "c.ckpt")], capsys)
        assert code == 2 and "casual" in err


class TestPseudoLabel:
    def test_threshold_one_keeps_nothing(self, work, capsys):
        code, out, err = run(["pseudo-label", "--input", str(work / "data/unlabeled.txt"), "--classifier", str(work / "clf.ckpt"),
                              "--threshold", "1.0"], capsys)
        assert code == 0 and out == "" and "kept=0" in err

    def test_zero_threshold_keeps_all(self, work, capsys):
        code, out, _ = run(["pseudo-label", "--input", str(work / "data/unlabeled.txt"), "--classifier", str(work / "clf.ckpt"),
                            "--threshold", "0"], capsys)
        assert code == 0 and len(out.splitlines()) == 2000


class TestTrain:
    def test_outputs(self, work):
        rows = (work / "run/loss_log.tsv").read_text().splitlines()
        assert rows[0].split("\t") == ["step", "l_trans", "l_clas", "l_self", "l_cyc", "tau", "dev_bleu"]
        assert len(rows) == 5
        assert (work / "run/final.ckpt").exists() and (work / "run/best.ckpt").exists()

    def test_translation_weight_without_parallel(self, work, tmp_path, capsys):
        code, _, err = run(["train", "--labeled", str(work / "data/labeled.tsv"), "--classifier", str(work / "clf.ckpt"),
                            "--out-dir", str(tmp_path / "r"), "--max-steps", "1", *sets()], capsys)
        assert code == 2 and "parallel" in err
        assert not (tmp_path / "r").exists()

    def test_unsupervised_runs(self, work, tmp_path, capsys):
        code, _, _ = run(["train", "--labeled", str(work / "data/labeled.tsv"), "--classifier", str(work / "clf.ckpt"),
                          "--out-dir", str(tmp_path / "r"), "--max-steps", "2", *sets("w_t=0", "w_c=1.0", "w_cr=1.0")], capsys)
        assert code == 0
        row = (tmp_path / "r/loss_log.tsv").read_text().splitlines()[1].split("\t")
        assert row[1] == "nan"

    def test_deterministic(self, work, tmp_path, capsys):
        args = ["train", "--labeled", str(work / "data/labeled.tsv"), "--classifier", str(work / "clf.ckpt"),
                "--parallel", str(work / "data/train.parallel.tsv"), "--dev", str(work / "data/dev.parallel.tsv"),
                "--max-steps", "4", *sets()]
        assert main(args + ["--out-dir", str(tmp_path / "again")]) == 0
        for name in ("final.ckpt", "best.ckpt", "loss_log.tsv"):
            assert (tmp_path / "again" / name).read_bytes() == (work / "run" / name).read_bytes()


class TestTransfer:
    def test_empty_input(self, work, capsys, monkeypatch):
        code, out, _ = run(["transfer", "--model", str(work / "run/final.ckpt"), "--direction", "formal"], capsys, "", monkeypatch)
        assert code == 0 and out == ""

    def test_line_aligned(self, work, capsys, monkeypatch):
        code, out, _ = run(["transfer", "--model", str(work / "run/final.ckpt"), "--direction", "formal", "--beam", "2"],
                           capsys, "w01 i02 lol\nw03 lol\n", monkeypatch)
        assert code == 0 and len(out.split("\n")) == 3

    def test_unknown_direction(self, work, capsys, monkeypatch):
        code, _, err = run(["transfer", "--model", str(work / "run/final.ckpt"), "--direction", "casual"], capsys, "a\n", monkeypatch)
        assert code == 2 and "casual" in err

    def test_missing_model(self, tmp_path, capsys, monkeypatch):
        code, _, _ = run(["transfer", "--model", str(tmp_path / "x.ckpt"), "--direction", "formal"], capsys, "a\n", monkeypatch)
        assert code == 2

    def test_failing_gec_hook(self, work, capsys, monkeypatch):
        code, out, err = run(["transfer", "--model", str(work / "run/final.ckpt"), "--direction", "formal", "--beam", "1",
                              "--gec-cmd", "exit 4"], capsys, "w01 lol\n", monkeypatch)
        assert code == 1 and out == "" and "4" in err

    def test_filter_classifier(self, work, capsys, monkeypatch):
        code, out, _ = run(["transfer", "--model", str(work / "run/final.ckpt"), "--direction", "formal", "--beam", "3",
                            "--filter-classifier", str(work / "clf.ckpt")], capsys, "w01 i02 lol\n", monkeypatch)
        assert code == 0 and len(out.splitlines()) == 1


class TestEvaluate:
    def test_without_source_omits_gleu(self, work, capsys):
        f = str(work / "data/test.formal.txt")
        code, out, _ = run(["evaluate", "--hyp", f, "--ref", f, "--quiet"], capsys)
        assert code == 0 and out.strip() == "bleu=100.00 n=100"

    def test_with_source_and_classifier(self, work, capsys):
        f = str(work / "data/test.formal.txt")
        code, out, _ = run(["evaluate", "--hyp", f, "--ref", f, "--src", str(work / "data/test.informal.txt"),
                            "--classifier", str(work / "clf.ckpt"), "--target-style", "formal"], capsys)
        assert code == 0
        record = dict(kv.split("=") for kv in out.splitlines()[0].split())
        assert record["gleu"] == "100.00" and "g_score" in record

    def test_mismatch(self, work, tmp_path, capsys):
        short = tmp_path / "r.txt"
        short.write_text("".join(f"x{i}\n" for i in range(99)), encoding="utf-8")
        code, _, err = run(["evaluate", "--hyp", str(work / "data/test.formal.txt"), "--ref", str(short)], capsys)
        assert code == 2 and "100" in err and "99" in err


class TestGridSearch:
    def test_rows(self, work, tmp_path, capsys):
        base = ["grid-search", "--labeled", str(work / "data/labeled.tsv"), "--classifier", str(work / "clf.ckpt"),
                "--parallel", str(work / "data/train.parallel.tsv"), "--dev", str(work / "data/dev.parallel.tsv"),
                "--max-steps", "1", *sets()]
        code, out, _ = run(base + ["--candidates", "0.5"], capsys)
        assert code == 0 and len(out.splitlines()) == 3
        code, _, _ = run(base + ["--candidates", "0.5", "--candidates-w-c", "0.1,1.0", "--results", str(tmp_path / "g.tsv")], capsys)
        assert code == 0 and len((tmp_path / "g.tsv").read_text().splitlines()) == 3

    def test_needs_dev(self, work, capsys):
        code, _, _ = run(["grid-search", "--labeled", str(work / "data/labeled.tsv"), "--classifier", str(work / "clf.ckpt")], capsys)
        assert code == 2


class TestConfig:
    def test_toy_config(self):
        cfg = load_config(ROOT / "configs/toy.conf")
        assert (cfg.embed_dim, cfg.max_steps, cfg.weights.as_tuple()) == (32, 2000, (1.0, 0.1, 0.5, 0.5))

    def test_overrides_and_comments(self):
        cfg = load_config(None, ["lr = 0.01  # faster", "styles=casual,polite"])
        assert cfg.lr == 0.01 and cfg.styles == ("casual", "polite")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            parse_pairs(["bogus = 1"])

    def test_round_trip_text(self):
        cfg = RunConfig(lr=0.5, filter_sizes=(2, 3))
        assert load_config(None, cfg.to_text().splitlines()) == cfg


class TestCheckpoint:
    def test_rejects_unknown_version(self, work):
        raw = bytearray((work / "clf.ckpt").read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        with pytest.raises(ckpt_io.CheckpointError, match="version 99"):
            ckpt_io.from_bytes(bytes(raw))

    def test_rejects_bad_magic_and_trailing_bytes(self, work):
        raw = (work / "clf.ckpt").read_bytes()
        with pytest.raises(ckpt_io.CheckpointError):
            ckpt_io.from_bytes(b"XXXX" + raw[4:])
        with pytest.raises(ckpt_io.CheckpointError, match="trailing"):
            ckpt_io.from_bytes(raw + b"\0")

    def test_reloaded_model_is_equivalent(self, work):
        model, vocab, ck = ckpt_io.load_seq2seq(work / "run/final.ckpt")
        again = ckpt_io.seq2seq_checkpoint(model, vocab, ck.step, ck.extra)
        assert ckpt_io.to_bytes(again) == (work / "run/final.ckpt").read_bytes()
        enc = model.encode([vocab.encode(["w01", "lol"])], vocab.direction_id("formal"))
        assert np.all(np.isfinite(enc.states.data))
