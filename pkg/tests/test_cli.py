import json

import numpy as np
import pytest

from docqg import cli

from helpers import toy_records, write_jsonl


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    records = toy_records(n=8)
    write_jsonl(records[:6], d / "train.jsonl")
    write_jsonl(records[6:], d / "dev.jsonl")
    return d


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "model.ckpt"
    code = run(["train", "--train", str(data_dir / "train.jsonl"),
                "--dev", str(data_dir / "dev.jsonl"),
                "--out", str(out), "--dim", "8", "--steps", "2",
                "--batch", "2", "--lr", "0.01", "--eval-every", "2",
                "--seed", "7"])
    assert code == cli.EXIT_OK
    return out


class TestTrain:
    def test_identical_seeds_byte_identical_checkpoints(self, data_dir,
                                                        tmp_path):
        outs = []
        for name in ("a.ckpt", "b.ckpt"):
            out = tmp_path / name
            code = run(["train", "--train", str(data_dir / "train.jsonl"),
                        "--dev", str(data_dir / "dev.jsonl"),
                        "--out", str(out), "--dim", "8", "--steps", "2",
                        "--batch", "2", "--eval-every", "2", "--seed", "11"])
            assert code == cli.EXIT_OK
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_missing_train_file_is_data_error(self, data_dir, tmp_path):
        code = run(["train", "--train", str(data_dir / "nope.jsonl"),
                    "--dev", str(data_dir / "dev.jsonl"),
                    "--out", str(tmp_path / "x.ckpt")])
        assert code == cli.EXIT_DATA

    def test_odd_dim_is_usage_error(self, data_dir, tmp_path):
        code = run(["train", "--train", str(data_dir / "train.jsonl"),
                    "--dev", str(data_dir / "dev.jsonl"),
                    "--out", str(tmp_path / "x.ckpt"), "--dim", "7"])
        assert code == cli.EXIT_USAGE


class TestGenerate:
    def test_writes_one_line_per_example(self, trained, data_dir, tmp_path):
        out = tmp_path / "gen.jsonl"
        code = run(["generate", "--checkpoint", str(trained),
                    "--input", str(data_dir / "dev.jsonl"),
                    "--output", str(out), "--beam", "2", "--max-len", "6"])
        assert code == cli.EXIT_OK
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(rows) == 2
        for row in rows:
            assert set(row) >= {"id", "question", "score"}

    def test_beam_one_equals_greedy(self, trained, data_dir, tmp_path):
        outs = []
        for flags in (["--beam", "1"], ["--greedy"]):
            out = tmp_path / f"g{len(outs)}.jsonl"
            code = run(["generate", "--checkpoint", str(trained),
                        "--input", str(data_dir / "dev.jsonl"),
                        "--output", str(out), "--max-len", "6"] + flags)
            assert code == cli.EXIT_OK
            outs.append(out.read_text())
        assert outs[0] == outs[1]

    def test_dump_attention_rows_are_distributions(self, trained, data_dir,
                                                   tmp_path):
        out = tmp_path / "att.jsonl"
        code = run(["generate", "--checkpoint", str(trained),
                    "--input", str(data_dir / "dev.jsonl"),
                    "--output", str(out), "--greedy", "--max-len", "4",
                    "--dump-attention"])
        assert code == cli.EXIT_OK
        for line in out.read_text().splitlines():
            row = json.loads(line)
            for a in row["stage_attentions"] + row["step_attentions"]:
                assert abs(sum(a) - 1.0) < 1e-6
                assert min(a) >= 0.0

    def test_vocab_hash_mismatch_is_data_error(self, trained, data_dir,
                                               tmp_path):
        from docqg import corpus
        bad = tmp_path / "vocab.json"
        bad.write_text(json.dumps(list(corpus.RESERVED) + ["stranger"]))
        code = run(["generate", "--checkpoint", str(trained),
                    "--input", str(data_dir / "dev.jsonl"),
                    "--output", str(tmp_path / "x.jsonl"),
                    "--vocab", str(bad)])
        assert code == cli.EXIT_DATA

    def test_matching_vocab_accepted(self, trained, data_dir, tmp_path):
        from docqg import checkpoint
        model = checkpoint.load(trained)
        good = tmp_path / "vocab.json"
        good.write_text(json.dumps(model.vocab.tokens))
        code = run(["generate", "--checkpoint", str(trained),
                    "--input", str(data_dir / "dev.jsonl"),
                    "--output", str(tmp_path / "y.jsonl"),
                    "--vocab", str(good), "--greedy", "--max-len", "4"])
        assert code == cli.EXIT_OK

    def test_corrupt_checkpoint_is_data_error(self, data_dir, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage bytes")
        code = run(["generate", "--checkpoint", str(bad),
                    "--input", str(data_dir / "dev.jsonl"),
                    "--output", str(tmp_path / "x.jsonl")])
        assert code == cli.EXIT_DATA

    def test_zero_beam_is_usage_error(self, trained, data_dir, tmp_path):
        code = run(["generate", "--checkpoint", str(trained),
                    "--input", str(data_dir / "dev.jsonl"),
                    "--output", str(tmp_path / "x.jsonl"), "--beam", "0"])
        assert code == cli.EXIT_USAGE


class TestEvaluate:
    def _write(self, path, rows):
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        return path

    def test_identity_scores_one(self, tmp_path, capsys):
        rows = [{"id": "1", "question": "what year was it founded ?"},
                {"id": "2", "question": "who founded the acme company ?"}]
        p = self._write(tmp_path / "p.jsonl", rows)
        r = self._write(tmp_path / "r.jsonl", rows)
        code = run(["evaluate", "--predictions", str(p),
                    "--references", str(r)])
        assert code == cli.EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["bleu4"] == 1.0
        assert summary["rougeL"] == 1.0

    def test_outputs_written(self, tmp_path):
        rows = [{"id": "1", "question": "what year was it founded ?"}]
        p = self._write(tmp_path / "p.jsonl", rows)
        r = self._write(tmp_path / "r.jsonl", rows)
        oj, oc = tmp_path / "o.json", tmp_path / "o.csv"
        code = run(["evaluate", "--predictions", str(p),
                    "--references", str(r), "--out-json", str(oj),
                    "--out-csv", str(oc)])
        assert code == cli.EXIT_OK
        payload = json.loads(oj.read_text())
        assert payload["per_example"][0]["id"] == "1"
        assert oc.read_text().startswith("id,bleu4,rougeL,meteor")

    def test_missing_ids_exit_data(self, tmp_path):
        p = self._write(tmp_path / "p.jsonl",
                        [{"id": "1", "question": "a b"}])
        r = self._write(tmp_path / "r.jsonl",
                        [{"id": "1", "question": "a b"},
                         {"id": "2", "question": "c d"}])
        assert run(["evaluate", "--predictions", str(p),
                    "--references", str(r)]) == cli.EXIT_DATA
        assert run(["evaluate", "--predictions", str(p),
                    "--references", str(r),
                    "--allow-missing"]) == cli.EXIT_OK

    def test_malformed_predictions_exit_data(self, tmp_path):
        p = tmp_path / "p.jsonl"
        p.write_text("not json\n")
        r = self._write(tmp_path / "r.jsonl",
                        [{"id": "1", "question": "a"}])
        assert run(["evaluate", "--predictions", str(p),
                    "--references", str(r)]) == cli.EXIT_DATA


class TestGradcheck:
    def test_passes_at_default_tolerance(self, capsys):
        code = run(["gradcheck", "--dim", "4", "--stages", "1"])
        assert code == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_unreachable_tolerance_exits_numeric(self, capsys):
        code = run(["gradcheck", "--dim", "4", "--stages", "1",
                    "--tolerance", "1e-15"])
        assert code == cli.EXIT_NUMERIC
        assert "FAIL" in capsys.readouterr().out


class TestAblateAndStats:
    def test_ablate_writes_reports(self, data_dir, tmp_path):
        md, csv_ = tmp_path / "a.md", tmp_path / "a.csv"
        code = run(["ablate", "--train", str(data_dir / "train.jsonl"),
                    "--dev", str(data_dir / "dev.jsonl"),
                    "--out-md", str(md), "--out-csv", str(csv_),
                    "--dim", "8", "--steps", "1", "--batch", "2",
                    "--eval-every", "1", "--beam", "1", "--max-len", "4"])
        assert code == cli.EXIT_OK
        text = md.read_text()
        assert text.count("\n") == 7   # header, rule, 5 variants
        assert "2-stage (base)" in text
        assert csv_.read_text().count("\n") == 6

    def test_stats_prints_summary(self, data_dir, capsys):
        code = run(["stats", "--input", str(data_dir / "train.jsonl")])
        assert code == cli.EXIT_OK
        stats = json.loads(capsys.readouterr().out)
        assert stats["examples"] == 6

    def test_unknown_command_is_usage_error(self):
        assert run(["frobnicate"]) == cli.EXIT_USAGE

    def test_missing_required_flag_is_usage_error(self):
        assert run(["stats"]) == cli.EXIT_USAGE
