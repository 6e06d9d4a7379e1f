import json
import subprocess
import sys

import jsonschema
import pytest

from condlm import cli, toydata
from condlm.metrics import REPORT_SCHEMA
from condlm.trainer import load_checkpoint

from conftest import write_jsonl


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One full artifact pipeline shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.jsonl"
    write_jsonl(corpus, toydata.memorization_documents())

    tok = root / "tokenizer.tsv"
    assert cli.main(["train-tokenizer", "--input", str(corpus),
                     "--vocab-size", "160", "--out", str(tok)]) == 0

    vocab = root / "vocab"
    assert cli.main(["build-vocab", "--input", str(corpus),
                     "--min-count", "1", "--out", str(vocab)]) == 0

    df = root / "df.tsv"
    assert cli.main(["build-df", "--input", str(corpus), "--out", str(df)]) == 0

    ckpts = root / "ckpts"
    assert cli.main(["train", "--config", "toy", "--data", str(corpus),
                     "--tokenizer", str(tok), "--vocab", str(vocab),
                     "--checkpoint-dir", str(ckpts), "--steps", "6",
                     "--batch-size", "8", "--seed", "0"]) == 0
    return {"root": root, "corpus": corpus, "tok": tok, "vocab": vocab,
            "df": df, "ckpts": ckpts, "final": ckpts / "final.bin"}


def test_artifacts_exist(workdir):
    assert workdir["final"].exists()
    assert (workdir["vocab"] / "conditions.tsv").exists()
    assert (workdir["vocab"] / "labels.tsv").exists()
    log_lines = (workdir["ckpts"] / "training_log.jsonl").read_text().splitlines()
    assert len(log_lines) == 6
    first = json.loads(log_lines[0])
    assert {"step", "lr", "loss", "token", "pos", "dep", "ent"} <= set(first)


def test_train_resume_continues(workdir, tmp_path):
    out = tmp_path / "resumed"
    code = cli.main(["train", "--config", "toy", "--data", str(workdir["corpus"]),
                     "--tokenizer", str(workdir["tok"]), "--vocab", str(workdir["vocab"]),
                     "--checkpoint-dir", str(out), "--resume", str(workdir["final"]),
                     "--steps", "9", "--batch-size", "8"])
    assert code == 0
    assert load_checkpoint(out / "final.bin").step == 9


def test_generate_single_prompt_stdout(workdir, capsys):
    code = cli.main(["generate", "--checkpoint", str(workdir["final"]),
                     "--tokenizer", str(workdir["tok"]), "--vocab", str(workdir["vocab"]),
                     "--title", "the cold probe assay .", "--year", "1996",
                     "--keywords", "mesh-gold", "--n", "10", "--seed", "1"])
    assert code == 0
    row = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert row["id"] == "generation-0"
    assert row["year"] == 1996 and row["keywords"] == ["mesh-gold"]
    assert row["termination"] in ("end_token", "max_tokens")
    assert isinstance(row["generated"], str) and isinstance(row["sentences"], list)


def test_generate_prompts_file_parallel(workdir, tmp_path):
    prompts = tmp_path / "prompts.jsonl"
    write_jsonl(prompts, toydata.memorization_documents()[:4])
    out = tmp_path / "gen.jsonl"
    code = cli.main(["generate", "--checkpoint", str(workdir["final"]),
                     "--tokenizer", str(workdir["tok"]), "--vocab", str(workdir["vocab"]),
                     "--prompts-file", str(prompts), "--n", "12",
                     "--workers", "3", "--seed", "5", "--out", str(out)])
    assert code == 0
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    assert [r["id"] for r in rows] == ["toy-000", "toy-001", "toy-002", "toy-003"]
    assert [r["seed"] for r in rows] == [5, 6, 7, 8]  # per-row offsets
    # per-row seeds make the parallel result order- and schedule-independent
    serial = tmp_path / "gen-serial.jsonl"
    assert cli.main(["generate", "--checkpoint", str(workdir["final"]),
                     "--tokenizer", str(workdir["tok"]), "--vocab", str(workdir["vocab"]),
                     "--prompts-file", str(prompts), "--n", "12",
                     "--workers", "1", "--seed", "5", "--out", str(serial)]) == 0
    assert serial.read_text() == out.read_text()


def test_evaluate_end_to_end(workdir, tmp_path, capsys):
    prompts = tmp_path / "prompts.jsonl"
    write_jsonl(prompts, toydata.memorization_documents()[:3])
    gen = tmp_path / "gen.jsonl"
    assert cli.main(["generate", "--checkpoint", str(workdir["final"]),
                     "--tokenizer", str(workdir["tok"]), "--vocab", str(workdir["vocab"]),
                     "--prompts-file", str(prompts), "--n", "16", "--seed", "2",
                     "--out", str(gen)]) == 0
    report_path = tmp_path / "report.json"
    code = cli.main(["evaluate", "--generations", str(gen),
                     "--references", str(workdir["corpus"]),
                     "--df", str(workdir["df"]), "--out", str(report_path)])
    assert code == 0
    report = json.loads(report_path.read_text())
    jsonschema.validate(report, REPORT_SCHEMA)
    assert report["documents"] == 3
    assert report["unmatched_ids"] == []
    printed = capsys.readouterr().out
    assert "bleu_1" in printed and "cider_title" in printed


def test_config_file_and_unknown_field(workdir, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("d_model = 32\nheads = 2\nencoder_blocks = 1\ndecoder_blocks = 1\n"
                   "ff_size = 64\nmax_seq = 32\nsteps = 2\nbatch_size = 4\n"
                   "warmup_steps = 2  # comment\n")
    out = tmp_path / "ck"
    assert cli.main(["train", "--config", str(cfg), "--data", str(workdir["corpus"]),
                     "--tokenizer", str(workdir["tok"]), "--vocab", str(workdir["vocab"]),
                     "--checkpoint-dir", str(out)]) == 0
    ck = load_checkpoint(out / "final.bin")
    assert ck.model_config.d_model == 32 and ck.step == 2

    bad = tmp_path / "bad.cfg"
    bad.write_text("d_model = 32\nflux_capacitance = 9\n")
    code = cli.main(["train", "--config", str(bad), "--data", str(workdir["corpus"]),
                     "--tokenizer", str(workdir["tok"]), "--vocab", str(workdir["vocab"]),
                     "--checkpoint-dir", str(out)])
    assert code == 1
    assert "flux_capacitance" in capsys.readouterr().err


def test_checkpoint_artifact_mismatch_rejected(workdir, tmp_path, capsys):
    # tokenizer with a different vocab size than the checkpoint was trained on
    other_tok = tmp_path / "tok.tsv"
    assert cli.main(["train-tokenizer", "--input", str(workdir["corpus"]),
                     "--vocab-size", "80", "--out", str(other_tok)]) == 0
    code = cli.main(["generate", "--checkpoint", str(workdir["final"]),
                     "--tokenizer", str(other_tok), "--vocab", str(workdir["vocab"]),
                     "--title", "the probe", "--year", "1996"])
    assert code == 2
    assert "do not match" in capsys.readouterr().err


# --- exit codes and argument handling ----------------------------------------------

def test_usage_errors_exit_one(capsys):
    assert cli.main([]) == 1
    assert cli.main(["no-such-command"]) == 1
    assert cli.main(["train-tokenizer"]) == 1  # missing required flags
    assert cli.main(["train", "--config", "toy"]) == 1
    capsys.readouterr()


def test_missing_input_exits_two(tmp_path, capsys):
    code = cli.main(["train-tokenizer", "--input", str(tmp_path / "nope.jsonl"),
                     "--out", str(tmp_path / "t.tsv")])
    assert code == 2
    assert "data error" in capsys.readouterr().err


def test_generate_needs_prompt_source(workdir, capsys):
    code = cli.main(["generate", "--checkpoint", str(workdir["final"]),
                     "--tokenizer", str(workdir["tok"]), "--vocab", str(workdir["vocab"])])
    assert code == 1
    assert "prompts-file" in capsys.readouterr().err


def test_generate_year_out_of_range(workdir, capsys):
    code = cli.main(["generate", "--checkpoint", str(workdir["final"]),
                     "--tokenizer", str(workdir["tok"]), "--vocab", str(workdir["vocab"]),
                     "--title", "the probe", "--year", "1901"])
    assert code == 2
    assert "year 1901" in capsys.readouterr().err


def test_unknown_preset_exits_one(workdir, capsys):
    code = cli.main(["train", "--config", "gigantic", "--data", str(workdir["corpus"]),
                     "--tokenizer", str(workdir["tok"]), "--vocab", str(workdir["vocab"]),
                     "--checkpoint-dir", "/tmp/x"])
    assert code == 1
    capsys.readouterr()


def test_declared_defaults():
    parser = cli._build_parser()
    args = parser.parse_args(["train-tokenizer", "--input", "a", "--out", "b"])
    assert args.vocab_size == 16000
    args = parser.parse_args(["build-vocab", "--input", "a", "--out", "b"])
    assert args.min_count == 10
    args = parser.parse_args(["generate", "--checkpoint", "c", "--tokenizer", "t",
                              "--vocab", "v"])
    assert args.n == 256 and args.temperature == 1.0 and args.seed == 0


def test_module_entrypoint_help():
    proc = subprocess.run([sys.executable, "-m", "condlm", "--help"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    for cmd in ("train-tokenizer", "build-vocab", "build-df", "train",
                "generate", "evaluate"):
        assert cmd in proc.stdout
