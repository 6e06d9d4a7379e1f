#!/usr/bin/env python3
"""Run the whole pipeline on the built-in eight-document toy corpus.

Writes every artifact the CLI knows how to produce into a work directory,
then prints the evaluation report. With the default 2000 steps the model
memorizes the corpus and greedy decoding reproduces the abstracts; pass a
smaller --steps for a quick smoke run.

    python3 scripts/toy_pipeline.py --workdir toy_run
"""

import argparse
import json
import sys
from pathlib import Path

from condlm import toydata
from condlm.cli import main


def run(argv):
    print("$ condlm " + " ".join(argv))
    code = main(argv)
    if code != 0:
        sys.exit(code)


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--workdir", default="toy_run", help="artifact directory")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--temperature", type=float, default=0.0,
                   help="sampling temperature for generation (0 = greedy)")
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args()


def main_script():
    args = parse_args()
    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)

    corpus = work / "corpus.jsonl"
    toydata.write_jsonl(toydata.memorization_documents(), corpus)

    tok = work / "tokenizer.tsv"
    vocab = work / "vocab"
    df = work / "df.tsv"
    ckpts = work / "checkpoints"
    gen = work / "generations.jsonl"
    report = work / "report.json"

    run(["train-tokenizer", "--input", str(corpus), "--vocab-size", "160",
         "--seed", str(args.seed), "--out", str(tok)])
    run(["build-vocab", "--input", str(corpus), "--min-count", "1",
         "--out", str(vocab)])
    run(["build-df", "--input", str(corpus), "--out", str(df)])
    run(["train", "--config", "toy", "--data", str(corpus),
         "--tokenizer", str(tok), "--vocab", str(vocab),
         "--checkpoint-dir", str(ckpts), "--steps", str(args.steps),
         "--seed", str(args.seed)])
    run(["generate", "--checkpoint", str(ckpts / "final.bin"),
         "--tokenizer", str(tok), "--vocab", str(vocab),
         "--prompts-file", str(corpus), "--n", "48",
         "--temperature", str(args.temperature), "--seed", str(args.seed),
         "--out", str(gen)])
    run(["evaluate", "--generations", str(gen), "--references", str(corpus),
         "--df", str(df), "--out", str(report)])

    print("\n--- generations ---")
    for line in gen.read_text().splitlines():
        row = json.loads(line)
        print(f"{row['id']}: {row['generated']}")
    print(f"\nartifacts in {work}/ (full report: {report})")


if __name__ == "__main__":
    main_script()
