#!/usr/bin/env python3
"""Build the six-task instruction corpus from the fixture world, then
inspect its stats, manifest, and validation."""

import json
import tempfile
from pathlib import Path

from litmine.corpus import corpus_stats, validate_corpus
from litmine.pipeline import run_fixture_pipeline

with tempfile.TemporaryDirectory() as tmp:
    result = run_fixture_pipeline("tests/fixtures", tmp)
    corpus_dir = Path(tmp) / "corpus"

    print("== pipeline summary ==")
    print(json.dumps(result.summary, indent=2, sort_keys=True))

    print("\n== per-task, per-split datum counts ==")
    print(json.dumps(corpus_stats(corpus_dir), indent=2, sort_keys=True))

    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    print("\n== manifest highlights ==")
    print(f"  split seed: {manifest['seed']}")
    print(f"  recall filter threshold: {manifest['recall_filter_threshold']}")
    print(f"  synthetic search queries: {manifest['search']['generated']} generated,"
          f" {manifest['search']['retained']} retained,"
          f" mean recall {manifest['search']['mean_recall']:.2f}")
    print(f"  screening data: {manifest['screening']['generated']} generated,"
          f" {manifest['screening']['filtered_negative_eligible']} filtered"
          " (eligible but negative analysis)")

    problems = validate_corpus(corpus_dir)
    print(f"\nvalidation problems: {problems or 'none'}")

    sample = (corpus_dir / "search" / "train.jsonl").read_text().splitlines()[0]
    datum = json.loads(sample)
    print("\n== one search instruction datum ==")
    print(f"  instruction: {datum['instruction'][:70]}...")
    print(f"  input:       {datum['input'].splitlines()[0]} ...")
    print(f"  output:      {datum['output'][:70]}...")
