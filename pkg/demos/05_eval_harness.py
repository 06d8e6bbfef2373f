#!/usr/bin/env python3
# Build the seeded benchmark fixtures and run all three metric suites,
# comparing fused decoding against the mature-greedy baseline.

import json

from tcd.harness import run_suite
from tcd.synth import build_amber_dataset, build_mme_dataset, build_pope_dataset

pope = run_suite(build_pope_dataset(40, seed=7))
print("binary suite (yes/no questions)")
print(f"  fused    acc={pope.report['tcd']['accuracy']:.3f}  f1={pope.report['tcd']['f1']:.3f}")
print(f"  baseline acc={pope.report['baseline']['accuracy']:.3f}  "
      f"f1={pope.report['baseline']['f1']:.3f}")
print("  per-split (fused):",
      {k: round(v["accuracy"], 3) for k, v in pope.report["tcd"]["splits"].items()})

mme = run_suite(build_mme_dataset(12, seed=11))
print("\npaired perception suite")
for side in ("tcd", "baseline"):
    r = mme.report[side]
    print(f"  {side:<8} total={r['total']:.1f}  subtasks="
          + json.dumps({k: round(v, 1) for k, v in r["subtasks"].items()}))

amber = run_suite(build_amber_dataset(20, seed=13))
print("\ngenerative grounding suite")
for side in ("tcd", "baseline"):
    r = amber.report[side]
    print(f"  {side:<8} chair={r['chair']:.3f}  cover={r['cover']:.3f}  "
          f"hal_rate={r['hal_rate']:.3f}  cog={r['cog']:.3f}")

sample = pope.per_sample[0]
print("\nfirst per-sample record:")
print(json.dumps(sample, indent=2, sort_keys=True)[:400], "...")
