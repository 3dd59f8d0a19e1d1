"""
Comparing teacher variants
==========================

Run the whole pipeline once per unlearning method on the shipped desk-scale
config and print the comparison table.  Original and retrained models are
trained once and shared through a cache directory.
"""

import sys
import tempfile
from pathlib import Path

from fedquit.experiment import compare, parse_config, run_pipeline

root = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="fedquit-"))
config = Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"
methods = [("fedquit-logits", "0"), ("fedquit-logits", "min"), ("fedquit-softmax", "1/C"),
           ("fedquit-softmax", "0"), ("incompetent", "0"), ("natural", "0")]

reports = []
for method, v in methods:
    cfg = parse_config(config, {"unlearn.method": method, "unlearn.v": v,
                                "experiment.cache": str(root / "cache")})
    arts = run_pipeline(cfg, root / cfg.method_tag())
    reports.append(arts.out / "report.json")

###############################################################################
# Deltas are absolute gaps to the retrained model, averaged over clients
# and seeds.

rows = compare(reports, root)
print(f"{'method':22s} {'rounds':>7s} {'CE':>6s} {'test':>6s} {'forget (d)':>14s}"
      f" {'song (d)':>14s} {'yeom (d)':>14s}")
for r in rows:
    rounds = "n/c" if r["rounds_mean"] is None else f"{r['rounds_mean']:.1f}"
    ce = "n/c" if r["ce"] is None else f"{r['ce']:.1f}"
    print(f"{r['method']:22s} {rounds:>7s} {ce:>6s} {r['test_acc_mean']:6.3f}"
          f" {r['forget_acc_mean']:6.3f} ({r['delta_forget_acc_mean']:.3f})"
          f" {r['mia_song_mean']:6.3f} ({r['delta_mia_song_mean']:.3f})"
          f" {r['mia_yeom_mean']:6.3f} ({r['delta_mia_yeom_mean']:.3f})")
print("tables written to", root)
