"""
A small batch run from the command line
=======================================

The same steps as the ``wiener-aec`` command: render scenarios to WAV,
process them and collect a report. Everything goes into ``./batch``.
"""

import json
from pathlib import Path

from wiener_aec.cli import main

root = Path("batch")

# three double-talk scenarios at each of three SER values
main(["simulate", "--out-dir", str(root), "--seed", "5", "--n-scenarios", "3",
      "--duration", "2", "--ser-db", "-10", "0", "10"])

for d in sorted(root.glob("scenario_*")):
    main(["process", "--far", str(d / "far.wav"), "--mic", str(d / "mic.wav"),
          "--out", str(d / "enhanced.wav"), "--m", "20"])

main(["evaluate", "--root", str(root), "--out-dir", str(root / "report")])

summary = json.loads((root / "report" / "summary.json").read_text())
for condition, stats in summary.items():
    print(f"{condition:8s} n={stats['count']}  mean SDR {stats['sdr_db']['mean']:.2f} dB")
