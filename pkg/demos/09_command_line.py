"""
The same pipeline from the shell
================================

Every stage writes its artifacts into one run directory, next to a
``config.resolved.json`` that replays the run exactly. This script drives
the ``gmia`` command through ``subprocess`` so it can be read top to bottom.
"""

# %%
import subprocess
import sys
import tempfile
from pathlib import Path

run = Path(tempfile.mkdtemp()) / "run"
small = ["--set", "seed=11", "--set", "data.seed=11", "--set", "protocol.n_repeats=10", "--output", str(run)]


def gmia(*args):
    cmd = [sys.executable, "-m", "gmia", *args]
    print("$ gmia", " ".join(args[:1]), "...")
    out = subprocess.run(cmd, capture_output=True, text=True, check=True)
    print(out.stdout.strip())


# %%
gmia("train-refs", *small)
gmia("select-targets", *small)
print((run / "verdicts.csv").read_text().splitlines()[:3])

# %%
gmia("attack", "--kind", "direct", *small)
print((run / "attack-direct.csv").read_text().splitlines()[:3])

# %%
gmia("evaluate", *small)
print(sorted(p.name for p in (run / "evaluate").iterdir()))
