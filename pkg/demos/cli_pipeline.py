"""The command-line pipeline end to end, driven from Python.

Run with ``python demos/cli_pipeline.py [workdir]``; a few seconds.  The
same steps from a shell::

    ltfactor simulate --config run.yaml --out sim --seed 13
    ltfactor fit --config run.yaml --data sim/data.csv --out fit
    ltfactor postprocess --draws fit/draws.ltd --request summaries --out pp
    ltfactor postprocess --draws fit/draws.ltd --request dic --data sim/data.csv --out pp
"""

import json
import sys
import tempfile
from pathlib import Path

from ltfactor import cli

CONFIG = """\
model: {m: 3, p: 2, r: 2, s: 1, lambda_w: 0.99, lambda_sigma: 0.99}
mcmc: {burn_in: 200, draws: 400, thin: 2, rng_seed: 6}
prior: {psi_prec: {dof: 50, scale: 1000.0}}
simulate: {T: 120, delta: [1.2, -0.5], psi: 0.00001, w: 1.0, sigma2: [20.0, 1.0, 1.0]}
impulse: {horizon: 12, replicates: 2, origins: [30, 60, 90]}
"""

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ltfactor-"))
root.mkdir(parents=True, exist_ok=True)
cfg = root / "run.yaml"
cfg.write_text(CONFIG)


def run(*argv):
    print("$ ltfactor", " ".join(argv))
    code = cli.main(list(argv))
    if code != 0:
        sys.exit(f"exit code {code}")


run("simulate", "--config", str(cfg), "--out", str(root / "sim"), "--seed", "13")
data = str(root / "sim" / "data.csv")
run("fit", "--config", str(cfg), "--data", data, "--out", str(root / "fit"))
for request in cli.REQUESTS:
    run("postprocess", "--draws", str(root / "fit" / "draws.ltd"), "--request", request,
        "--data", data, "--config", str(cfg), "--out", str(root / "pp"))

report = json.loads((root / "fit" / "report.json").read_text())
print(f"\n{report['n_draws']} draws in {report['elapsed_seconds']:.1f} s")
print("DIC:", json.loads((root / "pp" / "dic.json").read_text()))
print("outputs under", root)
for path in sorted(root.rglob("*")):
    if path.is_file():
        print("  ", path.relative_to(root))
