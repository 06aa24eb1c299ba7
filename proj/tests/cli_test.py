"""End-to-end checks of the r2nn command line tool."""

import csv
import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

BIN = sys.argv[1]
failures = []


def run(*args, code=0):
    p = subprocess.run([BIN, *map(str, args)], capture_output=True, text=True)
    if p.returncode != code:
        failures.append(f"{' '.join(map(str, args))}: exit {p.returncode}, want {code}\n{p.stderr}")
    return p


def expect(cond, what):
    if not cond:
        failures.append(what)


work = Path(tempfile.mkdtemp(prefix="r2nn_cli_"))
try:
    spec = work / "spec.json"
    spec.write_text(json.dumps({
        "classes": [{"center_hz": f, "count": 3, "test_count": 1} for f in (30, 50, 70)],
        "duration_s": 0.25, "jitter_s": 0.02}))
    data = work / "data"

    # Usage errors.
    run("gen-dataset", "--out", data, "--spec", spec, code=1)
    run("no-such-command", code=1)
    run(code=1)

    run("--seed", 3, "--out", data, "gen-dataset", "--spec", spec)
    manifest = json.loads((data / "manifest.json").read_text())
    expect(len(manifest["samples"]) == 12, "manifest lists 12 samples")
    run("--seed", 3, "--out", data, "gen-dataset", "--spec", spec, code=2)
    run("--seed", 3, "--out", data, "--force", "gen-dataset", "--spec", spec)

    # Configuration errors.
    bad = work / "bad.json"
    bad.write_text('{"classes": [{"center_hz": 5000}]}')
    run("--seed", 1, "--out", work / "bad", "gen-dataset", "--spec", bad, code=2)
    run("--out", work / "x", "simulate", "--system", work / "missing.json", "--pulse-hz", 30, code=2)

    trained = work / "trained"
    run("--seed", 1, "--out", trained, "train", "--data", data, "--epochs", 2)
    for name in ("checkpoint_final.json", "system.json", "system_e96.json", "quantization.json", "metrics.csv"):
        expect((trained / name).exists(), f"train wrote {name}")
    rows = list(csv.reader((trained / "metrics.csv").open()))
    expect(len(rows) == 3, "metrics has a header and two epochs")
    run("--seed", 1, "--out", trained, "train", "--data", data, "--epochs", 2, code=2)
    run("--seed", 1, "--out", work / "lr", "train", "--data", data, "--lr", -1, code=2)
    run("--out", trained, "train", "--data", data, "--epochs", 3,
        "--resume", trained / "checkpoints" / "epoch_0002.json")
    expect(len(list(csv.reader((trained / "metrics.csv").open()))) == 4, "resume appends the third epoch")

    system = trained / "system.json"
    cls = work / "cls"
    run("--out", cls, "classify", "--system", system, "--manifest", data / "manifest.json")
    verdicts = json.loads((cls / "verdicts.json").read_text())
    expect(len(verdicts["verdicts"]) == 3, "classify reports every held-out sample")

    sim = work / "sim"
    run("--out", sim, "simulate", "--system", system, "--pulse-hz", 50, "--logic")
    for name in ("trajectory.csv", "energies.json", "logic.csv"):
        expect((sim / name).exists(), f"simulate wrote {name}")
    # A sample rate too slow for the lattice is a numeric failure.
    run("--out", work / "slow", "simulate", "--system", system, "--pulse-hz", 5, "--pulse-rate", 20, code=3)

    ac = work / "ac"
    run("--out", ac, "ac-sweep", "--system", system, "--f-start", 10, "--f-end", 90, "--step", 0.5)
    rows = list(csv.reader((ac / "transmission.csv").open()))
    expect(len(rows) == 162, f"ac grid has 161 rows, got {len(rows) - 1}")
    run("--out", work / "cell", "ac-sweep", "--cell", 1.307e-11, 3.53e-11, 1e6)
    run("--out", work / "nyq", "ac-sweep", "--system", system, "--method", "swept-sine",
        "--f-end", 100, "--rate", 150, code=2)
    fast = run("--out", work / "fast", "ac-sweep", "--system", system, "--method", "swept-sine",
               "--f-start", 20, "--f-end", 60, "--duration", 8, "--rate", 2000)
    expect("warning" in fast.stderr, "too-fast sweep warns")

    land = work / "land"
    run("--out", land, "landscape", "--system", system, "--freq", 70)
    currents = json.loads((land / "currents.json").read_text())
    expect(currents["max_kcl_error"] < 1e-9, "landscape currents satisfy KCL")

    net = work / "net"
    run("--out", net, "export-netlist", "--system", system, "--series", "E24")
    expect((net / "components.csv").exists(), "netlist written")
    run("--out", work / "net2", "export-netlist", "--system", system, "--series", "E7", code=1)
finally:
    shutil.rmtree(work, ignore_errors=True)
    for f in failures:
        print("FAIL:", f)
print(f"{len(failures)} failure(s)")
sys.exit(1 if failures else 0)
