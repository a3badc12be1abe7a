"""The whole toolchain through the command line, at toy scale.

synth -> train-zone -> train-config -> generate -> trace -> evaluate, all in
a temporary directory, with budgets small enough to finish in under a
minute.  Every call is the same `python -m urbanflows ...` a user would
type.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

CFG = """# toy run
n = 4
m = 2
p = 2
k_zone = 2
k_config = 2
zone_hidden = 8
config_hidden = 8
heads = 1
stem_channels = 2
n_cx = 2
batch_size = 8
steps_zone = 150
steps_config = 250
seed = 3
"""


def run(*args):
    cmd = [sys.executable, "-m", "urbanflows", *args]
    print("$", "urbanflows", *args)
    res = subprocess.run(cmd, capture_output=True, text=True)
    if res.returncode != 0:
        sys.exit(f"command failed:\n{res.stderr}")
    return res.stdout


with tempfile.TemporaryDirectory() as tmp:
    work = Path(tmp)
    cfg = work / "toy.cfg"
    cfg.write_text(CFG)

    run("synth", "--config", str(cfg), "--count", "160",
        "--out", str(work / "data.jsonl"))
    first = json.loads((work / "data.jsonl").read_text().splitlines()[1])
    print("  first sample: level", first["green_level"],
          "zone row 0:", first["zones"][:4])

    run("train-zone", "--config", str(cfg), "--dataset", str(work / "data.jsonl"),
        "--out-ckpt", str(work / "zone.ckpt"))
    log = (work / "zone.ckpt.log").read_text().splitlines()
    print("  zone loss:", log[2].split()[-1], "->", log[-1].split()[-1])

    run("train-config", "--config", str(cfg), "--dataset", str(work / "data.jsonl"),
        "--zone-ckpt", str(work / "zone.ckpt"),
        "--out-ckpt", str(work / "model.ckpt"))
    log = (work / "model.ckpt.log").read_text().splitlines()
    print("  joint loss:", log[2].split()[-1], "->", log[-1].split()[-1])

    run("generate", "--ckpt", str(work / "model.ckpt"), "--green-level", "3",
        "--count", "2", "--seed", "11", "--context-seed", "1",
        "--out-dir", str(work / "gen"))
    rec = json.loads((work / "gen" / "configs.jsonl").read_text().splitlines()[1])
    print("  generated zones:", rec["zones"][:4], "... total POIs:",
          sum(rec["config"]))

    run("trace", "--ckpt", str(work / "model.ckpt"), "--green-level", "3",
        "--count", "1", "--seed", "11", "--context-seed", "1",
        "--out-dir", str(work / "tr"))
    steps = (work / "tr" / "gen000.trace.jsonl").read_text().splitlines()
    frames = sorted((work / "tr").glob("gen000.step*.ppm"))
    print(f"  trace: {len(steps) - 1} steps, {len(frames)} ppm frames")

    out = run("evaluate", "--ckpt", str(work / "model.ckpt"),
              "--dataset", str(work / "data.jsonl"),
              "--out", str(work / "report.txt"))
    print(out.strip())
    print("  report tail:")
    for line in (work / "report.txt").read_text().splitlines()[-3:]:
        print("   ", line)
