"""End-to-end checks of the rfr_cli executable: outputs and exit codes."""
import os
import random
import subprocess
import sys
import tempfile
from pathlib import Path

CLI = sys.argv[1]
failures = []


def run(*args, env=None, cwd=None):
    full_env = dict(os.environ)
    full_env.pop("RFR_SEED", None)
    full_env.update(env or {})
    return subprocess.run([CLI, *args], capture_output=True, text=False, env=full_env, cwd=cwd)


def check(ok, what):
    print(("ok   " if ok else "FAIL ") + what)
    if not ok:
        failures.append(what)


def write_pnm(path, magic, w, h, data):
    path.write_bytes(f"{magic}\n{w} {h}\n255\n".encode() + bytes(data))


def pgm_values(path):
    raw = path.read_bytes()
    parts = raw.split(b"\n", 3)
    return parts[3]


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    rng = random.Random(7)
    side = 32
    write_pnm(tmp / "img.ppm", "P6", side, side, [rng.randrange(256) for _ in range(3 * side * side)])
    write_pnm(tmp / "white.pgm", "P5", side, side, [255] * side * side)
    hole = [0 if 8 <= y < 24 and 8 <= x < 24 else 255 for y in range(side) for x in range(side)]
    write_pnm(tmp / "hole.pgm", "P5", side, side, hole)
    micro = ["--channel-scale", "8", "--seed", "3"]

    r = run("param-count")
    check(r.returncode == 0 and b"total 24822468" in r.stdout, "param-count reports 24822468")
    r = run("param-count", "--no-attention")
    check(b"total 24297667" in r.stdout, "param-count without attention reports 24297667")

    r = run("inpaint", str(tmp / "img.ppm"), str(tmp / "white.pgm"), *micro, "--out", str(tmp / "full"))
    check(r.returncode == 0, "inpaint with a full mask exits 0")
    composite = (tmp / "full" / "composite.ppm").read_bytes()
    check(composite == (tmp / "img.ppm").read_bytes(), "full-white mask leaves the image bit-identical")

    for run_dir in ("a", "b"):
        r = run("inpaint", str(tmp / "img.ppm"), str(tmp / "hole.pgm"), *micro, "--iter-num", "6",
                "--dump-recurrence", "--out", str(tmp / run_dir))
        check(r.returncode == 0, f"inpaint run {run_dir} exits 0")
    same = all((tmp / "a" / f).read_bytes() == (tmp / "b" / f).read_bytes()
               for f in ("composite.ppm", "reconstructed.ppm"))
    check(same, "identical seeds give bit-identical output files")
    dumps = sorted((tmp / "a").glob("mask_rec*.pgm"))
    check(len(dumps) == 6, f"--dump-recurrence writes 6 mask images (found {len(dumps)})")
    whites = [sum(pgm_values(p)) for p in sorted(dumps, key=lambda p: int(p.stem[8:]))]
    check(all(a <= b for a, b in zip(whites, whites[1:])), "recurrence masks get monotonically whiter")

    r = run("metrics", str(tmp / "img.ppm"), str(tmp / "img.ppm"))
    check(r.returncode == 0 and b"ssim=1.0000" in r.stdout and b"mean_l1=0" in r.stdout,
          "metrics of an image against itself")

    cfg = tmp / "train.cfg"
    cfg.write_text("resolution = 32\nchannel_scale = 8\niter_num = 2\ndataset_size = 4\n"
                   "batch_size = 2\nsteps_main = 2\nsteps_finetune = 1\n")
    r = run("train", "--config", str(cfg), "--out", str(tmp / "train"))
    history = (tmp / "train" / "history.csv").read_text().splitlines()
    check(r.returncode == 0 and len(history) == 4 and history[0] == "step,total,hole,valid,perceptual,style",
          "train writes a 3-step history")
    r = run("inpaint", str(tmp / "img.ppm"), str(tmp / "hole.pgm"), "--config", str(cfg), "--weights",
            str(tmp / "train" / "weights.rfrw"), "--out", str(tmp / "trained"))
    check(r.returncode == 0, "inpaint loads trained weights")

    r = run("param-count", env={"RFR_SEED": "41"})
    check(b"seed = 41" in r.stderr, "RFR_SEED supplies the seed")
    r = run("param-count", "--seed", "5", env={"RFR_SEED": "41"})
    check(b"seed = 5" in r.stderr, "--seed overrides RFR_SEED")

    r = run("inpaint", str(tmp / "missing.ppm"), str(tmp / "hole.pgm"))
    check(r.returncode == 3, f"missing input file exits 3 (got {r.returncode})")
    (tmp / "bad.ppm").write_bytes(b"P6\n2 2\n255\n\x00")
    r = run("inpaint", str(tmp / "bad.ppm"), str(tmp / "hole.pgm"))
    check(r.returncode == 3, f"truncated image exits 3 (got {r.returncode})")
    write_pnm(tmp / "small.pgm", "P5", 16, 16, [255] * 256)
    r = run("inpaint", str(tmp / "img.ppm"), str(tmp / "small.pgm"))
    check(r.returncode == 2, f"mask/image size mismatch exits 2 (got {r.returncode})")
    write_pnm(tmp / "odd.ppm", "P6", 24, 24, [0] * 3 * 24 * 24)
    write_pnm(tmp / "odd.pgm", "P5", 24, 24, [255] * 24 * 24)
    r = run("inpaint", str(tmp / "odd.ppm"), str(tmp / "odd.pgm"), *micro)
    check(r.returncode == 2, f"indivisible resolution exits 2 (got {r.returncode})")
    r = run("param-count", "--merge-mode", "max")
    check(r.returncode == 2, f"unknown merge mode exits 2 (got {r.returncode})")
    (tmp / "bad.cfg").write_text("iter_num = 6\nbogus = 1\n")
    r = run("param-count", "--config", str(tmp / "bad.cfg"))
    check(r.returncode == 2 and b"bad.cfg:2" in r.stderr, "unknown config key exits 2 naming the line")

if failures:
    print(f"{len(failures)} CLI checks failed")
    sys.exit(1)
print("all CLI checks passed")
