#!/usr/bin/env python3
"""End-to-end checks of the sfl command-line tool: records, cache, errors, exit codes."""
import csv
import json
import math
import shutil
import subprocess
import sys
import time
from pathlib import Path

BINARY = Path(sys.argv[1])
WORK = Path(sys.argv[2])
EXAMPLES = Path(__file__).resolve().parents[2] / "tools" / "examples"

failures = []


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        failures.append(what)


def write_config(name, body):
    path = WORK / name
    path.write_text(json.dumps(body, indent=2))
    return path


def run(*args):
    proc = subprocess.run([str(BINARY), *map(str, args)], capture_output=True, text=True)
    lines = [l for l in proc.stdout.splitlines() if l.strip()]
    record = json.loads(lines[-1]) if lines else None
    return proc.returncode, record, lines[-1] if lines else "", proc.stderr


def reference(seed=7, **settings):
    st = {"t": 0.5, "beta": 1.0, "s": 1.0, "samples": [200, 2000]}
    st.update(settings)
    return {
        "seed": seed,
        "sets": {"x": [[0, 1, 0, 0]], "y": [[1, 0]]},
        "schedule": {"r": 1, "m": [1, 0.5, 0], "p": [1, 0.5, 0], "q": [1, 0.5, 0]},
        "settings": st,
        "output": {"dir": "runs"},
    }


def main():
    shutil.rmtree(WORK, ignore_errors=True)
    WORK.mkdir(parents=True)
    cfg = write_config("reference.json", reference())

    # coefficients
    code, rec, _, _ = run("coeffs", "--config", cfg)
    check(code == 0 and abs(rec["details"]["a"][0] - math.sqrt(0.75)) < 1e-12 and rec["details"]["a"][1] == 0.5,
          "coeffs gives a = [sqrt(0.75), 0.5]")

    # eval on the single-pair reference
    t0 = time.perf_counter()
    code, first, first_line, _ = run("eval", "--target", "psi", "--config", cfg)
    cold = time.perf_counter() - t0
    check(code == 0, "eval exits 0")
    check(abs(first["value"] - 0.109375) <= 3 * first["std_error"], "eval psi within 3 SE of 0.109375")
    for key in ("command", "config_hash", "seed", "value", "std_error", "n_outer", "runtime_s", "passed", "inputs"):
        check(key in first, f"record has key {key}")
    check(first["n_outer"] == 2000 and first["seed"] == 7, "record echoes seed and outer count")

    # cache hit returns the stored line unchanged
    t0 = time.perf_counter()
    code, _, hit_line, _ = run("eval", "--target", "psi", "--config", cfg)
    warm = time.perf_counter() - t0
    check(hit_line == first_line, "second identical run is a cache hit")
    cache_file = WORK / "runs" / "cache" / (first["config_hash"] + ".json")
    check(cache_file.exists(), "record stored under its hash")
    print(f"     cold {cold:.3f}s, warm {warm:.3f}s")

    # recompute: identical except the timing field
    code, again, _, _ = run("eval", "--target", "psi", "--config", cfg, "--no-cache", "--threads", "3")
    strip = lambda r: {k: v for k, v in r.items() if k != "runtime_s"}
    check(strip(again) == strip(first), "--no-cache rerun reproduces the record apart from runtime")
    check(json.dumps(strip(again), sort_keys=True) == json.dumps(strip(first), sort_keys=True),
          "rerun is byte-identical apart from runtime")

    # key order in the config does not change the hash, the seed does
    reordered = write_config("reordered.json", dict(reversed(list(reference().items()))))
    _, rec, _, _ = run("eval", "--target", "psi", "--config", reordered)
    check(rec["config_hash"] == first["config_hash"], "hash ignores key order")
    _, rec, _, _ = run("eval", "--target", "psi", "--config", cfg, "--seed", "8")
    check(rec["config_hash"] != first["config_hash"] and rec["seed"] == 8, "changed seed is a cache miss")

    # corrupt cache record is a miss with a warning
    cache_file.write_text("{not json\n")
    code, rec, _, err = run("eval", "--target", "psi", "--config", cfg)
    check(code == 0 and "warning" in err and rec["value"] == first["value"], "corrupt cache record is recomputed")

    # round trip of every numeric field
    out = WORK / "records.jsonl"
    run("eval", "--target", "psi1", "--config", cfg, "--out", out)
    run("tderiv", "--config", cfg, "--out", out)
    lines = out.read_text().splitlines()
    check(len(lines) == 2, "--out appends one line per run")
    for line in lines:
        rec = json.loads(line)
        check(json.loads(json.dumps(rec)) == rec and isinstance(rec["value"], float), "record round-trips")

    # invalid schedule: machine-readable error, nonzero exit
    bad = reference()
    bad["schedule"]["p"] = [1, 0.3, 0.5, 0]
    bad["schedule"]["m"] = [1, 0.5, 0.2, 0]
    bad["schedule"]["q"] = [1, 0.5, 0.2, 0]
    bad["schedule"]["r"] = 2
    code, rec, _, _ = run("validate", "--config", write_config("bad.json", bad))
    check(code != 0 and rec["passed"] is False, "validate rejects a non-monotone p")
    code, rec, _, _ = run("eval", "--target", "psi", "--config", write_config("bad.json", bad))
    check(code == 2 and rec["error"]["type"] == "schedule", "eval on an invalid schedule emits a schedule error")
    budget = reference(samples=[100000, 100000])
    code, rec, _, _ = run("eval", "--config", write_config("budget.json", budget))
    check(code == 2 and rec["error"]["type"] == "budget", "budget cap emits a budget error")
    no_seed = reference()
    del no_seed["seed"]
    code, rec, _, _ = run("eval", "--config", write_config("noseed.json", no_seed))
    check(code == 2 and rec["error"]["type"] == "config", "missing seed is a config error")

    # derivative check: exit status follows the 3 SE criterion
    small = reference(samples=[50, 300])
    code, rec, _, _ = run("grad", "--target", "psi", "--var", "p", "--level", "1", "--check-fd", "--config",
                          write_config("grad.json", small))
    check(code == 0 and rec["passed"] and abs(rec["value"] + 0.09375) < 1e-12, "grad --check-fd passes on the closed form")

    # path scan writes a plot-ready csv
    scan = {
        "seed": 3,
        "sets": {"x": [[1, 0], [0, 1]], "y": [[1, 0], [0, 1]]},
        "schedule": {"m": [1, 0.5, 0], "p": [1, 0.5, 0], "q": [1, 0.5, 0]},
        "settings": {"samples": [10, 60]},
        "solver": {"max_iter": 60},
        "path": {"grid": [0.0, 0.5, 1.0]},
        "output": {"dir": "runs"},
    }
    code, rec, _, _ = run("path-scan", "--config", write_config("scan.json", scan))
    check(code in (0, 1) and "csv" in rec["details"], "path-scan emits a record with a csv path")
    rows = list(csv.DictReader(open(rec["details"]["csv"])))
    check(len(rows) == 3 and {"t", "psi1", "psi1_se"} <= set(rows[0]), "csv has one row per t")

    # shipped examples stay runnable
    for example in sorted(EXAMPLES.glob("*.json")):
        body = json.loads(example.read_text())
        body["output"] = {"dir": str(WORK / "examples")}
        local = write_config("example_" + example.name, body)
        for name, value in body.items():
            if name == "sets":
                for k in ("x_file", "y_file"):
                    if k in value:
                        shutil.copy(EXAMPLES / value[k], WORK / value[k])
        command = ["model", "--oracle"] if "model" in body else ["eval"]
        code, rec, _, _ = run(*command, "--config", local)
        check(code == 0, f"example {example.name} runs")

    print(f"{len(failures)} failure(s)")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
