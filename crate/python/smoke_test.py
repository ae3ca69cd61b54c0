#!/usr/bin/env python3
"""Smoke test for the tdlab_py extension module.

Builds the extension if needed, imports it from the cargo target directory,
and checks the bound surface end to end: instance handles, an experiment run
with file emission, and the rate fitter.
"""

import csv
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
LIB = REPO / "target" / "debug" / "libtdlab_py.so"


def load_module():
    if not LIB.exists():
        subprocess.run(
            ["cargo", "build", "-p", "tdlab-py"], cwd=REPO, check=True
        )
    staging = Path(tempfile.mkdtemp(prefix="tdlab-py-"))
    shutil.copy2(LIB, staging / "tdlab_py.so")
    sys.path.insert(0, str(staging))
    import tdlab_py

    return tdlab_py


def approx(actual, expected, tol=1e-12):
    assert abs(actual - expected) <= tol, f"{actual} != {expected} (tol {tol})"


def check_instances(tdlab_py):
    mm = tdlab_py.Instance.minimax()
    theta = mm.theta_star
    for got, want in zip(
        theta,
        (0.1773795882044593, 0.17976054784166962, 1.0714299319769356),
    ):
        approx(got, want)
    approx(sum(mm.mu), 1.0)
    approx(mm.mu[0], 0.25)
    approx(mm.mu[2], 0.0625)
    approx(mm.rho_max, 1.0)
    lambda1, lambda2, lambda_sigma, kappa_tilde = mm.constants
    approx(lambda2, 0.25)
    approx(lambda_sigma, 4.0)
    approx(kappa_tilde, 2.0)
    assert 0 < lambda1 < lambda2
    assert mm.value_optimum is None
    sigma = mm.sigma
    assert len(sigma) == 3 and len(sigma[0]) == 3
    approx(sigma[0][0], 0.25)
    approx(sigma[2][2], 0.5)

    baird = tdlab_py.Instance.baird()
    assert baird.theta_star is None and baird.constants is None
    approx(baird.rho_max, 7.0)
    for mass in baird.mu:
        approx(mass, 1.0 / 7.0)
    for v in baird.value_optimum:
        approx(v, 0.0)
    assert "rho_max = 7" in repr(baird)
    print("instances: ok")


def check_run_and_emission(tdlab_py):
    out_dir = Path(tempfile.mkdtemp(prefix="tdlab-run-"))
    config = f"""
instance = minimax
n_states = 10
feature_dim = 3
gamma = 0.2
epsilon = 0.01
algorithm = averaged_td
stepsize = fixed
eta = 0.01
theta0 = fixed_point
steps = 2000
trials = 8
seed = 7
checkpoints = 10
out_dir = {out_dir}
"""
    result = tdlab_py.run(config, workers=2, out_dir=str(out_dir))
    assert len(result.steps) == 10 and result.steps[-1] == 2000
    assert all(d == 0 for d in result.diverged)
    assert all(lo <= hi for lo, hi in zip(result.lo95, result.hi95))
    assert "resolved_eta = 0.01" in result.manifest

    with open(out_dir / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["step"]) for r in rows] == list(result.steps)
    for row, mean in zip(rows, result.mean):
        assert float(row["mean"]) == mean, "emitted CSV drifted from the in-memory summary"
    assert (out_dir / "trace.csv").exists() and (out_dir / "manifest.txt").exists()

    again = tdlab_py.run(config, workers=1)
    assert list(again.mean) == list(result.mean), "worker count changed the results"

    try:
        tdlab_py.run("steps = 5\nsteps = 6\n")
    except ValueError:
        pass
    else:
        raise AssertionError("duplicate config key was accepted")
    print("run + emission: ok")


def check_rate_and_presets(tdlab_py):
    steps = [10**k for k in range(1, 7)]
    means = [0.5 / math.sqrt(t) for t in steps]
    slope, intercept, r2, points = tdlab_py.rate(steps, means, 10, 10**6)
    approx(slope, -0.5, 1e-9)
    assert points == 6 and r2 > 0.999999

    for name in ("minimax-fig1", "baird-fig3"):
        text = tdlab_py.preset_text(name)
        assert "algorithm" in text and "out_dir" in text
    try:
        tdlab_py.preset_text("nope")
    except ValueError as err:
        assert "minimax-fig1" in str(err)
    else:
        raise AssertionError("unknown preset was accepted")
    print("rate + presets: ok")


def main():
    tdlab_py = load_module()
    check_instances(tdlab_py)
    check_run_and_emission(tdlab_py)
    check_rate_and_presets(tdlab_py)
    print("OK")


if __name__ == "__main__":
    main()
