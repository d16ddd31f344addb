#!/usr/bin/env python3
"""Smoke test for the eqfold_py extension module.

Builds nothing itself: run `cargo build -p eqfold-py --release` first, then
`python3 python/smoke_test.py`. The script locates the compiled cdylib,
exposes it under the importable name, and drives the full pipeline on a
coarse grid: baseline, quotient probe, branch trace, fold refinement and
the cross-checks between the continuation and quotient routes.
"""

import math
import pathlib
import shutil
import sys
import sysconfig
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        ROOT / "target" / "release" / "libeqfold_py.so",
        ROOT / "target" / "debug" / "libeqfold_py.so",
    ]
    lib = next((c for c in candidates if c.exists()), None)
    if lib is None:
        sys.exit("build the extension first: cargo build -p eqfold-py --release")
    tmp = tempfile.mkdtemp(prefix="eqfold_py_")
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy2(lib, pathlib.Path(tmp) / f"eqfold_py{suffix}")
    sys.path.insert(0, tmp)
    import eqfold_py

    return eqfold_py


def main():
    eqfold_py = load_module()
    print(f"loaded eqfold_py {eqfold_py.__version__}")

    # mesh sanity: first stencil eigenvalue has a closed form
    grid = eqfold_py.Grid(1, [1.0], [63])
    assert grid.n_nodes == 63
    h = grid.spacing[0]
    expect = 2.0 * (1.0 - math.cos(math.pi * h)) / (h * h)
    assert abs(grid.stencil_lambda1() - expect) < 1e-10
    d = grid.boundary_distance()
    assert abs(grid.integrate(d) - 0.25) < 1e-12
    print("grid: PASS")

    # baseline: positive solution of -u'' = u^(1/2), nonnegative lambda1
    problem = eqfold_py.Problem.scalar_power(grid, 0.5, 3.0, 1.0, 1.0)
    base = problem.baseline()
    w = base["state"]
    assert min(w[0]) > 0.0
    assert base["lambda1"] > -1e-8
    assert base["delta_bar"] > 0.0
    assert problem.residual_norm(w, 0.0) < 1e-11
    print(f"baseline: PASS (lambda1 = {base['lambda1']:.6f})")

    # extended quotient: R(w, w) = 0 at the baseline, probe certifies it
    value, num, den = problem.rayleigh(w, w)
    assert abs(value) < 1e-4, value
    probe = problem.inner_inf_probe(w, trials=30)
    assert probe["kind"] == "constant", probe
    assert abs(probe["value"]) < 1e-4
    # a perturbed state is no solution: the quotient dives to -infinity
    w_bad = [[v + 0.3 * dv for v, dv in zip(w[0], d)]]
    probe_bad = problem.inner_inf_probe(w_bad, trials=5)
    assert probe_bad["kind"] == "unbounded-below", probe_bad
    assert probe_bad["certificate_values"][-1] <= -1e6
    print("quotient probe: PASS (constant on the solution, unbounded off it)")

    # branch trace: single fold, unstable upper branch
    branch = problem.trace(arclength_budget=14.0)
    assert branch.n_points > 10
    brackets = branch.fold_brackets()
    assert len(brackets) == 1, brackets
    assert branch.stability[0] in ("asymptotically_stable", "marginal")
    assert branch.lambda1s[-1] < 0.0
    print(f"trace: PASS ({branch.n_points} points, fold bracket {brackets[0]})")

    # fold pipeline with both routes and the minimax estimate
    fold = problem.fold(arclength_budget=14.0, probe_trials=20)
    ls = fold["lambda_star"]
    assert ls > 0.0
    assert fold["residual_f"] <= 1e-10
    assert fold["residual_fv"] <= 1e-8
    assert abs(fold["lambda_star_bisection"] - ls) <= 1e-6 * ls
    assert fold["lambda_s_estimate"] <= ls + 1e-9 * ls
    assert fold["lambda_as_estimate"] <= fold["lambda_s_estimate"] + 1e-12
    assert abs(fold["lambda1_sym"]) <= 1e-6 * grid.stencil_lambda1()
    # barrier: the fold state dominates the baseline
    ok, margin = problem.comparison_check(fold["state"], w)
    assert ok, margin
    print(
        f"fold: PASS (lambda* = {ls:.6f}, bisection gap "
        f"{abs(fold['lambda_star_bisection'] - ls):.3e}, "
        f"minimax gap {ls - fold['lambda_s_estimate']:.3e})"
    )

    # symmetric two-component system reduces to the scalar problem
    coupled = eqfold_py.Problem.power_coupled(grid, 2, 0.5, 3.0, 1.0, b_lin=0.0, b=1.0)
    fold2 = coupled.fold(arclength_budget=14.0, probe_trials=10)
    u1, u2 = fold2["state"]
    assert max(abs(a - b) for a, b in zip(u1, u2)) <= 1e-8
    reduction = eqfold_py.Problem.scalar_power(grid, 0.5, 3.0, 1.0, 2.0)
    fold_red = reduction.fold(arclength_budget=14.0, probe_trials=10)
    rel = abs(fold2["lambda_star"] - fold_red["lambda_star"]) / fold_red["lambda_star"]
    assert rel <= 1e-6, rel
    print(f"coupled system: PASS (diagonal fold matches scalar reduction, rel {rel:.2e})")

    print("smoke test: ALL PASS")


if __name__ == "__main__":
    main()
