#!/usr/bin/env python3
"""Smoke test for the apgeom_py extension module.

Build the module first, then run this script:

    cargo build -p apgeom-py --release
    python3 python/smoke_test.py
"""

import importlib.util
import json
import math
import pathlib
import sys


def load_module():
    root = pathlib.Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libapgeom_py.so", "apgeom_py.so", "libapgeom_py.dylib")
    ]
    for path in candidates:
        if path.exists():
            spec = importlib.util.spec_from_file_location("apgeom_py", path)
            mod = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(mod)
            return mod
    sys.exit("extension module not found; run `cargo build -p apgeom-py --release` first")


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    ap = load_module()

    names = ap.builtin_names()
    assert "heisenberg_flow" in names and len(names) == 8, names

    # curvature specializations of three catalog geometries
    sphere = ap.Geometry.builtin("sphere_theta_foliation")
    approx(sphere.mixed_scalar_curvature([1.1, 0.4]), 1.0)
    warped = ap.Geometry.builtin("warped_line")
    approx(warped.mixed_scalar_curvature([0.3, 0.7]), -1.0)
    heis = ap.Geometry.builtin("heisenberg_flow")
    approx(heis.mixed_scalar_curvature([0.2, -0.3, 0.5]), 0.5)
    scalars = dict(heis.extrinsic_scalars([0.2, -0.3, 0.5], "perp"))
    approx(scalars["t_norm2"], 0.5)

    # geometry shape and JSON round-trip
    assert heis.dim == 3 and heis.n == 1 and heis.p == 2
    cfg = json.loads(heis.to_json())
    heis2 = ap.Geometry.from_json(json.dumps(cfg))
    approx(heis2.mixed_scalar_curvature([0.2, -0.3, 0.5]), 0.5)

    # identity suite
    checks = heis.identity_checks(points=60, tol=1e-8, seed=0)
    assert checks and all(ok for (_, _, ok) in checks), [c for c in checks if not c[2]]

    # EL residual of the critical metric, with its internal cross-check
    residual, details = heis.el_residual([0.1, 0.2, 0.3], "mix-perp")
    assert residual < 1e-9, residual
    assert dict(details)["raw_gap"] < 1e-9, details

    # action quadrature: meridian strip of the round sphere
    j = sphere.action([(math.pi / 4, 3 * math.pi / 4), (0.0, 1.0)], order=12)
    approx(j, math.sqrt(2.0), 1e-6)

    # codimension-one data of the calibrated ansatz family
    biregular = ap.Geometry.builtin("codim1_biregular")
    eps, taus, sigmas, ric_n = biregular.codim1_data([0.05, 0.1, -0.1])
    approx(eps, 1.0)
    approx(taus[0], 1.0, 1e-8)
    approx(taus[1], 0.5, 1e-8)

    # closed forms and the expression language
    approx(ap.tau1_closed_form(-1.0, 0.0, 1.25), -math.tanh(1.25), 1e-12)
    approx(ap.fiberwise_harmonic_exponent(3, 2), 1.0)
    approx(ap.eval_expr("a*sin(x0)^2 + x1/2", [0.4, 1.0], {"a": 2.0}),
           2.0 * math.sin(0.4) ** 2 + 0.5, 1e-14)
    approx(ap.expr_derivative("a*sin(x0)^2 + x1/2", [0.4, 1.0], 0, {"a": 2.0}),
           2.0 * 2.0 * math.sin(0.4) * math.cos(0.4), 1e-14)
    assert ap.format_expr("1+x0 * 2") == "1 + x0*2"

    # error propagation surfaces as ValueError
    try:
        ap.Geometry.builtin("no_such_geometry")
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError for unknown geometry")

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
