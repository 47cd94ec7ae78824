#!/usr/bin/env python3
"""Smoke test for the orbitctl_py extension module.

Build the shared library first, then run this script:

    cargo build --release -p orbitctl-py --features extension-module
    python3 python/smoke_test.py
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        ROOT / "target" / "release" / "liborbitctl_py.so",
        ROOT / "target" / "debug" / "liborbitctl_py.so",
    ]
    src = next((p for p in candidates if p.exists()), None)
    if src is None:
        sys.exit(
            "liborbitctl_py.so not found; run "
            "`cargo build --release -p orbitctl-py --features extension-module`"
        )
    tmp = Path(tempfile.mkdtemp(prefix="orbitctl-py-"))
    shutil.copy2(src, tmp / "orbitctl_py.so")
    sys.path.insert(0, str(tmp))
    import orbitctl_py

    return orbitctl_py


def main():
    m = load_module()

    # full-rank pair on R^3: bracket closes the third direction
    sys3 = m.System.builtin("heisenberg")
    assert sys3.generator_count == 2 and sys3.dim == 3, repr(sys3)
    larc = sys3.larc([0.1, -0.2, 0.3], depth=1)
    assert larc["achieved_dim"] == 3 and larc["larc_holds"], larc
    print("larc:", larc["achieved_dim"], larc["basis_words"])

    # flowing a schedule and back returns to the start
    start = [0.5, 0.25, -0.5]
    there = sys3.flow([(0, 0.3), (1, 0.4)], start)
    back = sys3.flow([(1, -0.4), (0, -0.3)], there)
    assert max(abs(a - b) for a, b in zip(start, back)) < 1e-9, back
    print("flow round trip ok")

    general = sys3.general([0.0, 0.0, 0.0], seed=1)
    assert general["achieved_rank"] == 3, general
    print("general schedule rank:", general["achieved_rank"])

    # inline config: a single rotation field on the flat torus
    torus = m.System.from_config(
        json.dumps(
            {
                "manifold": {"kind": "torus", "periods": [2 * math.pi, 2 * math.pi]},
                "generators": [
                    {"components": ["0", "1"]},
                    {"components": ["1", "0"]},
                ],
            }
        )
    )
    orbit = torus.orbit(0, [1.0, 2.0], tmax=10.0)
    assert orbit is not None and abs(orbit["period"] - 2 * math.pi) < 1e-6, orbit
    print("torus orbit period:", orbit["period"])

    cloud = torus.reach([0.0, 0.0], horizon=16.0, samples=200, seed=4)
    frac = torus.coverage(cloud, 4)
    assert frac > 0.9, frac
    print("torus coverage:", frac)

    ample = torus.ample([0.0, 0.0])
    assert not ample["positively_spanning"], ample
    print("one-sided pair correctly rejected:", ample["certificate"]["kind"])

    # the two-level eigenvalue test on the rotation-mix fixture
    a = [0.5, 0, -0.5, 0, -0.5, -0.5, 0.5, 0.5, 0]
    b = [[0.5, 0, 0.5, 0, 0.5, -0.5, -0.5, 0.5, 0]]
    verdict = m.theorem_b(a, b, [1.0], [-1.0])
    assert verdict["controllable_sufficient"], verdict
    assert abs(verdict["product"] + 1.0) < 1e-9, verdict
    print("eigenvalue product:", verdict["product"])

    sphere = m.project_sphere(a, b, [[1.0], [-1.0]])
    sphere_larc = sphere.larc([0.0, 1.0, 0.0])
    assert sphere_larc["larc_holds"] and sphere_larc["ambient_dim"] == 2, sphere_larc
    print("projected sphere system full rank on the tangent plane")

    report = m.verify_example1()
    assert report["pass"], report
    print("staircase bundle pass, coverage", report["covered_fraction"])

    print("smoke test ok")


if __name__ == "__main__":
    main()
