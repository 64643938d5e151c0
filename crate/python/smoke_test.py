#!/usr/bin/env python3
"""Builds the fracsurf_py extension module and exercises it end to end.

Run from the repository root:  python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_module(dest: Path) -> None:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "fracsurf-py"],
        cwd=ROOT,
        check=True,
    )
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    built = ROOT / "target" / "release" / "libfracsurf_py.so"
    if not built.is_file():  # e.g. macOS
        built = ROOT / "target" / "release" / "libfracsurf_py.dylib"
    shutil.copy(built, dest / f"fracsurf_py{suffix}")


def approx(a: float, b: float, rel: float) -> bool:
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def main() -> int:
    workdir = Path(tempfile.mkdtemp(prefix="fracsurf_smoke_"))
    build_module(workdir)
    sys.path.insert(0, str(workdir))
    import fracsurf_py as fs

    failures = []

    def check(name: str, ok: bool, detail: str = "") -> None:
        print(f"  {name}: {'ok' if ok else 'FAIL'} {detail}")
        if not ok:
            failures.append(name)

    # Mesh plumbing: a 64-gon inscribed in the unit circle.
    mesh = fs.Mesh.builtin("circle-polygon", 64)
    perimeter = 64 * 2 * math.sin(math.pi / 64)
    check("mesh measure", approx(mesh.measure, perimeter, 1e-12),
          f"{mesh.measure} vs {perimeter}")
    check("mesh dims", mesh.intrinsic_dim == 1 and mesh.num_cells == 64)

    # Norms: a constant has zero seminorm and lp^p equal to the arc length.
    region = mesh.angle_range(0.0, math.pi)
    ones = [1.0] * mesh.num_vertices
    lp, semi = fs.norms(mesh, region, ones, s=0.5)
    check("constant lp", approx(lp, region.measure, 1e-12), f"{lp}")
    check("constant seminorm", semi <= 1e-12, f"{semi}")

    # Quadrature vs the brute-force reference on a nontrivial field.
    x = mesh.coordinate_field("x")
    lp_q, semi_q = fs.norms(mesh, region, x, s=0.5)
    lp_o, semi_o = fs.reference_norms(mesh, region, x, s=0.5, resolution=1024)
    check("lp vs reference", approx(lp_q, lp_o, 1e-6), f"{lp_q} vs {lp_o}")
    check("seminorm vs reference", approx(semi_q, semi_o, 0.02),
          f"{semi_q} vs {semi_o}")

    # Extension: identity on the region, size-explicit ratio finite.
    out = fs.extend_field(mesh, mesh.angle_range(-1.0, 1.0), x, s=0.5,
                          compute_norms=True)
    check("extension identity", out["agreement_residual"] <= 1e-8,
          f"residual {out['agreement_residual']}")
    check("bound ratio", out["r"] > 0 and math.isfinite(out["r"]),
          f"r {out['r']}, c_omega {out['c_omega']}")

    # Harness parity: the same config text the CLI takes.
    passed, summary, _files = fs.run_config(
        """
study = "norms"
s = 0.5
p = 2.0
schedule = [1.0]
[mesh]
builtin = "circle-polygon"
resolution = 64
[region]
kind = "angle-range"
start = 0.0
end = 2.0
""")
    check("config run", passed, "; ".join(summary))

    # Surface path: cap on an icosphere.
    ico = fs.Mesh.builtin("icosphere", 1)
    cap = ico.cap((0.0, 0.0, 1.0), 1.0)
    z = ico.coordinate_field("z")
    lp_s, semi_s = fs.norms(ico, cap, z, s=0.5)
    check("surface norms", lp_s > 0 and semi_s > 0, f"{lp_s}, {semi_s}")

    print("smoke test:", "PASS" if not failures else f"FAIL ({failures})")
    return 0 if not failures else 1


if __name__ == "__main__":
    sys.exit(main())
