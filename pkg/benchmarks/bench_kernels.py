"""Compare the compiled and pure-Python RK4 kernels on the same trajectories.

    python3 benchmarks/bench_kernels.py [--cycles N] [--repeat R]
"""
import argparse
import math
import timeit

import numpy as np

from paultrap.core import species
from paultrap.dynamics import DriveConfig, FieldModel, integrate
from paultrap.surface_fields import five_wire, segmented_five_wire


def cases():
    mg = species("24Mg+")
    omega = 2 * math.pi * 87e6
    quad = FieldModel.quadrupole(50.0, 50e-6, 2 * math.pi * 100e6)
    yield "quadrupole", quad, mg, np.array([1e-6, 1e-6, 0, 0, 0, 0])
    g = five_wire(40e-6)
    fm = FieldModel.planar(g, DriveConfig.from_geometry(g, 103.2, omega))
    yield "five_wire (strips)", fm, mg, np.array([1e-6, 35.64e-6, 0, 0, 0, 0])
    g = segmented_five_wire(100e-6)
    fm = FieldModel.planar(g, DriveConfig.from_geometry(g, 100.0, 2 * math.pi * 100e6))
    yield "segmented (strips + patches)", fm, mg, np.array([1e-6, 87.6e-6, 0, 0, 0, 0])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cycles", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    print(f"{'case':<30} {'python s':>10} {'cython s':>10} {'speedup':>8} {'max |dx| m':>11}")
    for name, fm, sp, s0 in cases():
        dur = args.cycles * 2 * math.pi / fm.omega_rf
        res, t = {}, {}
        for b in ("python", "cython"):
            res[b] = integrate(fm, None, sp, s0, dur, backend=b)
            t[b] = min(timeit.repeat(lambda: integrate(fm, None, sp, s0, dur, backend=b),
                                     number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(res["python"].positions - res["cython"].positions)))
        print(f"{name:<30} {t['python']:>10.4f} {t['cython']:>10.4f} "
              f"{t['python'] / t['cython']:>8.1f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
