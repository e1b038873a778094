"""Time the numba and pure-numpy RK4 kernels on the same workloads.

    python benchmarks/bench_kernels.py [--points 256 1024] [--steps 200] [--repeat 3] [--json out.json]

Each workload runs forward, variational and adjoint sweeps once per backend
to warm up (numba compiles on first call), then reports the best of
``--repeat`` timings and the speed-up of numba over numpy.  Outputs of the two
backends are compared so a fast but wrong kernel cannot pass unnoticed.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from flowlab import _kernels  # noqa: E402
from flowlab.families import ControlFamily, area_preserving_family, origin_fixed_family  # noqa: E402
from flowlab.flow import ControlSchedule, step_grid  # noqa: E402

FAMILIES = {
    "tanh_resnet_d2": lambda: ControlFamily.resnet(2, "tanh"),
    "tanh_resnet_d4": lambda: ControlFamily.resnet(4, "tanh"),
    "area_preserving": area_preserving_family,
    "origin_fixed": origin_fixed_family,
}


def _best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def bench(name, n_points, n_steps, repeat):
    fam = FAMILIES[name]()
    rng = np.random.default_rng(0)
    sch = ControlSchedule.uniform(0.5 * fam.sample_params(rng, 4), 1.0)
    kp = fam.kernel_params(sch.params)
    hs, segs = step_grid(sch.durations, sch.total_time / n_steps)
    X0 = rng.uniform(-0.5, 0.5, (n_points, fam.dimension))
    Xbar = rng.standard_normal(X0.shape)
    rows = []
    results = {}
    for backend in ("numpy", "numba"):
        k = _kernels.get_backend(backend)
        ops = {
            "forward": lambda: k.forward(*kp.args(), hs, segs, X0, 1e8, False),
            "variational": lambda: k.variational(*kp.args(), hs, segs, X0, 1e8),
        }
        _, fwd = _best(lambda: k.forward(*kp.args(), hs, segs, X0, 1e8, True), 1)
        traj = fwd[1]
        ops["adjoint"] = lambda: k.adjoint(*kp.args(), hs, segs, traj, Xbar)
        for op, fn in ops.items():
            fn()  # warm-up / compile
            t, out = _best(fn, repeat)
            results[(backend, op)] = (t, out)
    for op in ("forward", "variational", "adjoint"):
        t_np, out_np = results[("numpy", op)]
        t_nb, out_nb = results[("numba", op)]
        diff = max(float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))
                   for a, b in zip(out_np, out_nb) if np.size(a) > 0)
        rows.append({
            "family": name, "points": n_points, "steps": len(hs), "op": op,
            "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb,
            "ns_per_point_step_numba": 1e9 * t_nb / (n_points * len(hs)),
            "max_abs_diff": diff,
        })
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, nargs="+", default=[64, 1024])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--families", nargs="+", default=list(FAMILIES), choices=list(FAMILIES))
    ap.add_argument("--json", help="also write the rows to this file")
    args = ap.parse_args(argv)

    try:
        _kernels.get_backend("numba")
    except ImportError:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1

    rows = []
    hdr = f"{'family':<16} {'points':>6} {'op':<12} {'numpy [s]':>10} {'numba [s]':>10} {'speed-up':>9} {'ns/pt-step':>10} {'max diff':>9}"
    print(hdr)
    print("-" * len(hdr))
    for name in args.families:
        for n in args.points:
            for r in bench(name, n, args.steps, args.repeat):
                rows.append(r)
                print(f"{r['family']:<16} {r['points']:>6} {r['op']:<12} {r['numpy_s']:>10.4f} {r['numba_s']:>10.4f} "
                      f"{r['speedup']:>8.1f}x {r['ns_per_point_step_numba']:>10.0f} {r['max_abs_diff']:>9.1e}")
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
