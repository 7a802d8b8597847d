"""Compare the compiled legged kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--batch 24] [--repeat 200]
"""

import argparse
import timeit

import numpy as np

from acmpc.harness import reference as refgen
from acmpc.legged import _kernels_py
from acmpc.legged.params import LeggedParams


def inputs(batch, seed=0):
    p = LeggedParams()
    rng = np.random.default_rng(seed)
    x = refgen.standing_state(p)[None] + 0.1 * rng.normal(size=(batch, 36))
    u = 10.0 * rng.normal(size=(batch, 24))
    e = 0.3 * rng.normal(size=(batch, 36))
    return p, x, u, e


def time_backend(mod, p, x, u, e, repeat):
    args = (p.m, p.inertia, p.g, p.dt)
    out = {}
    for name, call in (
        ("srb_step", lambda: mod.srb_step(x, u, *args, False)),
        ("srb_step+jac", lambda: mod.srb_step(x, u, *args, True)),
        ("slack_rows+jac", lambda: mod.slack_rows(x, u, e, p)),
    ):
        call()
        out[name] = min(timeit.repeat(call, number=repeat, repeat=3)) / repeat
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=24, help="stages evaluated per call")
    ap.add_argument("--repeat", type=int, default=200)
    a = ap.parse_args(argv)
    p, x, u, e = inputs(a.batch)
    backends = {"python": _kernels_py}
    try:
        from acmpc.legged import _kernels
        backends["compiled"] = _kernels
    except ImportError:
        print("compiled kernels not built; timing the fallback only")
    res = {k: time_backend(m, p, x, u, e, a.repeat) for k, m in backends.items()}
    print(f"batch={a.batch}  time per call [us]")
    print(f"{'kernel':<16}" + "".join(f"{k:>12}" for k in res) + ("     speedup" if len(res) == 2 else ""))
    for name in res["python"]:
        row = f"{name:<16}" + "".join(f"{r[name] * 1e6:12.1f}" for r in res.values())
        if "compiled" in res:
            row += f"{res['python'][name] / res['compiled'][name]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
