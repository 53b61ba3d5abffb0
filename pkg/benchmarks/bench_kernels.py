"""Compare the numba and numpy limb kernels, per kernel and end to end.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--steps 50]

Per-kernel timings use operand shapes from the default parameters
(q = 10**22, N = 30): an Enc2 encryption matvec, the gadget multiplication,
digit extraction and carry normalization.  The end-to-end figure runs a
short secure-mode square simulation in a subprocess with and without
``SECFORM_DISABLE_NUMBA`` set.
"""

import argparse
import os
import subprocess
import sys
import textwrap
import timeit

import numpy as np

from secform import kernels as K
from secform.lwe import DEFAULT_PARAMS as P


def operands(rng):
    L, top = P.n_limbs, P.top_mod
    A = rng.integers(0, K.LIMB_BASE, size=(P.gadget_rows, P.N, L))
    A[..., -1] %= top
    s = A[0]
    M = rng.integers(0, K.LIMB_BASE, size=(P.gadget_rows, P.N + 1, L))
    M[..., -1] %= top
    c = M[0]
    acc = rng.integers(-(10**13), 10**13, size=(P.gadget_rows, L))
    return A, s, M, c, acc


def bench_kernels(repeat: int) -> dict:
    rng = np.random.default_rng(0)
    A, s, M, c, acc = operands(rng)
    top, D = P.top_mod, P.digits_q
    rows = {}
    for name, kern in sorted(K.BACKENDS.items()):
        dg = kern["digits"](c, D)
        cases = {
            "matvec_mod (Enc2 mask)": lambda: kern["matvec_mod"](A, s, top),
            "digit_matmul (mult)": lambda: kern["digit_matmul"](dg, M, top),
            "digits": lambda: kern["digits"](c, D),
            "normalize": lambda: kern["normalize"](acc, top),
        }
        for case, fn in cases.items():
            fn()  # compile / warm up
            best = min(timeit.repeat(fn, number=1, repeat=repeat))
            rows.setdefault(case, {})[name] = best
    return rows


SIM_SNIPPET = textwrap.dedent("""
    import time
    from secform.config import square_config
    from secform.sim import Simulator
    import secform.kernels as K
    cfg = square_config().with_overrides(t_end={t_end})
    sim = Simulator(cfg)
    st = sim.initial_state()
    st, _, _ = sim.step(st, 0.0)       # warm up
    t0 = time.perf_counter()
    for n in range({steps}):
        st, _, _ = sim.step(st, n * cfg.dt)
    print(K.BACKEND, (time.perf_counter() - t0) / {steps})
""")


def bench_end_to_end(steps: int) -> dict:
    out = {}
    code = SIM_SNIPPET.format(steps=steps, t_end=0.01 * (steps + 1))
    for disable in ("0", "1"):
        env = dict(os.environ, SECFORM_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        backend, per_step = res.stdout.split()
        out[backend] = float(per_step)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=50)
    args = ap.parse_args(argv)

    rows = bench_kernels(args.repeat)
    names = sorted(K.BACKENDS)
    print(f"{'kernel':28s}" + "".join(f"{n:>12s}" for n in names) + "     speedup")
    for case, res in rows.items():
        cells = "".join(f"{res[n] * 1e3:10.3f}ms" for n in names)
        speed = res["numpy"] / res["numba"] if "numba" in res else float("nan")
        print(f"{case:28s}{cells}{speed:11.1f}x")

    e2e = bench_end_to_end(args.steps)
    print()
    print("secure-mode control step (5 edges, 4 agents):")
    for name, t in sorted(e2e.items()):
        print(f"  {name:8s} {t * 1e3:8.2f} ms/step  -> {3000 * t:6.1f} s for the 3000-step run")


if __name__ == "__main__":
    main()
