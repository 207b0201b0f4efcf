#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three hot kernels (forward stepping, guided stepping with weight
accumulation, Dynkin accumulation) on pre-drawn increments, so random-number
generation is excluded and the comparison isolates the stepping loops. The
backend is fixed at import time by SPDEBRIDGE_DISABLE_NUMBA, so each
measurement runs in a subprocess; numba JIT compilation is warmed up on a
small batch before measuring.

Usage: python benchmarks/bench_kernels.py [--n-paths N] [--n-steps K]
"""

import argparse
import json
import os
import subprocess
import sys
import textwrap

WORKLOAD = textwrap.dedent(
    """
    import json, time
    import numpy as np
    import spdebridge as sb
    from spdebridge import _kernels
    from spdebridge.forward import step_coefficients
    from spdebridge.spectral import covariance_qt_diag, sine_basis

    n_paths = {n_paths}
    n_steps = {n_steps}
    model = sb.dirichlet_model(4)
    J = 4
    kind, alpha = _kernels.KIND_SINE, 0.5

    gen = np.random.default_rng(0)
    Z = gen.standard_normal((n_paths, n_steps, J))
    x0 = np.zeros((n_paths, J))
    ugrid = sb.uniform_grid(1.0, n_steps)
    ggrid = sb.geometric_grid(1.0, n_steps)
    B, C = sine_basis(model, 16)

    snap = np.full(n_steps + 1, -1, dtype=np.int64)
    snap[[n_steps // 2, n_steps]] = [0, 1]
    wslot = np.full(n_steps + 1, -1, dtype=np.int64)
    wslot[int(np.searchsorted(ggrid.nodes, 0.9)) - 1] = 0

    Eu, Pu, Su = step_coefficients(model, ugrid.steps)
    Eg, Pg, Sg = step_coefficients(model, ggrid.steps)
    r = 1.0 - ggrid.nodes[:-1]
    den = covariance_qt_diag(model, r)
    Bg = np.exp(model.lam * r[:, None])
    Wg = Bg / den
    Ag = model.q * Wg
    y = np.broadcast_to(np.array([0.5, -0.3, 0.1, 0.0]), (n_paths, J)).copy()

    a = np.array([0.9, 0.2, 0.1, 0.05])
    lam_a = model.lam * a
    qaa = float(np.sum(model.q * a * a))

    def fwd(z, x):
        return _kernels.forward_snap(x, z, Eu, Pu, Su, B, C, kind, alpha, snap, 2)

    def gdd(z, x):
        return _kernels.guided(
            x, z, Eg, Pg, Sg, B, C, kind, alpha, Ag, Bg, Wg, y[: z.shape[0]],
            ggrid.steps, True, snap, 2, wslot, 1, False,
        )

    def dyn(z, x):
        return _kernels.dynkin_snap(
            x, z, Eu, Pu, Su, B, C, kind, alpha, ugrid.nodes, ugrid.steps,
            a, 0.3, True, lam_a, qaa, snap, 2,
        )

    def bench(fn):
        fn(Z[:64], x0[:64])  # JIT warm-up / cache priming
        t0 = time.perf_counter()
        fn(Z, x0)
        return time.perf_counter() - t0

    results = {{
        "backend": sb.BACKEND,
        "forward": bench(fwd),
        "guided": bench(gdd),
        "dynkin": bench(dyn),
    }}
    print(json.dumps(results))
    """
)


def run_backend(disable_numba: bool, n_paths: int, n_steps: int) -> dict:
    env = dict(os.environ, SPDEBRIDGE_DISABLE_NUMBA="1" if disable_numba else "")
    script = WORKLOAD.format(n_paths=n_paths, n_steps=n_steps)
    out = subprocess.run(
        [sys.executable, "-c", script], env=env, capture_output=True, text=True,
        check=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-paths", type=int, default=50_000)
    parser.add_argument("--n-steps", type=int, default=512)
    args = parser.parse_args()
    print(f"workload: {args.n_paths} paths x {args.n_steps} steps x 4 modes, "
          "sine nonlinearity, RNG excluded")
    rows = [run_backend(False, args.n_paths, args.n_steps),
            run_backend(True, args.n_paths, args.n_steps)]
    kernels = ["forward", "guided", "dynkin"]
    header = f"{'kernel':<10}" + "".join(f"{r['backend']:>12}" for r in rows) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for k in kernels:
        speed = rows[1][k] / rows[0][k]
        print(f"{k:<10}" + "".join(f"{r[k]:>11.3f}s" for r in rows) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
