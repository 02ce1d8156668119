#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the NumPy fallback.

Covers the three hot paths: im2col/col2im (convolution plumbing), the
ray-marched sphere occlusion (transport build), and the box occlusion
(dataset ground gather), plus an end-to-end transport build. Run after
`pip install -e . --no-build-isolation` so the extension exists.
"""

import argparse
import time

import numpy as np

from panohdr import kernels
from panohdr.transport import SceneSpec, build_transport


def timeit(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_backend(impl, rng):
    out = {}
    x = rng.random((32, 64, 32, 64), dtype=np.float64).astype(np.float32)
    out["im2col 32x64x32x64 k5"] = timeit(lambda: impl.im2col(x, 5, 5, 2, 2))
    cols = impl.im2col(x, 5, 5, 2, 2)
    out["col2im (adjoint)"] = timeit(lambda: impl.col2im(cols, 32, 64, 32, 64, 5, 5, 2, 2))

    scene = SceneSpec()
    origins = rng.uniform(-1.5, 1.5, (512, 3))
    origins[:, 1] = 0.0
    dirs = rng.standard_normal((4096, 3))
    dirs[:, 1] = np.abs(dirs[:, 1])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    sd = scene.spike_directions()
    out["spiky occlusion 512x4096"] = timeit(
        lambda: impl.spiky_occlusion(
            origins, dirs, scene.center, scene.sphere_radius, sd,
            scene.spike_amp, scene.spike_sharpness, scene.bound_radius,
            1e-5, scene.sphere_radius / 80.0,
        ),
        repeats=1,
    )

    boxes = np.array([[2.0, 4.0, 1.0, 3.0, 3.0], [-5.0, -3.0, -2.0, 1.0, 2.0],
                      [0.5, 2.5, -6.0, -4.0, 4.0]])
    out["boxes occlusion 4096x4096"] = timeit(
        lambda: impl.boxes_occlusion(rng.uniform(-8, 8, (4096, 3)), dirs, boxes), repeats=1
    )
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--full-transport", action="store_true",
                        help="also time the full 4096x4096 transport build per backend")
    args = parser.parse_args()

    backends = kernels.backends()
    print(f"available backends: {', '.join(backends)}  (active: {kernels.BACKEND})")
    results = {}
    for name, impl in backends.items():
        rng = np.random.default_rng(0)
        results[name] = bench_backend(impl, rng)

    keys = list(next(iter(results.values())))
    width = max(len(k) for k in keys)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n:>12}" for n in results)
    print(header)
    print("-" * len(header))
    for k in keys:
        row = f"{k:<{width}}  " + "  ".join(f"{results[n][k] * 1e3:>10.1f}ms" for n in results)
        if len(results) == 2 and "fallback" in results and "native" in results:
            row += f"  x{results['fallback'][k] / results['native'][k]:.1f}"
        print(row)

    if args.full_transport:
        # fresh subprocess per backend so the import-time selection applies
        import os
        import subprocess
        import sys

        snippet = (
            "import time; t0=time.perf_counter(); "
            "from panohdr.transport import SceneSpec, build_transport; "
            "from panohdr import kernels; "
            "build_transport(SceneSpec(), 64, 128); "
            "print(f'full transport build [{kernels.BACKEND}]: "
            "{time.perf_counter()-t0:.1f}s')"
        )
        for name in backends:
            env = dict(os.environ)
            if name == "fallback":
                env["PANOHDR_NO_NATIVE"] = "1"
            else:
                env.pop("PANOHDR_NO_NATIVE", None)
            subprocess.run([sys.executable, "-c", snippet], env=env, check=True)


if __name__ == "__main__":
    main()
