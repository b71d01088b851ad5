"""Benchmark the convolution kernel backends on the shapes training uses.

Run:  python benchmarks/bench_kernels.py [--batch 16] [--repeats 5]

Times conv2d forward, input-gradient, and kernel-gradient for every
encoder/decoder layer shape of the default desk-scale model, for each
available backend (NumPy im2col+BLAS and, when built, the compiled core),
then prints a table with per-shape timings and the end-to-end sums. The
import-time `auto` selection prefers NumPy because it wins on typical
desktop CPUs; use this script to check your machine and set
MONOSURF_KERNEL_BACKEND if the compiled core is faster there.
"""

import argparse
import time

import numpy as np

from monosurf._backend import available_backends, get_backend

# (label, x shape sans batch, kernel shape, stride, pad) of the desk model
DESK_LAYERS = [
    ("enc0.pre", (3, 64, 64), (16, 3, 3, 3), 1, 1),
    ("enc0.down", (16, 64, 64), (16, 16, 4, 4), 2, 1),
    ("enc1.pre", (16, 32, 32), (32, 16, 3, 3), 1, 1),
    ("enc1.down", (32, 32, 32), (32, 32, 4, 4), 2, 1),
    ("enc2.pre", (32, 16, 16), (64, 32, 3, 3), 1, 1),
    ("enc2.down", (64, 16, 16), (64, 64, 4, 4), 2, 1),
    ("head", (16, 64, 64), (3, 16, 3, 3), 1, 1),
]


def time_call(fn, *args, repeats=5):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench(batch, repeats, dtype):
    rng = np.random.default_rng(0)
    names = available_backends()
    totals = {name: {"fwd": 0.0, "gin": 0.0, "gk": 0.0} for name in names}
    print(f"dtype={np.dtype(dtype).name}  batch={batch}  repeats={repeats}")
    header = f"{'layer':<10}" + "".join(
        f"{name + ' ' + kind:>15}" for name in names for kind in ("fwd", "gin", "gk")
    )
    print(header)
    for label, xs, ks, stride, pad in DESK_LAYERS:
        x = rng.standard_normal((batch, *xs)).astype(dtype)
        k = rng.standard_normal(ks).astype(dtype)
        ref = get_backend(names[0])
        gy = ref.conv2d_forward(x, k, stride, pad)
        row = f"{label:<10}"
        for name in names:
            mod = get_backend(name)
            t_fwd = time_call(mod.conv2d_forward, x, k, stride, pad, repeats=repeats)
            t_gin = time_call(
                mod.conv2d_grad_input, gy, k, stride, pad, xs[1], xs[2],
                repeats=repeats,
            )
            t_gk = time_call(
                mod.conv2d_grad_kernel, gy, x, stride, pad, ks[2], ks[3],
                repeats=repeats,
            )
            totals[name]["fwd"] += t_fwd
            totals[name]["gin"] += t_gin
            totals[name]["gk"] += t_gk
            for t in (t_fwd, t_gin, t_gk):
                row += f"{t * 1e3:>13.2f}ms"
        print(row)
    print()
    for name in names:
        t = totals[name]
        total = t["fwd"] + t["gin"] + t["gk"]
        print(
            f"{name:>8}: forward {t['fwd']*1e3:7.1f} ms   grad_input "
            f"{t['gin']*1e3:7.1f} ms   grad_kernel {t['gk']*1e3:7.1f} ms   "
            f"total {total*1e3:7.1f} ms"
        )
    if len(names) > 1:
        base = sum(totals[names[0]].values())
        for name in names[1:]:
            ratio = sum(totals[name].values()) / base
            faster = names[0] if ratio > 1 else name
            print(f"{names[0]} vs {name}: {faster} is {max(ratio, 1/ratio):.2f}x faster overall")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = parser.parse_args()
    bench(args.batch, args.repeats, np.float32 if args.dtype == "float32" else np.float64)


if __name__ == "__main__":
    main()
