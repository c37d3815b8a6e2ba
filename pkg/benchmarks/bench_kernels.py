"""Compare the compiled kernels against the numpy fallback.

Times each kernel on a desk-scale tensor, then one full training step
(forward + backward + Adam) of the default network with each backend
swapped in.

    python3 benchmarks/bench_kernels.py [--size 48] [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from pathfl import kernels
from pathfl.optim import AdamState, adam_step
from pathfl.segnet import SegNet, SegNetConfig


def best_ms(fn, repeat):
    fn()  # warm-up
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(size, rng):
    x = rng.standard_normal((4, 16, size, size))
    w = rng.standard_normal((16, 16, 3, 3))
    b = rng.standard_normal(16)
    g = rng.standard_normal((4, 16, size, size))
    half = rng.standard_normal((4, 16, size // 2, size // 2))
    return x, w, b, g, half


def bench_kernels(size, repeat):
    rng = np.random.default_rng(0)
    x, w, b, g, half = kernel_cases(size, rng)
    rows = []
    for name in ("python", "cython"):
        try:
            k = kernels.get_backend(name)
        except ImportError as exc:
            print(f"{name}: unavailable ({exc})")
            continue
        _, xf = k.conv3x3_forward(x, w, b)
        _, idx = k.maxpool2_forward(x)
        rows.append((name, {
            "conv3x3 fwd": best_ms(lambda: k.conv3x3_forward(x, w, b), repeat),
            "conv3x3 bwd": best_ms(lambda: k.conv3x3_backward(g, xf, w), repeat),
            "maxpool fwd": best_ms(lambda: k.maxpool2_forward(x), repeat),
            "maxpool bwd": best_ms(lambda: k.maxpool2_backward(half, idx), repeat),
            "upsample fwd": best_ms(lambda: k.upsample2_forward(half), repeat),
            "upsample bwd": best_ms(lambda: k.upsample2_backward(x), repeat),
        }))
    return rows


def bench_step(size, repeat):
    rng = np.random.default_rng(1)
    model = SegNet(SegNetConfig())
    images = rng.random((4, 3, size, size))
    labels = (rng.random((4, 1, size, size)) > 0.5).astype(float)
    saved = {n: getattr(kernels, n) for n in kernels.KERNEL_NAMES}
    out = {}
    try:
        for name in ("python", "cython"):
            try:
                k = kernels.get_backend(name)
            except ImportError:
                continue
            for n in kernels.KERNEL_NAMES:
                setattr(kernels, n, getattr(k, n))
            params = model.init_params(np.random.default_rng(2))
            state = AdamState()

            def step():
                _, grads, _ = model.loss_and_grads(params, images, labels)
                adam_step(params, grads, state)

            out[name] = best_ms(step, max(3, repeat // 4))
    finally:
        for n, fn in saved.items():
            setattr(kernels, n, fn)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=48, help="image side (divisible by 4)")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rows = bench_kernels(args.size, args.repeat)
    names = list(rows[0][1])
    print(f"kernels on 4x16x{args.size}x{args.size} (best of {args.repeat}, ms)")
    print(f"{'kernel':<14}" + "".join(f"{b:>10}" for b, _ in rows) + ("   speedup" if len(rows) == 2 else ""))
    for n in names:
        vals = [r[n] for _, r in rows]
        line = f"{n:<14}" + "".join(f"{v:>10.3f}" for v in vals)
        if len(vals) == 2:
            line += f"{vals[0] / vals[1]:>9.1f}x"
        print(line)

    step = bench_step(args.size, args.repeat)
    print(f"\ntraining step, batch 4 at {args.size}x{args.size} (ms)")
    for name, ms in step.items():
        print(f"{name:<14}{ms:>10.1f}")
    if len(step) == 2:
        print(f"{'speedup':<14}{step['python'] / step['cython']:>9.1f}x")


if __name__ == "__main__":
    main()
