"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Times each kernel on shapes typical of the full-size presets, then a full
forward and backward pass of the FST and CNN models, once per backend.
"""

import argparse
import timeit

import numpy as np

from pcaudio import kernels
from pcaudio import tensor as T
from pcaudio.models import build_model, preset


def kernel_cases(rng):
    att = rng.normal(size=(32, 4, 16, 1025))
    mask = np.ones(att.shape[-1:], dtype=bool)[None, None, None].repeat(32, 0)
    y = kernels.softmax_forward(att)
    x = rng.normal(size=(8, 1, 10, 513))
    w = rng.normal(size=(30, 1, 10))
    gy = rng.normal(size=kernels.conv_time_forward(x, w).shape)
    return {
        "softmax_forward": lambda: kernels.softmax_forward(att, mask),
        "softmax_backward": lambda: kernels.softmax_backward(y, att),
        "conv_time_forward": lambda: kernels.conv_time_forward(x, w),
        "conv_time_backward": lambda: kernels.conv_time_backward(x, w, gy),
    }


def model_cases(rng):
    fst = build_model(preset("fst"))
    cnn = build_model(preset("cnn"))
    clouds = rng.normal(size=(8, 1025, 2))
    specs = rng.normal(size=(8, 10, 513))

    def step(model, x):
        model.zero_grad()
        T.backward(T.cross_entropy(model(x), np.zeros(len(x), dtype=int)))

    return {"fst train step (8x1025)": lambda: step(fst, clouds), "cnn train step (8x10x513)": lambda: step(cnn, specs)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is timed")
    results = {}
    start = kernels.BACKEND
    for backend in backends:
        kernels.use_backend(backend)
        rng = np.random.default_rng(0)
        for name, fn in {**kernel_cases(rng), **model_cases(rng)}.items():
            fn()
            results.setdefault(name, {})[backend] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    kernels.use_backend(start)

    print(f"{'case':32s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, row in results.items():
        line = f"{name:32s}" + "".join(f"{row[b] * 1e3:10.2f}ms" for b in backends)
        if len(backends) > 1:
            line += f"{row['python'] / row['cython']:11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
